#include "ltq/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "ltq/kernels.hpp"

namespace ltq {

using nlohmann::json;

std::vector<Window> slide_windows(std::size_t token_count, std::size_t budget) {
    if (budget == 0) throw ValidationError("window budget must be >= 1");
    std::vector<Window> windows;
    if (token_count <= budget) {
        windows.push_back(Window{0, token_count, 0});
        return windows;
    }
    std::size_t overlap = std::min<std::size_t>(100, budget / 4);
    std::size_t stride = budget - overlap;
    std::size_t begin = 0;
    std::size_t index = 0;
    while (begin < token_count) {
        std::size_t end = std::min(begin + budget, token_count);
        windows.push_back(Window{begin, end, index++});
        if (end == token_count) break;
        begin += stride;
    }
    return windows;
}

std::vector<float> cell_pool(std::span<const float> token_embeds, std::size_t dim,
                             const std::vector<std::pair<std::size_t, std::size_t>>& cell_token_ranges) {
    std::vector<float> out(cell_token_ranges.size() * dim, 0.0f);
    std::vector<double> acc(dim);
    for (std::size_t c = 0; c < cell_token_ranges.size(); ++c) {
        auto [b, e] = cell_token_ranges[c];
        if (b >= e) throw ValidationError("empty cell segment in cell_pool");
        if (e * dim > token_embeds.size()) throw ValidationError("cell range out of bounds");
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t t = b; t < e; ++t) {
            kernels::add_into(acc.data(), token_embeds.data() + t * dim, dim);
        }
        const double inv = 1.0 / static_cast<double>(e - b);
        for (std::size_t d = 0; d < dim; ++d) {
            out[c * dim + d] = static_cast<float>(acc[d] * inv);
        }
    }
    return out;
}

std::vector<float> attribute_pool(const EncoderOutput& out, std::size_t column) {
    if (out.rows.empty()) throw ValidationError("attribute_pool over empty group");
    const std::size_t dim = static_cast<std::size_t>(out.dim);
    std::vector<double> acc(dim, 0.0);
    for (const auto& row : out.rows) {
        if (column >= row.m) throw ValidationError("attribute_pool column out of range");
        kernels::add_into(acc.data(), row.cells.data() + column * dim, dim);
    }
    std::vector<float> pooled(dim);
    const double inv = 1.0 / static_cast<double>(out.rows.size());
    for (std::size_t d = 0; d < dim; ++d) pooled[d] = static_cast<float>(acc[d] * inv);
    return pooled;
}

VerticalAttentionWeights VerticalAttentionWeights::identity(int dim, int heads) {
    VerticalAttentionWeights w;
    w.dim = dim;
    w.heads = heads;
    w.layers = 1;
    const std::size_t n = static_cast<std::size_t>(dim);
    for (auto* m : {&w.w_q, &w.w_k, &w.w_v, &w.w_o}) {
        m->assign(n * n, 0.0f);
        for (std::size_t i = 0; i < n; ++i) (*m)[i * n + i] = 1.0f;
    }
    return w;
}

void VerticalAttentionWeights::validate() const {
    const std::size_t n = static_cast<std::size_t>(dim);
    if (dim <= 0 || heads <= 0 || layers <= 0) {
        throw ValidationError("vertical attention weights need positive dim/heads/layers");
    }
    if (dim % heads != 0) throw ValidationError("vertical attention dim must divide by heads");
    for (const auto* m : {&w_q, &w_k, &w_v, &w_o}) {
        if (m->size() != n * n) throw ValidationError("vertical attention matrix shape mismatch");
    }
}

std::vector<float> vertical_attention(std::span<const float> cells, std::size_t k, std::size_t m,
                                      const VerticalAttentionWeights& weights) {
    weights.validate();
    const std::size_t dim = static_cast<std::size_t>(weights.dim);
    if (cells.size() != k * m * dim) throw ValidationError("vertical attention shape mismatch");
    if (k == 0) return {};

    std::vector<float> input(cells.begin(), cells.end());
    std::vector<float> output(cells.size());
    const std::size_t heads = static_cast<std::size_t>(weights.heads);
    const std::size_t dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<float> q(k * dim), kk(k * dim), v(k * dim), mixed(dim);
    std::vector<double> scores(k), alpha(k), accum(dh);

    for (int layer = 0; layer < weights.layers; ++layer) {
        for (std::size_t col = 0; col < m; ++col) {
            for (std::size_t i = 0; i < k; ++i) {
                const float* c = input.data() + (i * m + col) * dim;
                kernels::matvec(weights.w_q.data(), c, q.data() + i * dim, dim, dim);
                kernels::matvec(weights.w_k.data(), c, kk.data() + i * dim, dim, dim);
                kernels::matvec(weights.w_v.data(), c, v.data() + i * dim, dim, dim);
            }
            for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const float* qi = q.data() + i * dim + h * dh;
                    double max_score = -1e300;
                    for (std::size_t j = 0; j < k; ++j) {
                        scores[j] = kernels::dot(qi, kk.data() + j * dim + h * dh, dh) * scale;
                        max_score = std::max(max_score, scores[j]);
                    }
                    double denom = 0.0;
                    for (std::size_t j = 0; j < k; ++j) {
                        alpha[j] = std::exp(scores[j] - max_score);
                        denom += alpha[j];
                    }
                    std::fill(accum.begin(), accum.end(), 0.0);
                    for (std::size_t j = 0; j < k; ++j) {
                        const double w = alpha[j] / denom;
                        const float* vj = v.data() + j * dim + h * dh;
                        for (std::size_t d = 0; d < dh; ++d) accum[d] += w * vj[d];
                    }
                    for (std::size_t d = 0; d < dh; ++d) {
                        mixed[h * dh + d] = static_cast<float>(accum[d]);
                    }
                }
                kernels::matvec(weights.w_o.data(), mixed.data(),
                                output.data() + (i * m + col) * dim, dim, dim);
            }
        }
        if (layer + 1 < weights.layers) input = output;
    }
    return output;
}

void Encoder::check_budget(std::span<const RowContext> group) const {
    for (const auto& row : group) {
        if (row.token_budget_used() > context_length()) {
            throw ExecError("context overflow: row needs " +
                            std::to_string(row.token_budget_used()) + " tokens, limit is " +
                            std::to_string(context_length()) + "; window the document first");
        }
    }
}

namespace {

void set_basis(std::vector<float>& vec, int coord, float value = 1.0f) {
    if (coord >= 0 && static_cast<std::size_t>(coord) < vec.size()) vec[coord] = value;
}

}  // namespace

OracleEncoder::OracleEncoder(const Catalog& catalog,
                             std::vector<const CollectionAnnotation*> annotations)
    : concepts_(ConceptTable::build(annotations)) {
    dim_ = std::max(2, 2 * concepts_.count());
    for (const auto* ann : annotations) {
        const LatentTableSchema& schema = catalog.latent(ann->latent_table);
        const TextCollection& collection = catalog.collection(schema.collection);
        check_annotation(*ann, collection);
        for (const auto& doc_ann : ann->documents) {
            const Document* doc = collection.find(doc_ann.doc_path);
            auto [it, inserted] = docs_.try_emplace(doc_ann.doc_path);
            DocInfo& info = it->second;
            if (inserted) {
                info.marks.assign(doc->tokens.size(), TokenMark{});
                info.key_attr = schema.document_level_key.value_or("");
            }
            for (const auto& gold_row : doc_ann.rows) {
                RowInfo row_info;
                for (const auto& [attr, cell] : gold_row.cells) {
                    int concept_id = concepts_.concept_of(attr, cell.alternatives.front());
                    auto& ids = row_info.concepts[attr];
                    if (std::find(ids.begin(), ids.end(), concept_id) == ids.end()) {
                        ids.push_back(concept_id);
                    }
                    for (const auto& span : cell.spans) {
                        for (std::size_t t = span.token_start; t < span.token_end; ++t) {
                            if (info.marks[t].concept_id < 0) {
                                info.marks[t] = TokenMark{concept_id, t == span.token_start};
                            }
                        }
                    }
                    if (!info.key_attr.empty() && attr == info.key_attr) {
                        for (const auto& alt : cell.alternatives) {
                            row_info.key_alternatives.push_back(normalize_value(alt));
                        }
                    }
                }
                if (gold_row.key) {
                    row_info.key_alternatives.push_back(normalize_value(*gold_row.key));
                }
                info.rows.push_back(std::move(row_info));
            }
        }
    }
}

const OracleEncoder::DocInfo* OracleEncoder::doc_info(std::string_view path) const {
    auto it = docs_.find(path);
    return it == docs_.end() ? nullptr : &it->second;
}

void OracleEncoder::embed_row(const RowContext& ctx, RowEmbeddings& out) const {
    const std::size_t dim = static_cast<std::size_t>(dim_);
    out.n = ctx.doc ? ctx.window.size() : 0;
    out.m = ctx.table_segment.segments.size();
    out.ve.assign(out.n * dim, 0.0f);
    out.dd.assign(out.n * dim, 0.0f);
    out.cells.assign(out.m * dim, 0.0f);

    const DocInfo* info = ctx.doc ? doc_info(ctx.doc->path) : nullptr;
    if (info != nullptr) {
        for (std::size_t t = 0; t < out.n; ++t) {
            const TokenMark& mark = info->marks[ctx.window.begin + t];
            if (mark.concept_id < 0) continue;
            out.ve[t * dim + 2 * mark.concept_id + (mark.begin ? 0 : 1)] = 1.0f;
            out.dd[t * dim + 2 * mark.concept_id] = 1.0f;
        }

        // When the context carries a value for the document-level key, only
        // the matching gold rows feed the masked cells.
        const RowInfo* target = nullptr;
        bool restrict_rows = false;
        if (!info->key_attr.empty()) {
            for (const auto& seg : ctx.table_segment.segments) {
                if (!seg.masked() && seg.attr_name == info->key_attr) {
                    restrict_rows = true;
                    std::string wanted = normalize_value(*seg.value);
                    for (const auto& row : info->rows) {
                        if (std::find(row.key_alternatives.begin(), row.key_alternatives.end(),
                                      wanted) != row.key_alternatives.end()) {
                            target = &row;
                            break;
                        }
                    }
                    break;
                }
            }
        }

        for (std::size_t j = 0; j < out.m; ++j) {
            const auto& seg = ctx.table_segment.segments[j];
            if (!seg.masked()) continue;
            auto add_row_concepts = [&](const RowInfo& row) {
                auto it = row.concepts.find(seg.attr_name);
                if (it == row.concepts.end()) return;
                for (int c : it->second) {
                    if (c < 0) continue;
                    out.cells[j * dim + 2 * c] = 1.0f;
                    out.cells[j * dim + 2 * c + 1] = 1.0f;
                }
            };
            if (restrict_rows) {
                if (target != nullptr) add_row_concepts(*target);
            } else {
                for (const auto& row : info->rows) add_row_concepts(row);
            }
        }
    }
}

EncoderOutput OracleEncoder::encode(std::span<const RowContext> group) const {
    check_budget(group);
    EncoderOutput out;
    out.dim = dim_;
    out.rows.resize(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
        embed_row(group[i], out.rows[i]);
    }
    return out;
}

std::optional<std::vector<float>> OracleEncoder::lookup_value_embedding(
    std::string_view attr, std::string_view value) const {
    std::vector<float> vec(static_cast<std::size_t>(dim_), 0.0f);
    int concept_id = concepts_.concept_of(attr, value);
    if (concept_id >= 0) set_basis(vec, 2 * concept_id);
    return vec;
}

std::vector<float> HashEncoder::hash_vec(std::string_view s, std::uint64_t salt) const {
    std::vector<float> vec(static_cast<std::size_t>(dim_));
    std::uint64_t h = fnv1a(s, 0x9e3779b97f4a7c15ULL ^ salt);
    double norm_sq = 0.0;
    for (int d = 0; d < dim_; ++d) {
        h = fnv1a(&d, sizeof(d), h);
        // top 53 bits -> [-1, 1), portable across platforms
        double u = static_cast<double>(h >> 11) * 0x1p-53;
        vec[d] = static_cast<float>(2.0 * u - 1.0);
        norm_sq += vec[d] * vec[d];
    }
    const float inv = norm_sq > 0 ? static_cast<float>(1.0 / std::sqrt(norm_sq)) : 0.0f;
    for (auto& x : vec) x *= inv;
    return vec;
}

EncoderOutput HashEncoder::encode(std::span<const RowContext> group) const {
    check_budget(group);
    const std::size_t dim = static_cast<std::size_t>(dim_);
    EncoderOutput out;
    out.dim = dim_;
    out.rows.resize(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
        const RowContext& ctx = group[i];
        RowEmbeddings& row = out.rows[i];
        row.n = ctx.doc ? ctx.window.size() : 0;
        row.m = ctx.table_segment.segments.size();
        row.ve.resize(row.n * dim);
        row.dd.resize(row.n * dim);
        for (std::size_t t = 0; t < row.n; ++t) {
            const auto& surface = ctx.doc->tokens[ctx.window.begin + t].surface;
            auto ve = hash_vec(surface, 1);
            auto dd = hash_vec(surface, 2);
            std::copy(ve.begin(), ve.end(), row.ve.begin() + t * dim);
            std::copy(dd.begin(), dd.end(), row.dd.begin() + t * dim);
        }

        // Linearized segments become pseudo-token embeddings that are pooled
        // per cell, same as the trained pipeline would.
        std::vector<float> seg_tokens;
        std::vector<std::pair<std::size_t, std::size_t>> ranges;
        std::size_t cursor = 0;
        for (const auto& seg : ctx.table_segment.segments) {
            std::vector<std::string> pieces;
            if (seg.name_masked) {
                pieces.push_back("[MASK]");
            } else {
                for (const auto& tok : tokenize(seg.attr_name)) pieces.push_back(tok.surface);
            }
            pieces.push_back(to_string(seg.attr_type));
            if (seg.value) {
                for (const auto& tok : tokenize(*seg.value)) pieces.push_back(tok.surface);
            } else {
                pieces.push_back("[MASK]");
            }
            for (const auto& p : pieces) {
                auto v = hash_vec(p, 3);
                seg_tokens.insert(seg_tokens.end(), v.begin(), v.end());
            }
            ranges.emplace_back(cursor, cursor + pieces.size());
            cursor += pieces.size();
        }
        row.cells = cell_pool(seg_tokens, dim, ranges);
    }

    if (group.size() > 1 && !out.rows.empty()) {
        const std::size_t m = out.rows.front().m;
        bool uniform = true;
        for (const auto& r : out.rows) uniform = uniform && r.m == m;
        if (uniform && m > 0) {
            std::vector<float> stacked(group.size() * m * dim);
            for (std::size_t i = 0; i < group.size(); ++i) {
                std::copy(out.rows[i].cells.begin(), out.rows[i].cells.end(),
                          stacked.begin() + i * m * dim);
            }
            auto mixed = vertical_attention(stacked, group.size(), m, vertical_);
            for (std::size_t i = 0; i < group.size(); ++i) {
                std::copy(mixed.begin() + i * m * dim, mixed.begin() + (i + 1) * m * dim,
                          out.rows[i].cells.begin());
            }
        }
    }
    return out;
}

namespace {

EmbeddingStore::Key group_key(std::span<const RowContext> group) {
    EmbeddingStore::Key key;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& row : group) {
        if (row.doc != nullptr && key.doc.empty()) {
            key.doc = row.doc->path;
            key.win_begin = row.window.begin;
            key.win_end = row.window.end;
        }
        h = fnv1a(row.doc ? row.doc->path : "", h);
        h = fnv1a(&row.window.begin, sizeof(row.window.begin), h);
        h = fnv1a(&row.window.end, sizeof(row.window.end), h);
        std::uint64_t fp = row.table_segment.fingerprint();
        h = fnv1a(&fp, sizeof(fp), h);
    }
    key.ctx = h;
    return key;
}

std::string value_key(std::string_view attr, std::string_view value) {
    std::string k(attr);
    k.push_back('\x1f');
    k += normalize_value(value);
    return k;
}

void append_row(std::vector<float>& data, const RowEmbeddings& row) {
    data.insert(data.end(), row.ve.begin(), row.ve.end());
    data.insert(data.end(), row.dd.begin(), row.dd.end());
    data.insert(data.end(), row.cells.begin(), row.cells.end());
}

}  // namespace

void EmbeddingStore::save(const std::string& base_path) const {
    json manifest;
    manifest["dim"] = dim;
    manifest["groups"] = json::array();
    std::vector<float> data;
    for (const auto& [key, output] : groups) {
        json jg;
        jg["doc"] = key.doc;
        jg["win_begin"] = key.win_begin;
        jg["win_end"] = key.win_end;
        jg["ctx"] = key.ctx;
        jg["offset"] = data.size();
        jg["rows"] = json::array();
        for (const auto& row : output.rows) {
            jg["rows"].push_back(json{{"n", row.n}, {"m", row.m}});
            append_row(data, row);
        }
        manifest["groups"].push_back(std::move(jg));
    }
    manifest["values"] = json::array();
    for (const auto& [key, vec] : values) {
        auto sep = key.find('\x1f');
        json jv;
        jv["attr"] = key.substr(0, sep);
        jv["value"] = key.substr(sep + 1);
        jv["offset"] = data.size();
        data.insert(data.end(), vec.begin(), vec.end());
        manifest["values"].push_back(std::move(jv));
    }
    write_file(base_path + ".json", manifest.dump(2));

    std::string blob;
    std::uint32_t header[3] = {static_cast<std::uint32_t>(dim),
                               static_cast<std::uint32_t>(groups.size()),
                               static_cast<std::uint32_t>(values.size())};
    blob.append(reinterpret_cast<const char*>(header), sizeof(header));
    blob.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    write_file(base_path + ".bin", blob);
}

EmbeddingStore EmbeddingStore::load(const std::string& base_path) {
    json manifest = json::parse(read_file(base_path + ".json"));
    std::string blob = read_file(base_path + ".bin");
    if (blob.size() < 3 * sizeof(std::uint32_t)) {
        throw ValidationError("embedding file too short: " + base_path + ".bin");
    }
    std::uint32_t header[3];
    std::memcpy(header, blob.data(), sizeof(header));
    EmbeddingStore store;
    store.dim = static_cast<int>(header[0]);
    if (store.dim != manifest.at("dim").get<int>()) {
        throw ValidationError("embedding manifest and binary disagree on dim");
    }
    const float* data = reinterpret_cast<const float*>(blob.data() + sizeof(header));
    const std::size_t float_count = (blob.size() - sizeof(header)) / sizeof(float);
    const std::size_t dim = static_cast<std::size_t>(store.dim);

    auto read_block = [&](std::size_t offset, std::size_t count) {
        if (offset + count > float_count) {
            throw ValidationError("embedding block out of range in " + base_path + ".bin");
        }
        return std::vector<float>(data + offset, data + offset + count);
    };

    for (const auto& jg : manifest.at("groups")) {
        Key key;
        key.doc = jg.at("doc").get<std::string>();
        key.win_begin = jg.at("win_begin").get<std::size_t>();
        key.win_end = jg.at("win_end").get<std::size_t>();
        key.ctx = jg.at("ctx").get<std::uint64_t>();
        EncoderOutput output;
        output.dim = store.dim;
        std::size_t offset = jg.at("offset").get<std::size_t>();
        for (const auto& jr : jg.at("rows")) {
            RowEmbeddings row;
            row.n = jr.at("n").get<std::size_t>();
            row.m = jr.at("m").get<std::size_t>();
            row.ve = read_block(offset, row.n * dim);
            offset += row.n * dim;
            row.dd = read_block(offset, row.n * dim);
            offset += row.n * dim;
            row.cells = read_block(offset, row.m * dim);
            offset += row.m * dim;
            output.rows.push_back(std::move(row));
        }
        store.groups.emplace(std::move(key), std::move(output));
    }
    for (const auto& jv : manifest.at("values")) {
        store.values.emplace(
            value_key(jv.at("attr").get<std::string>(), jv.at("value").get<std::string>()),
            read_block(jv.at("offset").get<std::size_t>(), dim));
    }
    return store;
}

EncoderOutput RecordingEncoder::encode(std::span<const RowContext> group) const {
    EncoderOutput out = inner_.encode(group);
    store_.groups[group_key(group)] = out;
    return out;
}

std::optional<std::vector<float>> RecordingEncoder::lookup_value_embedding(
    std::string_view attr, std::string_view value) const {
    auto vec = inner_.lookup_value_embedding(attr, value);
    if (vec) store_.values[value_key(attr, value)] = *vec;
    return vec;
}

EncoderOutput ReplayEncoder::encode(std::span<const RowContext> group) const {
    auto it = store_.groups.find(group_key(group));
    if (it == store_.groups.end()) {
        throw ExecError("replay encoder has no embeddings for this input group");
    }
    return it->second;
}

std::optional<std::vector<float>> ReplayEncoder::lookup_value_embedding(
    std::string_view attr, std::string_view value) const {
    auto it = store_.values.find(value_key(attr, value));
    if (it == store_.values.end()) return std::nullopt;
    return it->second;
}

}  // namespace ltq
