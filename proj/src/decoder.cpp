#include "ltq/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "ltq/kernels.hpp"

namespace ltq {

using nlohmann::json;

void HeadWeights::validate() const {
    const auto n = static_cast<std::size_t>(dim);
    const auto s = static_cast<std::size_t>(span_dim);
    if (dim <= 0 || span_dim <= 0) throw ValidationError("head weights need positive dims");
    for (const auto* m : {&w_i_rd, &w_b_rd, &w_i_ad, &w_b_ad}) {
        if (m->size() != n * n) throw ValidationError("head weight matrix shape mismatch");
    }
    if (w_dd.size() != s * s) throw ValidationError("DD weight matrix shape mismatch");
    for (const auto* m : {&w_i_rd, &w_b_rd, &w_i_ad, &w_b_ad, &w_dd}) {
        for (float x : *m) {
            if (!std::isfinite(x)) throw ValidationError("head weights contain non-finite values");
        }
    }
}

std::uint64_t HeadWeights::fingerprint() const {
    std::uint64_t h = fnv1a(&dim, sizeof(dim));
    h = fnv1a(&span_dim, sizeof(span_dim), h);
    for (const auto* m : {&w_i_rd, &w_b_rd, &w_i_ad, &w_b_ad, &w_dd}) {
        h = fnv1a(m->data(), m->size() * sizeof(float), h);
    }
    const float th[3] = {thresh_rd, thresh_ad, thresh_dd};
    return fnv1a(th, sizeof(th), h);
}

HeadWeights HeadWeights::oracle(int dim) {
    HeadWeights w;
    w.dim = dim;
    w.span_dim = dim;
    const auto n = static_cast<std::size_t>(dim);
    w.w_i_rd.assign(n * n, 0.0f);
    w.w_b_rd.assign(n * n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        (i % 2 == 0 ? w.w_b_rd : w.w_i_rd)[i * n + i] = 1.0f;
    }
    w.w_i_ad = w.w_i_rd;
    w.w_b_ad = w.w_b_rd;
    w.w_dd.assign(n * n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) w.w_dd[i * n + i] = 1.0f;
    w.thresh_rd = 0.25f;
    w.thresh_ad = 0.25f;
    w.thresh_dd = 0.5f;
    w.vertical = VerticalAttentionWeights::identity(dim);
    return w;
}

namespace {

json matrix_to_json(const std::vector<float>& m) {
    return base64_encode(m.data(), m.size() * sizeof(float));
}

std::vector<float> matrix_from_json(const json& j, std::size_t expected) {
    auto bytes = base64_decode(j.get<std::string>());
    if (bytes.size() != expected * sizeof(float)) {
        throw ValidationError("weight matrix has wrong size");
    }
    std::vector<float> m(expected);
    std::memcpy(m.data(), bytes.data(), bytes.size());
    return m;
}

}  // namespace

void HeadWeights::save(const std::string& path) const {
    json j;
    j["dim"] = dim;
    j["span_dim"] = span_dim;
    j["thresh_rd"] = thresh_rd;
    j["thresh_ad"] = thresh_ad;
    j["thresh_dd"] = thresh_dd;
    j["matrices"] = {{"w_i_rd", matrix_to_json(w_i_rd)}, {"w_b_rd", matrix_to_json(w_b_rd)},
                     {"w_i_ad", matrix_to_json(w_i_ad)}, {"w_b_ad", matrix_to_json(w_b_ad)},
                     {"w_dd", matrix_to_json(w_dd)}};
    if (vertical.dim > 0) {
        j["vertical_attention"] = {{"dim", vertical.dim},   {"heads", vertical.heads},
                                   {"layers", vertical.layers}, {"w_q", matrix_to_json(vertical.w_q)},
                                   {"w_k", matrix_to_json(vertical.w_k)},
                                   {"w_v", matrix_to_json(vertical.w_v)},
                                   {"w_o", matrix_to_json(vertical.w_o)}};
    }
    write_file(path, j.dump(2));
}

HeadWeights HeadWeights::load(const std::string& path) {
    json j = json::parse(read_file(path));
    HeadWeights w;
    w.dim = j.at("dim").get<int>();
    w.span_dim = j.at("span_dim").get<int>();
    w.thresh_rd = j.at("thresh_rd").get<float>();
    w.thresh_ad = j.at("thresh_ad").get<float>();
    w.thresh_dd = j.at("thresh_dd").get<float>();
    const auto n = static_cast<std::size_t>(w.dim);
    const auto s = static_cast<std::size_t>(w.span_dim);
    const json& m = j.at("matrices");
    w.w_i_rd = matrix_from_json(m.at("w_i_rd"), n * n);
    w.w_b_rd = matrix_from_json(m.at("w_b_rd"), n * n);
    w.w_i_ad = matrix_from_json(m.at("w_i_ad"), n * n);
    w.w_b_ad = matrix_from_json(m.at("w_b_ad"), n * n);
    w.w_dd = matrix_from_json(m.at("w_dd"), s * s);
    if (j.contains("vertical_attention")) {
        const json& v = j["vertical_attention"];
        w.vertical.dim = v.at("dim").get<int>();
        w.vertical.heads = v.at("heads").get<int>();
        w.vertical.layers = v.at("layers").get<int>();
        const auto vn = static_cast<std::size_t>(w.vertical.dim);
        w.vertical.w_q = matrix_from_json(v.at("w_q"), vn * vn);
        w.vertical.w_k = matrix_from_json(v.at("w_k"), vn * vn);
        w.vertical.w_v = matrix_from_json(v.at("w_v"), vn * vn);
        w.vertical.w_o = matrix_from_json(v.at("w_o"), vn * vn);
    } else {
        w.vertical = VerticalAttentionWeights::identity(w.dim);
    }
    w.validate();
    return w;
}

std::vector<IobTag> tag_tokens(const RowEmbeddings& row, std::size_t dim,
                               std::span<const float> cell_embed, const std::vector<float>& w_i,
                               const std::vector<float>& w_b, float thresh) {
    if (cell_embed.size() != dim) throw ValidationError("cell embedding dim mismatch");
    if (w_i.size() != dim * dim || w_b.size() != dim * dim) {
        throw ValidationError("tag weight dim mismatch");
    }
    std::vector<IobTag> tags(row.n, IobTag::O);
    for (std::size_t t = 0; t < row.n; ++t) {
        const float* w = row.ve.data() + t * dim;
        double score_b = kernels::bilinear(w, w_b.data(), cell_embed.data(), dim);
        double score_i = kernels::bilinear(w, w_i.data(), cell_embed.data(), dim);
        double best = static_cast<double>(thresh);
        IobTag tag = IobTag::O;
        if (score_b > best) {
            best = score_b;
            tag = IobTag::B;
        }
        if (score_i > best) {
            tag = IobTag::I;
        }
        tags[t] = tag;
    }
    return tags;
}

std::vector<Span> iob_decode(std::span<const IobTag> tags, const Document& doc,
                             std::size_t window_begin) {
    std::vector<Span> spans;
    std::size_t open_start = 0;
    bool open = false;
    auto close = [&](std::size_t end) {
        if (open) {
            spans.push_back(make_span(doc, window_begin + open_start, window_begin + end));
            open = false;
        }
    };
    for (std::size_t t = 0; t < tags.size(); ++t) {
        switch (tags[t]) {
            case IobTag::B:
                close(t);
                open = true;
                open_start = t;
                break;
            case IobTag::I:
                if (!open) {
                    open = true;
                    open_start = t;
                }
                break;
            case IobTag::O:
                close(t);
                break;
        }
    }
    close(tags.size());
    return spans;
}

std::vector<Span> row_detect(const RowEmbeddings& row, const HeadWeights& weights,
                             std::size_t cell_index, const Document& doc,
                             std::size_t window_begin) {
    const auto dim = static_cast<std::size_t>(weights.dim);
    if (cell_index >= row.m) throw ValidationError("row_detect cell index out of range");
    auto tags = tag_tokens(row, dim, row.cell(cell_index, dim), weights.w_i_rd, weights.w_b_rd,
                           weights.thresh_rd);
    return iob_decode(tags, doc, window_begin);
}

std::vector<Span> attribute_detect(const RowEmbeddings& row, const HeadWeights& weights,
                                   std::span<const float> attribute_embed, const Document& doc,
                                   std::size_t window_begin) {
    const auto dim = static_cast<std::size_t>(weights.dim);
    auto tags = tag_tokens(row, dim, attribute_embed, weights.w_i_ad, weights.w_b_ad,
                           weights.thresh_ad);
    return iob_decode(tags, doc, window_begin);
}

std::vector<float> span_embed(const Span& span, const RowEmbeddings& row, std::size_t dim,
                              std::size_t window_begin) {
    if (span.token_start < window_begin || span.token_end > window_begin + row.n) {
        throw ValidationError("span outside encoded window");
    }
    const std::size_t first = span.token_start - window_begin;
    const std::size_t last = span.token_end - 1 - window_begin;
    std::vector<float> out(dim);
    const float* a = row.dd.data() + first * dim;
    const float* b = row.dd.data() + last * dim;
    for (std::size_t d = 0; d < dim; ++d) out[d] = 0.5f * (a[d] + b[d]);
    return out;
}

double dd_similarity(std::span<const float> a, std::span<const float> b,
                     const HeadWeights& weights) {
    const auto s = static_cast<std::size_t>(weights.span_dim);
    if (a.size() != s || b.size() != s) throw ValidationError("span embedding dim mismatch");
    double ab = kernels::bilinear(a.data(), weights.w_dd.data(), b.data(), s);
    double ba = kernels::bilinear(b.data(), weights.w_dd.data(), a.data(), s);
    return 0.5 * (ab + ba) - static_cast<double>(weights.thresh_dd);
}

std::vector<std::vector<std::size_t>> cluster_by_distance(
    const std::vector<std::vector<double>>& dist) {
    const std::size_t n = dist.size();
    std::vector<std::vector<std::size_t>> clusters;
    clusters.reserve(n);
    for (std::size_t i = 0; i < n; ++i) clusters.push_back({i});

    while (clusters.size() > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_a = 0, best_b = 0;
        for (std::size_t a = 0; a < clusters.size(); ++a) {
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                double sum = 0.0;
                for (std::size_t i : clusters[a]) {
                    for (std::size_t j : clusters[b]) sum += dist[i][j];
                }
                double linkage = sum / static_cast<double>(clusters[a].size() * clusters[b].size());
                if (linkage < best) {
                    best = linkage;
                    best_a = a;
                    best_b = b;
                }
            }
        }
        if (!(best < 0.0)) break;
        auto& target = clusters[best_a];
        target.insert(target.end(), clusters[best_b].begin(), clusters[best_b].end());
        std::sort(target.begin(), target.end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best_b));
    }
    std::sort(clusters.begin(), clusters.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return clusters;
}

ClusterResult duplicate_detect(const std::vector<ScoredSpan>& spans, const HeadWeights& weights) {
    ClusterResult result;
    const std::size_t n = spans.size();
    if (n == 0) return result;
    for (std::size_t i = 1; i < n; ++i) {
        const Span& prev = spans[i - 1].span;
        const Span& cur = spans[i].span;
        if (std::tie(prev.token_start, prev.token_end) > std::tie(cur.token_start, cur.token_end)) {
            throw ValidationError("duplicate_detect expects spans sorted by token range");
        }
    }

    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = -dd_similarity(spans[i].embed, spans[j].embed, weights);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    result.clusters = cluster_by_distance(dist);
    for (const auto& cluster : result.clusters) {
        std::size_t rep = cluster.front();
        for (std::size_t idx : cluster) {
            if (spans[idx].span.length() > spans[rep].span.length()) rep = idx;
        }
        result.representatives.push_back(rep);
    }
    return result;
}

namespace {

// -log softmax(logits)[gold], computed with the usual max-shift
double cross_entropy(std::span<const double> logits, std::size_t gold) {
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double denom = 0.0;
    for (double l : logits) denom += std::exp(l - mx);
    return -(logits[gold] - mx - std::log(denom));
}

std::size_t tag_slot(IobTag t) {
    switch (t) {
        case IobTag::I: return 0;
        case IobTag::O: return 1;
        case IobTag::B: return 2;
    }
    return 1;
}

}  // namespace

LossBreakdown pretrain_loss_forward(const EncoderOutput& output, const GroupLabels& labels,
                                    const HeadWeights& weights, const LossConfig& config) {
    weights.validate();
    if (labels.rows.size() != output.rows.size()) {
        throw ValidationError("labels do not align with the encoded group");
    }
    const auto dim = static_cast<std::size_t>(output.dim);
    const std::size_t k = output.rows.size();

    LossBreakdown loss;
    std::size_t n_mcr = 0, n_ata = 0, n_dd = 0;

    for (std::size_t i = 0; i < k; ++i) {
        const RowEmbeddings& row = output.rows[i];
        const auto& row_labels = labels.rows[i];
        for (const auto& [cell_idx, gold_tags] : row_labels.rd_tags) {
            if (cell_idx >= row.m || gold_tags.size() != row.n) {
                throw ValidationError("RD labels do not align with the encoded row");
            }
            auto cell = row.cell(cell_idx, dim);
            for (std::size_t t = 0; t < row.n; ++t) {
                const float* w = row.ve.data() + t * dim;
                double logits[3] = {
                    kernels::bilinear(w, weights.w_i_rd.data(), cell.data(), dim),
                    static_cast<double>(weights.thresh_rd),
                    kernels::bilinear(w, weights.w_b_rd.data(), cell.data(), dim)};
                loss.l_mcr += cross_entropy(logits, tag_slot(gold_tags[t]));
                ++n_mcr;
            }
        }
    }

    for (std::size_t i = 0; i < k; ++i) {
        const RowEmbeddings& row = output.rows[i];
        const auto& row_labels = labels.rows[i];
        if (row_labels.ad_tags.size() != row.m) {
            throw ValidationError("AD labels do not align with the encoded row");
        }
        for (std::size_t j = 0; j < row.m; ++j) {
            const auto& gold_tags = row_labels.ad_tags[j];
            if (gold_tags.size() != row.n) {
                throw ValidationError("AD labels do not align with the encoded row");
            }
            auto attr = attribute_pool(output, j);
            for (std::size_t t = 0; t < row.n; ++t) {
                const float* w = row.ve.data() + t * dim;
                double logits[3] = {
                    kernels::bilinear(w, weights.w_i_ad.data(), attr.data(), dim),
                    static_cast<double>(weights.thresh_ad),
                    kernels::bilinear(w, weights.w_b_ad.data(), attr.data(), dim)};
                loss.l_ata += cross_entropy(logits, tag_slot(gold_tags[t]));
                ++n_ata;
            }
        }
    }

    for (std::size_t i = 0; i < k; ++i) {
        const RowEmbeddings& row = output.rows[i];
        const auto& spans = labels.rows[i].dd_spans;
        std::vector<std::vector<float>> embeds;
        embeds.reserve(spans.size());
        for (const auto& s : spans) {
            if (s.token_start >= s.token_end || s.token_end > row.n) {
                throw ValidationError("DD label span outside the encoded row");
            }
            Span span;
            span.token_start = s.token_start;
            span.token_end = s.token_end;
            embeds.push_back(span_embed(span, row, dim, 0));
        }
        for (std::size_t a = 0; a < spans.size(); ++a) {
            for (std::size_t b = a + 1; b < spans.size(); ++b) {
                double l_yes = kernels::bilinear(embeds[a].data(), weights.w_dd.data(),
                                                 embeds[b].data(), dim);
                double logits[2] = {l_yes, static_cast<double>(weights.thresh_dd)};
                std::size_t gold = spans[a].group == spans[b].group ? 0 : 1;
                loss.l_dd += cross_entropy(logits, gold);
                ++n_dd;
            }
        }
    }

    if (n_mcr > 0) loss.l_mcr /= static_cast<double>(n_mcr);
    if (n_ata > 0) loss.l_ata /= static_cast<double>(n_ata);
    if (n_dd > 0) loss.l_dd /= static_cast<double>(n_dd);
    loss.l_mlm = config.l_mlm;
    loss.combined = config.alpha * loss.l_mcr + config.beta * loss.l_ata +
                    config.gamma * loss.l_dd + config.delta * loss.l_mlm;
    return loss;
}

}  // namespace ltq
