#include "ltq/index.hpp"

#include <algorithm>
#include <cstring>

#include "json.hpp"

namespace ltq {

using nlohmann::json;

namespace {
constexpr char kMagic[5] = {'M', 'M', 'I', 'X', '1'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

MultiModalIndex build_index(const LatentHandle& latent, const std::string& attribute,
                            ExecContext& ctx) {
    auto attr_idx = latent.schema->attr_index(attribute);
    if (!attr_idx) {
        throw ValidationError("unknown attribute '" + attribute + "' on " +
                              latent.schema->qualified_name());
    }
    // restrict extraction to the indexed attribute (plus nothing else)
    LatentHandle narrowed = latent;
    narrowed.attrs = {*attr_idx};

    struct Entry {
        ExtractedValue value;
        std::string doc_path;
    };
    std::vector<Entry> entries;
    for (const Document* doc : narrowed.documents()) {
        for (auto& v : extract_attribute_values(*doc, narrowed, 0, ctx)) {
            entries.push_back(Entry{std::move(v), doc->path});
        }
    }

    MultiModalIndex index;
    index.latent_table = latent.schema->qualified_name();
    index.attribute = attribute;
    index.weights_fingerprint = ctx.weights.fingerprint();

    if (!entries.empty()) {
        const std::size_t n = entries.size();
        std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double d = -dd_similarity(entries[i].value.embed, entries[j].value.embed,
                                          ctx.weights);
                dist[i][j] = d;
                dist[j][i] = d;
            }
        }
        for (const auto& cluster : cluster_by_distance(dist)) {
            MultiModalIndex::Group group;
            std::size_t rep = cluster.front();
            for (std::size_t idx : cluster) {
                const Entry& e = entries[idx];
                if (e.value.span.length() > entries[rep].value.span.length()) rep = idx;
                group.members.push_back(MultiModalIndex::Member{
                    normalize_value(e.value.span.surface), e.value.embed, e.doc_path});
                group.doc_paths.insert(e.doc_path);
            }
            group.representative = normalize_value(entries[rep].value.span.surface);
            group.representative_embed = entries[rep].value.embed;
            index.groups.push_back(std::move(group));
        }
    }

    for (std::size_t g = 0; g < index.groups.size(); ++g) {
        for (const auto& member : index.groups[g].members) {
            index.by_value.emplace(member.value, g);  // first group wins on clashes
        }
    }
    return index;
}

std::set<std::string> probe(const MultiModalIndex& index, const std::string& value,
                            ExecContext& ctx, const ProbeOptions& opts) {
    if (index.weights_fingerprint != ctx.weights.fingerprint()) {
        throw ExecError("index for " + index.latent_table + "." + index.attribute +
                        " was built with different weights");
    }
    std::set<std::string> paths;
    auto exact = index.by_value.find(normalize_value(value));
    if (exact != index.by_value.end()) {
        const auto& group = index.groups[exact->second];
        paths.insert(group.doc_paths.begin(), group.doc_paths.end());
    }
    std::vector<float> query = embed_query_value(ctx, index.attribute, value);
    for (const auto& group : index.groups) {
        bool hit = false;
        if (opts.match_members) {
            for (const auto& member : group.members) {
                if (dd_similarity(query, member.embed, ctx.weights) > 0.0) {
                    hit = true;
                    break;
                }
            }
        } else {
            hit = dd_similarity(query, group.representative_embed, ctx.weights) > 0.0;
        }
        if (hit) paths.insert(group.doc_paths.begin(), group.doc_paths.end());
    }
    return paths;
}

void MultiModalIndex::persist(const std::string& path) const {
    json j;
    j["latent_table"] = latent_table;
    j["attribute"] = attribute;
    j["weights_fingerprint"] = weights_fingerprint;
    j["groups"] = json::array();
    std::vector<float> embeds;
    auto put_embed = [&](const std::vector<float>& e) {
        std::size_t offset = embeds.size();
        embeds.insert(embeds.end(), e.begin(), e.end());
        return json{{"offset", offset}, {"len", e.size()}};
    };
    for (const auto& group : groups) {
        json jg;
        jg["representative"] = group.representative;
        jg["representative_embed"] = put_embed(group.representative_embed);
        jg["doc_paths"] = std::vector<std::string>(group.doc_paths.begin(), group.doc_paths.end());
        jg["members"] = json::array();
        for (const auto& member : group.members) {
            jg["members"].push_back(json{{"value", member.value},
                                         {"embed", put_embed(member.embed)},
                                         {"doc", member.doc_path}});
        }
        j["groups"].push_back(std::move(jg));
    }
    std::string table = j.dump();

    std::string blob;
    blob.append(kMagic, sizeof(kMagic));
    std::uint32_t version = kVersion;
    std::uint64_t table_len = table.size();
    std::uint64_t float_count = embeds.size();
    blob.append(reinterpret_cast<const char*>(&version), sizeof(version));
    blob.append(reinterpret_cast<const char*>(&table_len), sizeof(table_len));
    blob.append(table);
    blob.append(reinterpret_cast<const char*>(&float_count), sizeof(float_count));
    blob.append(reinterpret_cast<const char*>(embeds.data()), embeds.size() * sizeof(float));
    write_file(path, blob);
}

MultiModalIndex MultiModalIndex::load(const std::string& path) {
    std::string blob = read_file(path);
    std::size_t pos = 0;
    auto need = [&](std::size_t bytes) {
        if (pos + bytes > blob.size()) throw ValidationError("index file truncated: " + path);
    };
    need(sizeof(kMagic));
    if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ValidationError("not an index file (bad magic): " + path);
    }
    pos += sizeof(kMagic);
    std::uint32_t version = 0;
    need(sizeof(version));
    std::memcpy(&version, blob.data() + pos, sizeof(version));
    pos += sizeof(version);
    if (version != kVersion) {
        throw ValidationError("unsupported index version " + std::to_string(version));
    }
    std::uint64_t table_len = 0;
    need(sizeof(table_len));
    std::memcpy(&table_len, blob.data() + pos, sizeof(table_len));
    pos += sizeof(table_len);
    need(table_len);
    json j = json::parse(blob.substr(pos, table_len));
    pos += table_len;
    std::uint64_t float_count = 0;
    need(sizeof(float_count));
    std::memcpy(&float_count, blob.data() + pos, sizeof(float_count));
    pos += sizeof(float_count);
    need(float_count * sizeof(float));
    const float* embeds = reinterpret_cast<const float*>(blob.data() + pos);

    auto get_embed = [&](const json& je) {
        std::size_t offset = je.at("offset").get<std::size_t>();
        std::size_t len = je.at("len").get<std::size_t>();
        if (offset + len > float_count) throw ValidationError("index embed out of range: " + path);
        return std::vector<float>(embeds + offset, embeds + offset + len);
    };

    MultiModalIndex index;
    index.latent_table = j.at("latent_table").get<std::string>();
    index.attribute = j.at("attribute").get<std::string>();
    index.weights_fingerprint = j.at("weights_fingerprint").get<std::uint64_t>();
    for (const auto& jg : j.at("groups")) {
        Group group;
        group.representative = jg.at("representative").get<std::string>();
        group.representative_embed = get_embed(jg.at("representative_embed"));
        for (const auto& p : jg.at("doc_paths")) group.doc_paths.insert(p.get<std::string>());
        for (const auto& jm : jg.at("members")) {
            group.members.push_back(Member{jm.at("value").get<std::string>(),
                                           get_embed(jm.at("embed")),
                                           jm.at("doc").get<std::string>()});
        }
        index.groups.push_back(std::move(group));
    }
    for (std::size_t g = 0; g < index.groups.size(); ++g) {
        for (const auto& member : index.groups[g].members) {
            index.by_value.emplace(member.value, g);
        }
    }
    return index;
}

bool MultiModalIndex::structurally_equal(const MultiModalIndex& other) const {
    if (latent_table != other.latent_table || attribute != other.attribute ||
        weights_fingerprint != other.weights_fingerprint || groups.size() != other.groups.size()) {
        return false;
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const Group& a = groups[g];
        const Group& b = other.groups[g];
        if (a.representative != b.representative || a.doc_paths != b.doc_paths ||
            a.members.size() != b.members.size() ||
            a.representative_embed != b.representative_embed) {
            return false;
        }
        for (std::size_t m = 0; m < a.members.size(); ++m) {
            if (a.members[m].value != b.members[m].value ||
                a.members[m].doc_path != b.members[m].doc_path ||
                a.members[m].embed != b.members[m].embed) {
                return false;
            }
        }
    }
    return true;
}

}  // namespace ltq
