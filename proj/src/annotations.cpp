#include "ltq/annotations.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"

namespace ltq {

using nlohmann::json;

std::size_t DocAnnotation::span_count() const {
    std::size_t count = 0;
    for (const auto& row : rows) {
        for (const auto& [attr, cell] : row.cells) count += cell.spans.size();
    }
    return count;
}

DocAnnotation::SpanRef DocAnnotation::resolve_span(std::size_t span_id) const {
    std::size_t seen = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (const auto& [attr, cell] : rows[r].cells) {
            if (span_id < seen + cell.spans.size()) {
                return SpanRef{r, attr, span_id - seen};
            }
            seen += cell.spans.size();
        }
    }
    throw ValidationError("span id " + std::to_string(span_id) + " out of range in " + doc_path);
}

const DocAnnotation* CollectionAnnotation::find(std::string_view doc_path) const {
    for (const auto& d : documents) {
        if (d.doc_path == doc_path) return &d;
    }
    return nullptr;
}

CollectionAnnotation annotation_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    CollectionAnnotation ann;
    ann.latent_table = j.at("latent_table").get<std::string>();
    for (const auto& jd : j.at("documents")) {
        DocAnnotation doc;
        doc.doc_path = jd.at("doc").get<std::string>();
        for (const auto& jr : jd.at("rows")) {
            GoldRow row;
            if (jr.contains("key") && !jr["key"].is_null()) {
                row.key = jr["key"].get<std::string>();
            }
            for (const auto& [attr, jc] : jr.at("cells").items()) {
                GoldCell cell;
                for (const auto& js : jc.at("spans")) {
                    cell.spans.push_back(GoldSpan{js.at(0).get<std::size_t>(),
                                                  js.at(1).get<std::size_t>()});
                }
                for (const auto& ja : jc.at("alternatives")) {
                    cell.alternatives.push_back(ja.get<std::string>());
                }
                if (cell.alternatives.empty()) {
                    throw ValidationError("empty alternatives for attribute '" + attr + "' in " +
                                          doc.doc_path);
                }
                row.cells.emplace(attr, std::move(cell));
            }
            doc.rows.push_back(std::move(row));
        }
        if (jd.contains("duplicate_groups")) {
            for (const auto& jg : jd["duplicate_groups"]) {
                doc.duplicate_groups.push_back(jg.get<std::vector<std::size_t>>());
            }
        }
        ann.documents.push_back(std::move(doc));
    }
    return ann;
}

std::string annotation_to_json(const CollectionAnnotation& ann) {
    json j;
    j["latent_table"] = ann.latent_table;
    j["documents"] = json::array();
    for (const auto& doc : ann.documents) {
        json jd;
        jd["doc"] = doc.doc_path;
        jd["rows"] = json::array();
        for (const auto& row : doc.rows) {
            json jr;
            if (row.key) jr["key"] = *row.key;
            jr["cells"] = json::object();
            for (const auto& [attr, cell] : row.cells) {
                json jc;
                jc["spans"] = json::array();
                for (const auto& s : cell.spans) {
                    jc["spans"].push_back(json::array({s.token_start, s.token_end}));
                }
                jc["alternatives"] = cell.alternatives;
                jr["cells"][attr] = std::move(jc);
            }
            jd["rows"].push_back(std::move(jr));
        }
        jd["duplicate_groups"] = doc.duplicate_groups;
        j["documents"].push_back(std::move(jd));
    }
    return j.dump(2);
}

void check_annotation(const CollectionAnnotation& ann, const TextCollection& collection) {
    for (const auto& doc : ann.documents) {
        const Document* d = collection.find(doc.doc_path);
        if (d == nullptr) {
            throw ValidationError("annotation references unknown document '" + doc.doc_path + "'");
        }
        for (const auto& row : doc.rows) {
            for (const auto& [attr, cell] : row.cells) {
                for (const auto& s : cell.spans) {
                    if (s.token_start >= s.token_end || s.token_end > d->tokens.size()) {
                        throw ValidationError("gold span out of range in " + doc.doc_path);
                    }
                }
            }
        }
        std::size_t spans = doc.span_count();
        for (const auto& group : doc.duplicate_groups) {
            for (std::size_t id : group) {
                if (id >= spans) {
                    throw ValidationError("duplicate group references bad span id in " +
                                          doc.doc_path);
                }
            }
        }
    }
}

namespace {

class UnionFind {
public:
    int add() {
        parent_.push_back(static_cast<int>(parent_.size()));
        return static_cast<int>(parent_.size()) - 1;
    }
    int find(int x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(int a, int b) { parent_[find(a)] = find(b); }

private:
    std::vector<int> parent_;
};

std::string concept_key(std::string_view attr, std::string_view value) {
    std::string key(attr);
    key.push_back('\x1f');
    key += normalize_value(value);
    return key;
}

}  // namespace

ConceptTable ConceptTable::build(const std::vector<const CollectionAnnotation*>& annotations) {
    UnionFind uf;
    std::map<std::string, int, std::less<>> node_of;
    auto node = [&](const std::string& key) {
        auto it = node_of.find(key);
        if (it != node_of.end()) return it->second;
        int n = uf.add();
        node_of.emplace(key, n);
        return n;
    };

    std::vector<std::string> order;  // first-appearance order for dense ids
    for (const auto* ann : annotations) {
        for (const auto& doc : ann->documents) {
            for (const auto& row : doc.rows) {
                for (const auto& [attr, cell] : row.cells) {
                    int first = -1;
                    for (const auto& alt : cell.alternatives) {
                        std::string key = concept_key(attr, alt);
                        if (!node_of.contains(key)) order.push_back(key);
                        int n = node(key);
                        if (first < 0) {
                            first = n;
                        } else {
                            uf.unite(first, n);
                        }
                    }
                }
            }
            // spans in one duplicate group name the same concept
            for (const auto& group : doc.duplicate_groups) {
                int first = -1;
                for (std::size_t id : group) {
                    auto ref = doc.resolve_span(id);
                    const auto& cell = doc.rows[ref.row].cells.at(ref.attr);
                    if (cell.alternatives.empty()) continue;
                    int n = node(concept_key(ref.attr, cell.alternatives.front()));
                    if (first < 0) {
                        first = n;
                    } else {
                        uf.unite(first, n);
                    }
                }
            }
        }
    }

    ConceptTable table;
    std::map<int, int> id_of_root;
    for (const auto& key : order) {
        int root = uf.find(node_of.at(key));
        auto it = id_of_root.find(root);
        if (it == id_of_root.end()) {
            it = id_of_root.emplace(root, table.count_++).first;
        }
        table.by_key_.emplace(key, it->second);
    }
    return table;
}

int ConceptTable::concept_of(std::string_view attr, std::string_view value) const {
    auto it = by_key_.find(concept_key(attr, value));
    return it == by_key_.end() ? -1 : it->second;
}

}  // namespace ltq
