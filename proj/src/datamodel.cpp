#include "ltq/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace ltq {

namespace {

bool is_word_char(unsigned char c) {
    return std::isalnum(c) || c == '_' || c >= 0x80;
}

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        std::size_t start = i;
        if (is_word_char(c)) {
            while (i < n && is_word_char(static_cast<unsigned char>(text[i]))) ++i;
        } else {
            ++i;  // punctuation: one char per token
        }
        tokens.push_back(Token{std::string(text.substr(start, i - start)), start, i});
    }
    return tokens;
}

Document Document::make(std::string path, std::string text) {
    Document d;
    d.path = std::move(path);
    d.text = std::move(text);
    d.tokens = tokenize(d.text);
    return d;
}

const Document* TextCollection::find(std::string_view path) const {
    for (const auto& d : documents) {
        if (d.path == path) return &d;
    }
    return nullptr;
}

Span make_span(const Document& doc, std::size_t token_start, std::size_t token_end) {
    if (token_start >= token_end || token_end > doc.tokens.size()) {
        throw ValidationError("span out of range in " + doc.path);
    }
    std::size_t cb = doc.tokens[token_start].char_start;
    std::size_t ce = doc.tokens[token_end - 1].char_end;
    return Span{doc.path, token_start, token_end, doc.text.substr(cb, ce - cb)};
}

AttrType attr_type_from_string(std::string_view s) {
    if (s == "text") return AttrType::text;
    if (s == "number") return AttrType::number;
    if (s == "path") return AttrType::path;
    throw ValidationError("unknown attribute type: " + std::string(s));
}

std::string to_string(AttrType t) {
    switch (t) {
        case AttrType::text: return "text";
        case AttrType::number: return "number";
        case AttrType::path: return "path";
    }
    return "text";
}

std::optional<std::size_t> Table::attr_index(std::string_view name) const {
    for (std::size_t i = 0; i < attrs_.size(); ++i) {
        if (attrs_[i].name == name) return i;
    }
    return std::nullopt;
}

std::size_t Table::require_attr(std::string_view name) const {
    auto idx = attr_index(name);
    if (!idx) throw ValidationError("table has no attribute '" + std::string(name) + "'");
    return *idx;
}

void Table::add_row(Row row) {
    if (row.cells.size() != attrs_.size()) {
        throw ValidationError("row arity mismatch: expected " + std::to_string(attrs_.size()) +
                              " cells, got " + std::to_string(row.cells.size()));
    }
    rows_.push_back(std::move(row));
}

std::string normalize_value(std::string_view v) {
    return trim(v);
}

bool values_equal(std::string_view a, std::string_view b) {
    return normalize_value(a) == normalize_value(b);
}

void LatentTableSchema::validate() const {
    if (name.empty()) throw ValidationError("latent table needs a name");
    if (collection.empty()) throw ValidationError("latent table needs a collection");
    if (latent_attributes.empty()) throw ValidationError("latent table needs attributes");
    std::set<std::string> seen;
    for (const auto& a : latent_attributes) {
        if (!seen.insert(a.name).second) {
            throw ValidationError("duplicate latent attribute '" + a.name + "'");
        }
        if (a.type == AttrType::path) {
            throw ValidationError("latent attributes cannot have type path");
        }
    }
    if (kind == TableKind::multi_row) {
        if (!document_level_key) {
            throw ValidationError("multi_row latent table '" + name +
                                  "' needs a document_level_key");
        }
        if (!attr_index(*document_level_key)) {
            throw ValidationError("document_level_key '" + *document_level_key +
                                  "' is not a latent attribute");
        }
    } else if (document_level_key) {
        throw ValidationError("single_row latent table '" + name +
                              "' must not set document_level_key");
    }
}

std::optional<std::size_t> LatentTableSchema::attr_index(std::string_view attr) const {
    for (std::size_t i = 0; i < latent_attributes.size(); ++i) {
        if (latent_attributes[i].name == attr) return i;
    }
    return std::nullopt;
}

std::size_t LinearizedSequence::token_count() const {
    std::size_t count = 0;
    for (const auto& seg : segments) {
        count += seg.name_masked ? 1 : tokenize(seg.attr_name).size();
        count += 1;  // type token
        count += seg.value ? tokenize(*seg.value).size() : 1;  // MASK is one token
        count += 1;  // cell boundary marker
    }
    return count;
}

std::string LinearizedSequence::render() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& seg = segments[i];
        if (i > 0) out << " [CELL] ";
        out << (seg.name_masked ? "[MASK]" : seg.attr_name) << "|" << to_string(seg.attr_type)
            << "|" << (seg.value ? *seg.value : "[MASK]");
    }
    return out.str();
}

LinearizedSequence linearize(const std::vector<Attribute>& attrs,
                             const std::map<std::string, std::string>* tuple,
                             const LinearizeOptions& opts) {
    LinearizedSequence seq;
    seq.segments.reserve(attrs.size());
    for (const auto& attr : attrs) {
        LinearizedSegment seg;
        seg.attr_name = attr.name;
        seg.attr_type = attr.type;
        if (tuple != nullptr) {
            auto it = tuple->find(attr.name);
            if (it != tuple->end()) seg.value = it->second;
        }
        if (opts.mask_attr_name_rate > 0.0 && opts.rng != nullptr) {
            std::uniform_real_distribution<double> dist(0.0, 1.0);
            seg.name_masked = dist(*opts.rng) < opts.mask_attr_name_rate;
        }
        seq.segments.push_back(std::move(seg));
    }
    return seq;
}

LinkReport validate_link(const Table& table, const TextCollection& collection) {
    std::optional<std::size_t> path_idx;
    for (std::size_t i = 0; i < table.attributes().size(); ++i) {
        if (table.attributes()[i].type == AttrType::path) {
            path_idx = i;
            break;
        }
    }
    if (!path_idx) throw ValidationError("table '" + table.name + "' has no path attribute");

    LinkReport report;
    std::set<std::string> referenced;
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        const auto& cell = table.rows()[r].cells[*path_idx];
        if (!cell.value || collection.find(*cell.value) == nullptr) {
            report.dangling_rows.push_back(r);
        } else {
            referenced.insert(*cell.value);
        }
    }
    for (const auto& doc : collection.documents) {
        if (!referenced.contains(doc.path)) report.unreferenced_docs.push_back(doc.path);
    }
    return report;
}

void Catalog::add_collection(TextCollection collection) {
    std::lock_guard lock(*write_mutex_);
    if (collection.name.empty()) throw ValidationError("collection needs a name");
    std::set<std::string_view> paths;
    for (const auto& d : collection.documents) {
        if (!paths.insert(d.path).second) {
            throw ValidationError("duplicate document path '" + d.path + "' in collection '" +
                                  collection.name + "'");
        }
    }
    auto [it, inserted] = collections_.emplace(collection.name, std::move(collection));
    if (!inserted) throw ValidationError("collection '" + it->first + "' already exists");
}

void Catalog::add_table(Table table) {
    std::lock_guard lock(*write_mutex_);
    if (table.name.empty()) throw ValidationError("table needs a name");
    int path_attrs = 0;
    for (const auto& a : table.attributes()) {
        if (a.type == AttrType::path) ++path_attrs;
    }
    if (path_attrs > 1) {
        throw ValidationError("table '" + table.name + "' has more than one path attribute");
    }
    auto [it, inserted] = tables_.emplace(table.name, std::move(table));
    if (!inserted) throw ValidationError("table '" + it->first + "' already exists");
}

std::string Catalog::register_latent_table(LatentTableSchema schema) {
    std::lock_guard lock(*write_mutex_);
    schema.validate();
    if (!collections_.contains(schema.collection)) {
        throw ValidationError("unknown collection '" + schema.collection + "'");
    }
    std::string qualified = schema.qualified_name();
    auto [it, inserted] = latents_.emplace(qualified, std::move(schema));
    if (!inserted) throw ValidationError("latent table '" + qualified + "' already registered");
    return qualified;
}

const TextCollection& Catalog::collection(std::string_view name) const {
    auto it = collections_.find(name);
    if (it == collections_.end()) {
        throw ValidationError("unknown collection '" + std::string(name) + "'");
    }
    return it->second;
}

const Table& Catalog::table(std::string_view name) const {
    auto it = tables_.find(name);
    if (it == tables_.end()) throw ValidationError("unknown table '" + std::string(name) + "'");
    return it->second;
}

const LatentTableSchema& Catalog::latent(std::string_view qualified) const {
    auto it = latents_.find(qualified);
    if (it == latents_.end()) {
        throw ValidationError("unknown latent table '" + std::string(qualified) + "'");
    }
    return it->second;
}

bool Catalog::has_table(std::string_view name) const { return tables_.contains(name); }
bool Catalog::has_latent(std::string_view qualified) const { return latents_.contains(qualified); }
bool Catalog::has_collection(std::string_view name) const { return collections_.contains(name); }

std::vector<std::string> Catalog::latent_names() const {
    std::vector<std::string> names;
    names.reserve(latents_.size());
    for (const auto& [k, v] : latents_) names.push_back(k);
    return names;
}

}  // namespace ltq
