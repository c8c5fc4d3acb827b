#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ltq/util.hpp"

namespace ltq {

struct Token {
    std::string surface;
    std::size_t char_start = 0;
    std::size_t char_end = 0;  // exclusive

    bool operator==(const Token&) const = default;
};

// Deterministic offset-preserving tokenizer: maximal runs of word characters
// (alnum, '_', and any byte >= 0x80 so multi-byte UTF-8 stays intact) become
// one token, every other non-space character becomes a single-char token.
std::vector<Token> tokenize(std::string_view text);

struct Document {
    std::string path;
    std::string text;
    std::vector<Token> tokens;

    static Document make(std::string path, std::string text);
};

struct TextCollection {
    std::string name;
    std::vector<Document> documents;  // paths pairwise distinct, load order kept

    const Document* find(std::string_view path) const;
};

// A contiguous token range in a document. The surface is the raw character
// slice between the first and last covered token, so inter-token characters
// are preserved.
struct Span {
    std::string doc_path;
    std::size_t token_start = 0;
    std::size_t token_end = 0;  // exclusive
    std::string surface;

    std::size_t length() const { return token_end - token_start; }
    bool operator==(const Span&) const = default;
};

Span make_span(const Document& doc, std::size_t token_start, std::size_t token_end);

enum class AttrType { text, number, path };

AttrType attr_type_from_string(std::string_view s);
std::string to_string(AttrType t);

struct Attribute {
    std::string name;
    AttrType type = AttrType::text;
};

// NULL is the absent optional; it renders as the empty string in CSV.
struct Cell {
    std::optional<std::string> value;
    std::vector<float> embed;  // retained span embedding, empty when not kept
};

struct Row {
    std::vector<Cell> cells;
    std::string provenance;  // source document path, empty for table-born rows
};

class Table {
public:
    Table() = default;
    explicit Table(std::vector<Attribute> attrs) : attrs_(std::move(attrs)) {}

    const std::vector<Attribute>& attributes() const { return attrs_; }
    const std::vector<Row>& rows() const { return rows_; }
    std::vector<Row>& rows() { return rows_; }
    std::string name;

    std::optional<std::size_t> attr_index(std::string_view name) const;
    std::size_t require_attr(std::string_view name) const;
    void add_row(Row row);

private:
    std::vector<Attribute> attrs_;
    std::vector<Row> rows_;
};

// Whether values are compared after trimming outer whitespace only; case is
// preserved throughout.
std::string normalize_value(std::string_view v);
bool values_equal(std::string_view a, std::string_view b);

enum class TableKind { single_row, multi_row };

struct LatentTableSchema {
    std::string name;        // qualified as "<collection>.<name>" in the catalog
    std::string collection;  // referenced text collection
    std::vector<Attribute> latent_attributes;
    TableKind kind = TableKind::single_row;
    std::optional<std::string> document_level_key;

    std::string qualified_name() const { return collection + "." + name; }
    void validate() const;
    std::optional<std::size_t> attr_index(std::string_view attr) const;
};

// One cell of the model input: attribute name, type token, and either a
// concrete value or a MASK marker.
struct LinearizedSegment {
    std::string attr_name;
    AttrType attr_type = AttrType::text;
    std::optional<std::string> value;  // nullopt => MASK
    bool name_masked = false;

    bool masked() const { return !value.has_value(); }
};

struct LinearizedSequence {
    std::vector<LinearizedSegment> segments;

    std::size_t token_count() const;
    // Canonical text form, e.g. "name|text|Bob [CELL] diagnosis|text|[MASK]".
    std::string render() const;
    std::uint64_t fingerprint() const { return fnv1a(render()); }
};

struct LinearizeOptions {
    // Attribute-name masking for pre-training inputs; 0 disables it.
    double mask_attr_name_rate = 0.0;
    std::mt19937_64* rng = nullptr;
};

// Latent attributes produce MASK segments, context attributes carry their
// tuple values. `tuple` maps attribute name -> value for non-latent context.
LinearizedSequence linearize(const std::vector<Attribute>& attrs,
                             const std::map<std::string, std::string>* tuple = nullptr,
                             const LinearizeOptions& opts = {});

struct LinkReport {
    std::vector<std::size_t> dangling_rows;       // rows whose path has no document
    std::vector<std::string> unreferenced_docs;   // documents no row points at
    bool clean() const { return dangling_rows.empty() && unreferenced_docs.empty(); }
};

LinkReport validate_link(const Table& table, const TextCollection& collection);

// Catalog of tables, text collections, and latent tables. Mutation is
// single-writer behind a mutex; registered objects are immutable afterwards.
class Catalog {
public:
    Catalog() : write_mutex_(std::make_unique<std::mutex>()) {}
    Catalog(Catalog&&) = default;
    Catalog& operator=(Catalog&&) = default;

    void add_collection(TextCollection collection);
    void add_table(Table table);
    // Validates the schema and the collection reference; never reads document
    // contents. Returns the qualified name usable in plans.
    std::string register_latent_table(LatentTableSchema schema);

    const TextCollection& collection(std::string_view name) const;
    const Table& table(std::string_view name) const;
    const LatentTableSchema& latent(std::string_view qualified) const;
    bool has_table(std::string_view name) const;
    bool has_latent(std::string_view qualified) const;
    bool has_collection(std::string_view name) const;

    std::vector<std::string> latent_names() const;

private:
    std::unique_ptr<std::mutex> write_mutex_;
    std::map<std::string, TextCollection, std::less<>> collections_;
    std::map<std::string, Table, std::less<>> tables_;
    std::map<std::string, LatentTableSchema, std::less<>> latents_;
};

}  // namespace ltq
