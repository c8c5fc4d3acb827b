#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ltq/decoder.hpp"
#include "ltq/embedding.hpp"

namespace ltq {

// A latent table in a plan: schema plus an optional projection and an
// optional document restriction. Handles never materialize anything.
struct LatentHandle {
    const LatentTableSchema* schema = nullptr;
    const TextCollection* collection = nullptr;
    std::vector<std::size_t> attrs;  // indices into schema->latent_attributes
    std::optional<std::set<std::string>> docs_filter;  // restrict to these paths

    std::vector<Attribute> projected_attributes() const;
    std::vector<const Document*> documents() const;

    static LatentHandle open(const Catalog& catalog, std::string_view qualified);
};

struct NodeReport {
    std::string label;
    double millis = 0.0;
    std::size_t encode_calls = 0;
    std::size_t docs_touched = 0;
};

struct ExecReport {
    std::size_t encode_calls = 0;
    std::set<std::string> docs_touched;
    std::vector<NodeReport> nodes;
    std::vector<std::string> warnings;
};

struct ExecOptions {
    std::uint64_t seed = 0;
    bool strict_join = true;
    bool retain_embeddings = true;
};

// Threads the encoder, weights and report through operator evaluation; every
// model call goes through encode() so call counts support the pruning
// invariants.
struct ExecContext {
    const Encoder& encoder;
    const HeadWeights& weights;
    ExecOptions options;
    ExecReport report;

    ExecContext(const Encoder& enc, const HeadWeights& w, ExecOptions opts = {})
        : encoder(enc), weights(w), options(opts) {
        w.validate();
        if (enc.dim() != w.dim) {
            throw ValidationError("encoder dim " + std::to_string(enc.dim()) +
                                  " does not match weights dim " + std::to_string(w.dim));
        }
    }

    EncoderOutput encode(std::span<const RowContext> group);
    std::size_t window_budget(const LinearizedSequence& segment) const;
};

std::vector<float> embed_query_value(ExecContext& ctx, std::string_view attr,
                                     std::string_view value);

struct Condition {
    std::string attr;
    std::string value;
};

enum class AggFunc { list, count };

struct AggGroup {
    Cell label;
    std::vector<std::size_t> member_rows;
    // attr name -> collected cells in input row order
    std::vector<std::pair<std::string, std::vector<Cell>>> collected;
};

struct AggResult {
    Table table;
    std::vector<AggGroup> groups;
};

// --- multi-modal operators ---

Table mm_scan(const LatentHandle& latent, ExecContext& ctx);

// Joins on the path attribute plus any listed key attributes; when the table
// supplies the document-level key the first extraction phase is skipped.
Table mm_join(const Table& table, const LatentHandle& latent,
              const std::vector<std::string>& join_keys, ExecContext& ctx);

Table mm_union(const Table& table, const LatentHandle& latent, ExecContext& ctx);

LatentHandle mm_project(const LatentHandle& latent, const std::vector<std::string>& attrs);

class MultiModalIndex;
LatentHandle mm_select_latent(const LatentHandle& latent, const Condition& cond,
                              const MultiModalIndex* index, ExecContext& ctx);

Table mm_select_table(const Table& table, const Condition& cond, ExecContext& ctx);

AggResult mm_aggregate(const Table& table, const std::string& group_attr, AggFunc func,
                       ExecContext& ctx);

// --- traditional operators (exact string semantics) ---

Table t_join(const Table& left, const Table& right, const std::vector<std::string>& keys);
Table t_union(const Table& left, const Table& right);
Table t_project(const Table& table, const std::vector<std::string>& attrs);
Table t_select(const Table& table, const Condition& cond);
AggResult t_aggregate(const Table& table, const std::string& group_attr, AggFunc func);

// --- extraction internals exposed for the index builder and tests ---

struct ExtractedValue {
    Span span;
    std::vector<float> embed;
};

// All values of one attribute across a document, windows already merged and
// deduplicated. Used by the index builder.
std::vector<ExtractedValue> extract_attribute_values(const Document& doc,
                                                     const LatentHandle& latent,
                                                     std::size_t attr_index, ExecContext& ctx);

bool rows_equal(const Row& a, const Row& b);
bool tables_equal_as_multisets(const Table& a, const Table& b);

}  // namespace ltq
