#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ltq/annotations.hpp"
#include "ltq/metrics.hpp"
#include "ltq/planner.hpp"

namespace ltq {

struct BenchQuery {
    std::string id;
    std::string text;
};

// Everything a benchmark run needs: catalog, gold labels and the plan list.
struct AnnotatedDataset {
    Catalog catalog;
    std::vector<CollectionAnnotation> annotations;
    std::vector<BenchQuery> queries;

    std::vector<const CollectionAnnotation*> annotation_ptrs() const;
    const CollectionAnnotation* annotation_for(std::string_view latent) const;
    void validate() const;
};

// --- gold-mode evaluation ---
//
// Executes a plan against the annotations instead of an encoder: scans yield
// the gold rows, joins/selections/groupings match values through their
// alternative sets. This is the independent route the oracle-driven engine is
// compared against.

struct GoldTable {
    std::vector<Attribute> attrs;
    struct GoldRow {
        std::vector<std::optional<ValueWithAlts>> cells;
        std::string provenance;
    };
    std::vector<GoldRow> rows;

    std::optional<std::size_t> attr_index(std::string_view name) const;
};

struct GoldResult {
    GoldTable table;
    std::optional<std::vector<EvalGroup>> groups;  // when the root aggregates
};

GoldResult execute_gold(const PlanNode& plan, const AnnotatedDataset& dataset);

// Gold rows per text for f1_per_text, computed from a gold-mode result table.
std::vector<GoldDocRows> gold_rows_per_text(const GoldTable& table,
                                            const std::optional<std::string>& key_attr);

// Document-level key of the (first) latent table a plan touches, when that
// table is multi-row and the key survives into the output.
std::optional<std::string> plan_key_attr(const PlanNode& plan, const Catalog& catalog);

std::vector<EvalGroup> eval_groups_from_aggregation(const AggResult& agg);

// --- benchmark runner ---

struct QueryEval {
    std::string id;
    double f1 = 0.0;
    double runtime_ms = 0.0;
    std::size_t encode_calls = 0;
    std::size_t docs_touched = 0;
    std::string error;  // per-plan failures are recorded, the run continues
};

struct BenchOptions {
    bool apply_rewrite = true;
    ExecOptions exec;
};

// Builds any indexes that MMSelectLatent nodes (or indexable Select-over-Scan
// patterns) need, then executes every plan and scores it: per-group F1 when
// the root aggregates, per-text F1 otherwise.
std::vector<QueryEval> run_benchmark(const AnnotatedDataset& dataset, const Encoder& encoder,
                                     const HeadWeights& weights, const BenchOptions& options = {});

// Deterministic result CSV (query_id,f1,encode_calls,docs_touched): identical
// inputs and seed produce byte-identical files. Timings go to the report.
std::string results_csv(const std::vector<QueryEval>& results);
// Full report CSV including runtime_ms (not byte-stable across runs).
std::string report_csv(const std::vector<QueryEval>& results);
std::string report_text(const std::vector<QueryEval>& results);

// Index targets referenced by a plan, as (latent qualified name, attribute).
std::vector<std::pair<std::string, std::string>> index_targets(const PlanNode& plan,
                                                               const PlanEnv& env);

}  // namespace ltq
