#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ltq/index.hpp"
#include "ltq/operators.hpp"

namespace ltq {

struct PlanNode;
using PlanPtr = std::unique_ptr<PlanNode>;

// A multi-modal query plan: traditional operators and MM operators over
// table references and latent-table references. Latent handles flow only
// into MM nodes; MMProject and MMSelectLatent are the only nodes that yield
// latent handles again.
struct PlanNode {
    enum class Op {
        TableRef,
        LatentRef,
        MMScan,
        MMJoin,
        MMUnion,
        MMProject,
        MMSelectLatent,
        MMSelectTable,
        MMAggregate,
        Join,
        Union,
        Project,
        Select,
        Aggregate,
    };

    Op op = Op::TableRef;
    std::string name;                 // TableRef / LatentRef
    std::vector<std::string> attrs;   // Project / MMProject
    std::vector<std::string> keys;    // Join / MMJoin
    std::optional<Condition> cond;    // Select / MMSelect*
    AggFunc agg = AggFunc::list;      // Aggregate / MMAggregate
    std::string agg_attr;
    std::vector<PlanPtr> children;

    PlanPtr clone() const;
    std::string render() const;
};

std::string to_string(PlanNode::Op op);

// Catalog plus the indexes available to the optimizer and executor. Index
// keys are "<latent qualified name>.<attribute>".
struct PlanEnv {
    const Catalog& catalog;
    std::map<std::string, MultiModalIndex> indexes;

    const MultiModalIndex* find_index(const std::string& latent, const std::string& attr) const {
        auto it = indexes.find(latent + "." + attr);
        return it == indexes.end() ? nullptr : &it->second;
    }
};

// Static type of a plan node: either a latent handle (schema + projection) or
// a table schema. `extracted` marks attributes whose values may originate
// from text extraction, which is what the MMSelectTable/MMAggregate rewrites
// trigger on.
struct PlanType {
    bool is_latent = false;
    const LatentTableSchema* schema = nullptr;
    std::vector<std::size_t> latent_attrs;
    std::vector<Attribute> attrs;
    std::set<std::string> extracted;

    std::vector<std::string> latent_attr_names() const;
};

PlanType type_check(const PlanNode& plan, const PlanEnv& env);

// Parses the ASCII plan notation, e.g.
//   MMJoin[path,name](Join[name](player_info, player_to_reports), reports.Player)
//   Scan(reports.Player)
//   Select[Points=28](Scan(reports.Player))
// "Scan" is accepted as a spelling of MMScan since it always consumes a
// latent reference. Unknown catalog names and syntax errors carry positions.
PlanPtr parse_plan(const std::string& text, const PlanEnv& env);

// JSON tree form: {"op": "MMScan", "inputs": [...], "name"/"attrs"/"keys"/
// "cond"/"agg" as needed}.
PlanPtr parse_plan_json(const std::string& json_text, const PlanEnv& env);

struct RewriteResult {
    PlanPtr plan;
    std::size_t applications = 0;
};

// Rule-based rewrite to fixpoint: fuses path joins and unions over scans into
// MMJoin/MMUnion, pushes projections into latent handles, routes selections
// through the multi-modal index where one exists, and upgrades selections and
// aggregations over extracted columns to their DD-backed variants.
RewriteResult rewrite(const PlanNode& plan, const PlanEnv& env);

struct ExecutionResult {
    Table table;
    ExecReport report;
    std::optional<AggResult> aggregation;  // present when the root aggregates
};

ExecutionResult execute(const PlanNode& plan, const PlanEnv& env, const Encoder& encoder,
                        const HeadWeights& weights, const ExecOptions& options = {});

}  // namespace ltq
