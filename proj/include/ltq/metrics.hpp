#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ltq/datamodel.hpp"

namespace ltq {

// A gold value with the surface forms that count as correct.
struct ValueWithAlts {
    std::string value;
    std::vector<std::string> alternatives;  // includes value itself

    static ValueWithAlts exact(std::string v) { return ValueWithAlts{v, {v}}; }
};

bool matches_alternatives(std::string_view predicted, const ValueWithAlts& gold);

struct GoldEvalRow {
    std::optional<ValueWithAlts> key;            // set for multi-row tables
    std::map<std::string, ValueWithAlts> cells;  // scored attributes (non-key)
};

struct GoldDocRows {
    std::string path;
    std::vector<GoldEvalRow> rows;
};

// Mean per-text F1 with exact-match cells. Rows align per text: by key value
// against the gold alternatives for multi-row tables (greedily, in document
// order), as the unique pair otherwise. Cell-level micro precision/recall run
// over aligned non-key cells; predictions on unaligned rows count as
// precision errors. Predicted rows are attributed to texts via provenance;
// rows without provenance (table-born) are not scored.
double f1_per_text(const Table& predicted, const std::vector<GoldDocRows>& gold,
                   const std::optional<std::string>& key_attr);

struct EvalGroup {
    ValueWithAlts label;
    std::vector<std::pair<std::string, std::vector<ValueWithAlts>>> collected;
};

// Mean per-group F1: groups align by label (with alternatives); per group the
// collected value multisets meet in micro precision/recall; gold groups with
// no match score 0. The mean runs over gold groups.
double f1_per_group(const std::vector<EvalGroup>& predicted, const std::vector<EvalGroup>& gold);

}  // namespace ltq
