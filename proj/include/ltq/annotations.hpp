#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ltq/datamodel.hpp"

namespace ltq {

// Gold labels for one latent table over one text collection. Span ids are
// implicit: spans are numbered in (row index, attribute name sorted
// lexicographically, span index) order within each document, and
// duplicate_groups refers to those ids.
struct GoldSpan {
    std::size_t token_start = 0;
    std::size_t token_end = 0;  // exclusive
};

struct GoldCell {
    std::vector<GoldSpan> spans;
    std::vector<std::string> alternatives;  // each counts as a correct value
};

struct GoldRow {
    std::optional<std::string> key;  // document-level key value, multi-row only
    std::map<std::string, GoldCell> cells;
};

struct DocAnnotation {
    std::string doc_path;
    std::vector<GoldRow> rows;
    std::vector<std::vector<std::size_t>> duplicate_groups;

    std::size_t span_count() const;
    // Resolves a span id to (row, attr, span index within the cell).
    struct SpanRef {
        std::size_t row = 0;
        std::string attr;
        std::size_t span = 0;
    };
    SpanRef resolve_span(std::size_t span_id) const;
};

struct CollectionAnnotation {
    std::string latent_table;  // qualified name the labels describe
    std::vector<DocAnnotation> documents;

    const DocAnnotation* find(std::string_view doc_path) const;
};

CollectionAnnotation annotation_from_json(const std::string& json_text);
std::string annotation_to_json(const CollectionAnnotation& ann);

void check_annotation(const CollectionAnnotation& ann, const TextCollection& collection);

// Global concept identities: two gold values name the same concept when, for
// the same attribute, their alternative sets are connected (directly or
// transitively) or their spans share a duplicate group. Built once over all
// annotations; ids are dense and assigned in scan order.
class ConceptTable {
public:
    static ConceptTable build(const std::vector<const CollectionAnnotation*>& annotations);

    // -1 when the value is unknown for that attribute.
    int concept_of(std::string_view attr, std::string_view value) const;
    int count() const { return count_; }

private:
    std::map<std::string, int, std::less<>> by_key_;
    int count_ = 0;
};

}  // namespace ltq
