#include "ltq/metrics.hpp"

#include <algorithm>
#include <set>

namespace ltq {

bool matches_alternatives(std::string_view predicted, const ValueWithAlts& gold) {
    std::string norm = normalize_value(predicted);
    if (norm == normalize_value(gold.value)) return true;
    for (const auto& alt : gold.alternatives) {
        if (norm == normalize_value(alt)) return true;
    }
    return false;
}

namespace {

double f1_from_counts(std::size_t correct, std::size_t predicted, std::size_t gold) {
    if (predicted == 0 && gold == 0) return 1.0;
    if (predicted == 0 || gold == 0) return 0.0;
    const double p = static_cast<double>(correct) / static_cast<double>(predicted);
    const double r = static_cast<double>(correct) / static_cast<double>(gold);
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

}  // namespace

double f1_per_text(const Table& predicted, const std::vector<GoldDocRows>& gold,
                   const std::optional<std::string>& key_attr) {
    bool has_path_column = false;
    for (const auto& a : predicted.attributes()) {
        has_path_column = has_path_column || a.type == AttrType::path;
    }
    std::optional<std::size_t> key_idx;
    if (key_attr) key_idx = predicted.attr_index(*key_attr);
    if (key_attr && !key_idx) throw ValidationError("predicted table lacks key '" + *key_attr + "'");

    std::map<std::string, std::vector<const Row*>> by_text;
    for (const Row& row : predicted.rows()) {
        if (row.provenance.empty()) continue;  // table-born rows are not scored
        by_text[row.provenance].push_back(&row);
    }
    if (by_text.empty() && !predicted.rows().empty() && !has_path_column) {
        throw ValidationError("predicted rows carry no path; cannot attribute them to texts");
    }

    std::set<std::string> texts;
    for (const auto& g : gold) texts.insert(g.path);
    for (const auto& [path, rows] : by_text) texts.insert(path);
    if (texts.empty()) return 1.0;

    double sum = 0.0;
    for (const auto& path : texts) {
        const GoldDocRows* gold_doc = nullptr;
        for (const auto& g : gold) {
            if (g.path == path) gold_doc = &g;
        }
        static const std::vector<const Row*> kNoRows;
        const auto it = by_text.find(path);
        const std::vector<const Row*>& rows = it == by_text.end() ? kNoRows : it->second;

        // align predicted rows to gold rows, greedily in document order
        const std::size_t gold_rows = gold_doc ? gold_doc->rows.size() : 0;
        std::vector<bool> gold_used(gold_rows, false);
        std::vector<std::ptrdiff_t> aligned(rows.size(), -1);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (!gold_doc) break;
            if (key_idx) {
                const auto& key_val = rows[r]->cells[*key_idx].value;
                if (!key_val) continue;
                for (std::size_t g = 0; g < gold_rows; ++g) {
                    if (gold_used[g]) continue;
                    const auto& gkey = gold_doc->rows[g].key;
                    if (gkey && matches_alternatives(*key_val, *gkey)) {
                        aligned[r] = static_cast<std::ptrdiff_t>(g);
                        gold_used[g] = true;
                        break;
                    }
                }
            } else {
                for (std::size_t g = 0; g < gold_rows; ++g) {
                    if (!gold_used[g]) {
                        aligned[r] = static_cast<std::ptrdiff_t>(g);
                        gold_used[g] = true;
                        break;
                    }
                }
            }
        }

        std::size_t correct = 0, pred_count = 0, gold_count = 0;
        if (gold_doc) {
            for (const auto& grow : gold_doc->rows) gold_count += grow.cells.size();
        }
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const Row* row = rows[r];
            const GoldEvalRow* grow =
                aligned[r] >= 0 ? &gold_doc->rows[static_cast<std::size_t>(aligned[r])] : nullptr;
            for (std::size_t c = 0; c < predicted.attributes().size(); ++c) {
                const Attribute& attr = predicted.attributes()[c];
                if (attr.type == AttrType::path) continue;
                if (key_attr && attr.name == *key_attr) continue;
                if (!row->cells[c].value) continue;  // NULL is an abstention
                ++pred_count;
                if (grow != nullptr) {
                    auto cell_it = grow->cells.find(attr.name);
                    // predicting where gold has no value is a precision error
                    if (cell_it != grow->cells.end() &&
                        matches_alternatives(*row->cells[c].value, cell_it->second)) {
                        ++correct;
                    }
                }
            }
        }
        sum += f1_from_counts(correct, pred_count, gold_count);
    }
    return sum / static_cast<double>(texts.size());
}

double f1_per_group(const std::vector<EvalGroup>& predicted, const std::vector<EvalGroup>& gold) {
    if (gold.empty()) return predicted.empty() ? 1.0 : 0.0;

    std::vector<bool> used(predicted.size(), false);
    double sum = 0.0;
    for (const auto& ggroup : gold) {
        const EvalGroup* match = nullptr;
        for (std::size_t p = 0; p < predicted.size(); ++p) {
            if (used[p]) continue;
            if (matches_alternatives(predicted[p].label.value, ggroup.label)) {
                match = &predicted[p];
                used[p] = true;
                break;
            }
        }
        if (match == nullptr) continue;  // contributes 0

        std::size_t correct = 0, pred_count = 0, gold_count = 0;
        for (const auto& [attr, gvalues] : ggroup.collected) {
            gold_count += gvalues.size();
            const std::vector<ValueWithAlts>* pvalues = nullptr;
            for (const auto& [pattr, pv] : match->collected) {
                if (pattr == attr) pvalues = &pv;
            }
            if (pvalues == nullptr) continue;
            std::vector<bool> gold_used(gvalues.size(), false);
            for (const auto& pv : *pvalues) {
                ++pred_count;
                for (std::size_t g = 0; g < gvalues.size(); ++g) {
                    if (gold_used[g]) continue;
                    if (matches_alternatives(pv.value, gvalues[g])) {
                        gold_used[g] = true;
                        ++correct;
                        break;
                    }
                }
            }
        }
        sum += f1_from_counts(correct, pred_count, gold_count);
    }
    return sum / static_cast<double>(gold.size());
}

}  // namespace ltq
