#include "ltq/harness.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <variant>

namespace ltq {

std::vector<const CollectionAnnotation*> AnnotatedDataset::annotation_ptrs() const {
    std::vector<const CollectionAnnotation*> out;
    for (const auto& a : annotations) out.push_back(&a);
    return out;
}

const CollectionAnnotation* AnnotatedDataset::annotation_for(std::string_view latent) const {
    for (const auto& a : annotations) {
        if (a.latent_table == latent) return &a;
    }
    return nullptr;
}

void AnnotatedDataset::validate() const {
    for (const auto& ann : annotations) {
        const auto& schema = catalog.latent(ann.latent_table);
        check_annotation(ann, catalog.collection(schema.collection));
    }
}

std::optional<std::size_t> GoldTable::attr_index(std::string_view name) const {
    for (std::size_t i = 0; i < attrs.size(); ++i) {
        if (attrs[i].name == name) return i;
    }
    return std::nullopt;
}

namespace {

bool alts_match(const ValueWithAlts& a, const ValueWithAlts& b) {
    if (matches_alternatives(a.value, b) || matches_alternatives(b.value, a)) return true;
    for (const auto& alt : a.alternatives) {
        if (matches_alternatives(alt, b)) return true;
    }
    return false;
}

struct GoldLatent {
    const LatentTableSchema* schema = nullptr;
    std::vector<std::size_t> attrs;
    std::optional<std::set<std::string>> docs_filter;
};

struct GoldEvaluator {
    const AnnotatedDataset& ds;
    std::optional<std::vector<EvalGroup>> root_groups;

    using Value = std::variant<GoldTable, GoldLatent>;

    GoldTable table_of(const PlanNode& node) {
        Value v = eval(node, false);
        if (!std::holds_alternative<GoldTable>(v)) {
            throw ValidationError("latent handle reached a table operator");
        }
        return std::get<GoldTable>(std::move(v));
    }

    GoldLatent latent_of(const PlanNode& node) {
        Value v = eval(node, false);
        if (!std::holds_alternative<GoldLatent>(v)) {
            throw ValidationError("table reached a latent operator");
        }
        return std::get<GoldLatent>(std::move(v));
    }

    GoldTable scan(const GoldLatent& latent) {
        const CollectionAnnotation* ann = ds.annotation_for(latent.schema->qualified_name());
        if (ann == nullptr) {
            throw ValidationError("no annotations for " + latent.schema->qualified_name());
        }
        GoldTable out;
        for (std::size_t idx : latent.attrs) {
            out.attrs.push_back(latent.schema->latent_attributes[idx]);
        }
        out.attrs.push_back(Attribute{"path", AttrType::path});
        const auto& collection = ds.catalog.collection(latent.schema->collection);
        for (const auto& doc : collection.documents) {
            if (latent.docs_filter && !latent.docs_filter->contains(doc.path)) continue;
            const DocAnnotation* da = ann->find(doc.path);
            if (da == nullptr) continue;
            for (const auto& grow : da->rows) {
                GoldTable::GoldRow row;
                for (std::size_t idx : latent.attrs) {
                    const auto& attr = latent.schema->latent_attributes[idx].name;
                    auto it = grow.cells.find(attr);
                    if (it == grow.cells.end() || it->second.alternatives.empty()) {
                        row.cells.push_back(std::nullopt);
                    } else {
                        row.cells.push_back(ValueWithAlts{it->second.alternatives.front(),
                                                          it->second.alternatives});
                    }
                }
                row.cells.push_back(ValueWithAlts::exact(doc.path));
                row.provenance = doc.path;
                out.rows.push_back(std::move(row));
            }
        }
        return out;
    }

    GoldTable from_table(const Table& table) {
        GoldTable out;
        out.attrs = table.attributes();
        for (const Row& row : table.rows()) {
            GoldTable::GoldRow grow;
            for (const Cell& cell : row.cells) {
                if (cell.value) {
                    grow.cells.push_back(ValueWithAlts::exact(*cell.value));
                } else {
                    grow.cells.push_back(std::nullopt);
                }
            }
            grow.provenance = row.provenance;
            out.rows.push_back(std::move(grow));
        }
        return out;
    }

    GoldTable join(const GoldTable& left, const GoldTable& right,
                   const std::vector<std::string>& keys) {
        std::vector<std::pair<std::size_t, std::size_t>> key_idx;
        for (const auto& key : keys) {
            std::string name = key;
            if (name == "path") {
                for (const auto& a : left.attrs) {
                    if (a.type == AttrType::path) name = a.name;
                }
            }
            auto li = left.attr_index(name);
            auto ri = right.attr_index(name);
            if (!ri && key == "path") ri = right.attr_index("path");
            if (!li || !ri) throw ValidationError("gold join key '" + key + "' missing");
            key_idx.emplace_back(*li, *ri);
        }
        GoldTable out;
        out.attrs = left.attrs;
        std::vector<std::size_t> right_keep;
        for (std::size_t i = 0; i < right.attrs.size(); ++i) {
            bool is_key = std::any_of(key_idx.begin(), key_idx.end(),
                                      [&](const auto& p) { return p.second == i; });
            if (!is_key) {
                out.attrs.push_back(right.attrs[i]);
                right_keep.push_back(i);
            }
        }
        for (const auto& lrow : left.rows) {
            for (const auto& rrow : right.rows) {
                bool match = true;
                for (const auto& [li, ri] : key_idx) {
                    if (!lrow.cells[li] || !rrow.cells[ri] ||
                        !alts_match(*lrow.cells[li], *rrow.cells[ri])) {
                        match = false;
                        break;
                    }
                }
                if (!match) continue;
                GoldTable::GoldRow row;
                row.cells = lrow.cells;
                for (std::size_t i : right_keep) row.cells.push_back(rrow.cells[i]);
                row.provenance = !rrow.provenance.empty() ? rrow.provenance : lrow.provenance;
                out.rows.push_back(std::move(row));
            }
        }
        return out;
    }

    GoldTable union_(const GoldTable& left, const GoldTable& right) {
        std::vector<std::size_t> mapping;
        for (const auto& attr : left.attrs) {
            auto idx = right.attr_index(attr.name);
            if (!idx) throw ValidationError("gold union misses attribute '" + attr.name + "'");
            mapping.push_back(*idx);
        }
        GoldTable out = left;
        for (const auto& rrow : right.rows) {
            GoldTable::GoldRow row;
            for (std::size_t i : mapping) row.cells.push_back(rrow.cells[i]);
            row.provenance = rrow.provenance;
            out.rows.push_back(std::move(row));
        }
        return out;
    }

    std::vector<EvalGroup> aggregate(const GoldTable& table, const std::string& group_attr) {
        auto gidx = table.attr_index(group_attr);
        if (!gidx) throw ValidationError("gold aggregation misses '" + group_attr + "'");

        std::vector<std::vector<std::size_t>> clusters;
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const auto& cell = table.rows[r].cells[*gidx];
            bool placed = false;
            for (auto& cluster : clusters) {
                const auto& other = table.rows[cluster.front()].cells[*gidx];
                bool same = (!cell && !other) ||
                            (cell && other && alts_match(*cell, *other));
                if (same) {
                    cluster.push_back(r);
                    placed = true;
                    break;
                }
            }
            if (!placed) clusters.push_back({r});
        }

        std::vector<EvalGroup> groups;
        for (const auto& cluster : clusters) {
            EvalGroup group;
            std::size_t best = cluster.front();
            std::set<std::string> label_alts;
            for (std::size_t r : cluster) {
                const auto& cell = table.rows[r].cells[*gidx];
                if (!cell) continue;
                if (!table.rows[best].cells[*gidx] ||
                    cell->value.size() > table.rows[best].cells[*gidx]->value.size()) {
                    best = r;
                }
                for (const auto& alt : cell->alternatives) label_alts.insert(alt);
                label_alts.insert(cell->value);
            }
            const auto& best_cell = table.rows[best].cells[*gidx];
            group.label.value = best_cell ? best_cell->value : "";
            group.label.alternatives.assign(label_alts.begin(), label_alts.end());
            if (group.label.alternatives.empty()) {
                group.label.alternatives.push_back(group.label.value);
            }
            for (std::size_t a = 0; a < table.attrs.size(); ++a) {
                if (a == *gidx || table.attrs[a].type == AttrType::path) continue;
                std::vector<ValueWithAlts> values;
                for (std::size_t r : cluster) {
                    if (table.rows[r].cells[a]) values.push_back(*table.rows[r].cells[a]);
                }
                group.collected.emplace_back(table.attrs[a].name, std::move(values));
            }
            groups.push_back(std::move(group));
        }
        return groups;
    }

    GoldTable groups_to_table(const std::vector<EvalGroup>& groups, const std::string& group_attr,
                              AggFunc func, const GoldTable& input) {
        GoldTable out;
        out.attrs.push_back(Attribute{group_attr, AttrType::text});
        if (func == AggFunc::count) out.attrs.push_back(Attribute{"count", AttrType::number});
        else {
            for (const auto& a : input.attrs) {
                if (a.name != group_attr && a.type != AttrType::path) {
                    out.attrs.push_back(Attribute{a.name, AttrType::text});
                }
            }
        }
        for (const auto& group : groups) {
            GoldTable::GoldRow row;
            row.cells.push_back(group.label);
            if (func == AggFunc::count) {
                std::size_t members = 0;
                if (!group.collected.empty()) {
                    members = group.collected.front().second.size();
                }
                row.cells.push_back(ValueWithAlts::exact(std::to_string(members)));
            } else {
                for (const auto& [attr, values] : group.collected) {
                    std::string joined;
                    for (const auto& v : values) {
                        if (!joined.empty()) joined += "; ";
                        joined += v.value;
                    }
                    row.cells.push_back(ValueWithAlts::exact(joined));
                }
            }
            out.rows.push_back(std::move(row));
        }
        return out;
    }

    Value eval(const PlanNode& node, bool is_root) {
        switch (node.op) {
            case PlanNode::Op::TableRef:
                return from_table(ds.catalog.table(node.name));
            case PlanNode::Op::LatentRef: {
                GoldLatent latent;
                latent.schema = &ds.catalog.latent(node.name);
                for (std::size_t i = 0; i < latent.schema->latent_attributes.size(); ++i) {
                    latent.attrs.push_back(i);
                }
                return latent;
            }
            case PlanNode::Op::MMProject: {
                GoldLatent latent = latent_of(*node.children[0]);
                GoldLatent out = latent;
                out.attrs.clear();
                for (const auto& name : node.attrs) {
                    auto idx = latent.schema->attr_index(name);
                    if (!idx) throw ValidationError("unknown latent attribute '" + name + "'");
                    out.attrs.push_back(*idx);
                }
                return out;
            }
            case PlanNode::Op::MMSelectLatent: {
                GoldLatent latent = latent_of(*node.children[0]);
                const CollectionAnnotation* ann =
                    ds.annotation_for(latent.schema->qualified_name());
                std::set<std::string> selected;
                for (const auto& da : ann->documents) {
                    if (latent.docs_filter && !latent.docs_filter->contains(da.doc_path)) continue;
                    for (const auto& grow : da.rows) {
                        auto it = grow.cells.find(node.cond->attr);
                        if (it == grow.cells.end()) continue;
                        ValueWithAlts gold{it->second.alternatives.front(),
                                           it->second.alternatives};
                        if (matches_alternatives(node.cond->value, gold)) {
                            selected.insert(da.doc_path);
                            break;
                        }
                    }
                }
                GoldLatent out = latent;
                out.docs_filter = std::move(selected);
                return out;
            }
            case PlanNode::Op::MMScan:
                return scan(latent_of(*node.children[0]));
            case PlanNode::Op::MMJoin: {
                GoldTable left = table_of(*node.children[0]);
                GoldTable right = scan(latent_of(*node.children[1]));
                std::vector<std::string> keys = node.keys;
                if (std::find(keys.begin(), keys.end(), "path") == keys.end()) {
                    keys.push_back("path");
                }
                return join(left, right, keys);
            }
            case PlanNode::Op::Join:
                return join(table_of(*node.children[0]), table_of(*node.children[1]), node.keys);
            case PlanNode::Op::MMUnion:
                return union_(table_of(*node.children[0]), scan(latent_of(*node.children[1])));
            case PlanNode::Op::Union:
                return union_(table_of(*node.children[0]), table_of(*node.children[1]));
            case PlanNode::Op::Project: {
                GoldTable child = table_of(*node.children[0]);
                GoldTable out;
                std::vector<std::size_t> idxs;
                for (const auto& name : node.attrs) {
                    auto idx = child.attr_index(name);
                    if (!idx) throw ValidationError("unknown attribute '" + name + "'");
                    idxs.push_back(*idx);
                    out.attrs.push_back(child.attrs[*idx]);
                }
                for (const auto& row : child.rows) {
                    GoldTable::GoldRow r;
                    for (std::size_t i : idxs) r.cells.push_back(row.cells[i]);
                    r.provenance = row.provenance;
                    out.rows.push_back(std::move(r));
                }
                return out;
            }
            case PlanNode::Op::Select:
            case PlanNode::Op::MMSelectTable: {
                GoldTable child = table_of(*node.children[0]);
                auto idx = child.attr_index(node.cond->attr);
                if (!idx) throw ValidationError("unknown attribute '" + node.cond->attr + "'");
                GoldTable out;
                out.attrs = child.attrs;
                for (const auto& row : child.rows) {
                    const auto& cell = row.cells[*idx];
                    if (cell && matches_alternatives(node.cond->value, *cell)) {
                        out.rows.push_back(row);
                    }
                }
                return out;
            }
            case PlanNode::Op::Aggregate:
            case PlanNode::Op::MMAggregate: {
                GoldTable child = table_of(*node.children[0]);
                auto groups = aggregate(child, node.agg_attr);
                GoldTable out = groups_to_table(groups, node.agg_attr, node.agg, child);
                if (is_root) root_groups = std::move(groups);
                return out;
            }
        }
        throw ValidationError("unhandled plan node in gold evaluation");
    }
};

}  // namespace

GoldResult execute_gold(const PlanNode& plan, const AnnotatedDataset& dataset) {
    GoldEvaluator evaluator{dataset, std::nullopt};
    GoldResult result;
    auto value = evaluator.eval(plan, true);
    if (!std::holds_alternative<GoldTable>(value)) {
        throw ValidationError("gold plan yields a latent handle");
    }
    result.table = std::get<GoldTable>(std::move(value));
    result.groups = std::move(evaluator.root_groups);
    return result;
}

std::vector<GoldDocRows> gold_rows_per_text(const GoldTable& table,
                                            const std::optional<std::string>& key_attr) {
    std::map<std::string, GoldDocRows> by_path;
    for (const auto& row : table.rows) {
        if (row.provenance.empty()) continue;
        GoldDocRows& doc = by_path[row.provenance];
        doc.path = row.provenance;
        GoldEvalRow out;
        for (std::size_t i = 0; i < table.attrs.size(); ++i) {
            const Attribute& attr = table.attrs[i];
            if (attr.type == AttrType::path || !row.cells[i]) continue;
            if (key_attr && attr.name == *key_attr) {
                out.key = row.cells[i];
            } else {
                out.cells.emplace(attr.name, *row.cells[i]);
            }
        }
        doc.rows.push_back(std::move(out));
    }
    std::vector<GoldDocRows> out;
    for (auto& [path, doc] : by_path) out.push_back(std::move(doc));
    return out;
}

namespace {

const LatentTableSchema* first_latent(const PlanNode& plan, const Catalog& catalog) {
    if (plan.op == PlanNode::Op::LatentRef) return &catalog.latent(plan.name);
    for (const auto& child : plan.children) {
        if (const auto* schema = first_latent(*child, catalog)) return schema;
    }
    return nullptr;
}

}  // namespace

std::optional<std::string> plan_key_attr(const PlanNode& plan, const Catalog& catalog) {
    const LatentTableSchema* schema = first_latent(plan, catalog);
    if (schema == nullptr || schema->kind != TableKind::multi_row) return std::nullopt;
    return schema->document_level_key;
}

std::vector<EvalGroup> eval_groups_from_aggregation(const AggResult& agg) {
    std::vector<EvalGroup> groups;
    for (const auto& g : agg.groups) {
        EvalGroup group;
        group.label = ValueWithAlts::exact(g.label.value.value_or(""));
        for (const auto& [attr, cells] : g.collected) {
            std::vector<ValueWithAlts> values;
            for (const auto& cell : cells) {
                if (cell.value) values.push_back(ValueWithAlts::exact(*cell.value));
            }
            group.collected.emplace_back(attr, std::move(values));
        }
        groups.push_back(std::move(group));
    }
    return groups;
}

std::vector<std::pair<std::string, std::string>> index_targets(const PlanNode& plan,
                                                               const PlanEnv& env) {
    std::vector<std::pair<std::string, std::string>> targets;
    auto add = [&](const std::string& latent, const std::string& attr) {
        auto pair = std::make_pair(latent, attr);
        if (std::find(targets.begin(), targets.end(), pair) == targets.end()) {
            targets.push_back(std::move(pair));
        }
    };
    std::function<void(const PlanNode&)> walk = [&](const PlanNode& node) {
        if (node.op == PlanNode::Op::MMSelectLatent) {
            PlanType child = type_check(*node.children[0], env);
            add(child.schema->qualified_name(), node.cond->attr);
        }
        if (node.op == PlanNode::Op::Select && node.children[0]->op == PlanNode::Op::MMScan) {
            PlanType latent = type_check(*node.children[0]->children[0], env);
            if (latent.schema->kind == TableKind::single_row &&
                latent.schema->attr_index(node.cond->attr)) {
                add(latent.schema->qualified_name(), node.cond->attr);
            }
        }
        for (const auto& child : node.children) walk(*child);
    };
    walk(plan);
    return targets;
}

std::vector<QueryEval> run_benchmark(const AnnotatedDataset& dataset, const Encoder& encoder,
                                     const HeadWeights& weights, const BenchOptions& options) {
    PlanEnv env{dataset.catalog, {}};

    // Pre-build every index the plans will probe, once.
    for (const auto& query : dataset.queries) {
        try {
            PlanPtr plan = parse_plan(query.text, env);
            for (const auto& [latent, attr] : index_targets(*plan, env)) {
                std::string key = latent + "." + attr;
                if (env.indexes.contains(key)) continue;
                ExecContext ctx(encoder, weights, options.exec);
                env.indexes.emplace(key,
                                    build_index(LatentHandle::open(dataset.catalog, latent), attr,
                                                ctx));
            }
        } catch (const std::exception&) {
            // parse errors surface again below, per query
        }
    }

    std::vector<QueryEval> results;
    for (const auto& query : dataset.queries) {
        QueryEval eval;
        eval.id = query.id;
        const auto started = std::chrono::steady_clock::now();
        try {
            PlanPtr plan = parse_plan(query.text, env);
            GoldResult gold = execute_gold(*plan, dataset);

            PlanPtr runnable = options.apply_rewrite ? rewrite(*plan, env).plan : plan->clone();
            ExecutionResult run = execute(*runnable, env, encoder, weights, options.exec);

            if (gold.groups) {
                if (!run.aggregation) throw ExecError("plan root does not aggregate");
                eval.f1 = f1_per_group(eval_groups_from_aggregation(*run.aggregation),
                                       *gold.groups);
            } else {
                auto key_attr = plan_key_attr(*plan, dataset.catalog);
                if (key_attr && !run.table.attr_index(*key_attr)) key_attr = std::nullopt;
                eval.f1 = f1_per_text(run.table, gold_rows_per_text(gold.table, key_attr),
                                      key_attr);
            }
            eval.encode_calls = run.report.encode_calls;
            eval.docs_touched = run.report.docs_touched.size();
        } catch (const std::exception& e) {
            eval.error = e.what();
        }
        eval.runtime_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - started)
                              .count();
        results.push_back(std::move(eval));
    }
    return results;
}

namespace {

std::string format_f1(double f1) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(6);
    out << f1;
    return out.str();
}

}  // namespace

std::string results_csv(const std::vector<QueryEval>& results) {
    std::ostringstream out;
    out << "query_id,f1,encode_calls,docs_touched\n";
    for (const auto& r : results) {
        out << r.id << "," << (r.error.empty() ? format_f1(r.f1) : "error") << ","
            << r.encode_calls << "," << r.docs_touched << "\n";
    }
    return out.str();
}

std::string report_csv(const std::vector<QueryEval>& results) {
    std::ostringstream out;
    out << "query_id,f1,runtime_ms,encode_calls,docs_touched\n";
    for (const auto& r : results) {
        out << r.id << "," << (r.error.empty() ? format_f1(r.f1) : "error") << "," << r.runtime_ms
            << "," << r.encode_calls << "," << r.docs_touched << "\n";
    }
    return out.str();
}

std::string report_text(const std::vector<QueryEval>& results) {
    std::ostringstream out;
    out << "query        f1    runtime_ms  encode_calls  docs_touched\n";
    for (const auto& r : results) {
        out << r.id;
        for (std::size_t i = r.id.size(); i < 10; ++i) out << ' ';
        if (r.error.empty()) {
            out << "  " << format_f1(r.f1) << "  " << r.runtime_ms << "  " << r.encode_calls
                << "  " << r.docs_touched << "\n";
        } else {
            out << "  FAILED: " << r.error << "\n";
        }
    }
    return out.str();
}

}  // namespace ltq
