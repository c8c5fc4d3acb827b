#include "ltq/operators.hpp"

#include <algorithm>
#include <map>
#include <random>

#include "ltq/index.hpp"

namespace ltq {

std::vector<Attribute> LatentHandle::projected_attributes() const {
    std::vector<Attribute> out;
    out.reserve(attrs.size());
    for (std::size_t idx : attrs) out.push_back(schema->latent_attributes[idx]);
    return out;
}

std::vector<const Document*> LatentHandle::documents() const {
    std::vector<const Document*> docs;
    for (const auto& d : collection->documents) {
        if (docs_filter && !docs_filter->contains(d.path)) continue;
        docs.push_back(&d);
    }
    return docs;
}

LatentHandle LatentHandle::open(const Catalog& catalog, std::string_view qualified) {
    LatentHandle handle;
    handle.schema = &catalog.latent(qualified);
    handle.collection = &catalog.collection(handle.schema->collection);
    handle.attrs.resize(handle.schema->latent_attributes.size());
    for (std::size_t i = 0; i < handle.attrs.size(); ++i) handle.attrs[i] = i;
    return handle;
}

EncoderOutput ExecContext::encode(std::span<const RowContext> group) {
    ++report.encode_calls;
    for (const auto& row : group) {
        if (row.doc != nullptr && !row.doc->path.empty()) {
            report.docs_touched.insert(row.doc->path);
        }
    }
    return encoder.encode(group);
}

std::size_t ExecContext::window_budget(const LinearizedSequence& segment) const {
    const std::size_t limit = encoder.context_length();
    const std::size_t fixed = segment.token_count() + 1;  // +1 for [SEP]
    if (fixed + 1 > limit) {
        throw ExecError("linearized schema needs " + std::to_string(fixed) +
                        " tokens and leaves no room for text in a context of " +
                        std::to_string(limit));
    }
    return limit - fixed;
}

std::vector<float> embed_query_value(ExecContext& ctx, std::string_view attr,
                                     std::string_view value) {
    if (value.empty()) throw ValidationError("cannot embed an empty query value");
    if (auto direct = ctx.encoder.lookup_value_embedding(attr, value)) {
        ++ctx.report.encode_calls;
        return *direct;
    }
    std::string text = std::string(attr) + " is " + std::string(value);
    Document doc = Document::make("", std::move(text));
    const std::size_t value_tokens = tokenize(value).size();
    const std::size_t total = doc.tokens.size();
    RowContext row;
    row.doc = &doc;
    row.window = Window{0, total, 0};
    EncoderOutput out = ctx.encode(std::span<const RowContext>(&row, 1));
    Span span;
    span.doc_path = doc.path;
    span.token_start = total - value_tokens;
    span.token_end = total;
    return span_embed(span, out.rows.front(),
                      static_cast<std::size_t>(out.dim), 0);
}

namespace {

std::map<std::string, std::string> tuple_values(const Table& table, const Row& row,
                                                const std::vector<std::string>& skip) {
    std::map<std::string, std::string> values;
    for (std::size_t i = 0; i < table.attributes().size(); ++i) {
        const Attribute& attr = table.attributes()[i];
        if (attr.type == AttrType::path) continue;
        if (std::find(skip.begin(), skip.end(), attr.name) != skip.end()) continue;
        if (row.cells[i].value) values[attr.name] = *row.cells[i].value;
    }
    return values;
}

struct ExtractionTask {
    const Document* doc = nullptr;
    std::vector<Attribute> latent_attrs;                   // projected, schema order
    std::map<std::string, std::string> latent_values;      // filled latent cells (phase 2 key)
    std::vector<Attribute> context_attrs;                  // appended tuple context
    std::map<std::string, std::string> context_values;
    std::vector<std::map<std::string, std::string>> example_rows;  // union context
};

LinearizedSequence main_sequence(const ExtractionTask& task) {
    std::vector<Attribute> attrs = task.latent_attrs;
    attrs.insert(attrs.end(), task.context_attrs.begin(), task.context_attrs.end());
    std::map<std::string, std::string> values = task.context_values;
    values.insert(task.latent_values.begin(), task.latent_values.end());
    return linearize(attrs, &values);
}

// Collected spans per requested latent attribute, windows merged, exact
// duplicates dropped, sorted by token range.
std::vector<std::vector<ScoredSpan>> collect_spans(ExecContext& ctx, const ExtractionTask& task,
                                                   const std::vector<std::size_t>& wanted_cells,
                                                   bool use_rd) {
    const LinearizedSequence main_seq = main_sequence(task);
    std::vector<LinearizedSequence> example_seqs;
    for (const auto& ex : task.example_rows) {
        example_seqs.push_back(linearize(task.latent_attrs, &ex));
    }

    const std::size_t budget = ctx.window_budget(main_seq);
    const auto windows = slide_windows(task.doc->tokens.size(), budget);
    const std::size_t dim = static_cast<std::size_t>(ctx.encoder.dim());

    std::vector<std::vector<ScoredSpan>> collected(wanted_cells.size());
    for (const Window& win : windows) {
        std::vector<RowContext> group;
        for (const auto& seq : example_seqs) {
            RowContext ex;
            ex.table_segment = seq;
            group.push_back(std::move(ex));
        }
        RowContext main;
        main.doc = task.doc;
        main.window = win;
        main.table_segment = main_seq;
        group.push_back(std::move(main));
        const std::size_t main_idx = group.size() - 1;

        EncoderOutput out = ctx.encode(group);
        const RowEmbeddings& row = out.rows[main_idx];
        for (std::size_t w = 0; w < wanted_cells.size(); ++w) {
            const std::size_t cell = wanted_cells[w];
            std::vector<Span> spans;
            if (use_rd) {
                spans = row_detect(row, ctx.weights, cell, *task.doc, win.begin);
            } else {
                auto attr_embed = attribute_pool(out, cell);
                spans = attribute_detect(row, ctx.weights, attr_embed, *task.doc, win.begin);
            }
            for (auto& span : spans) {
                ScoredSpan scored;
                scored.embed = span_embed(span, row, dim, win.begin);
                scored.span = std::move(span);
                collected[w].push_back(std::move(scored));
            }
        }
    }

    for (auto& spans : collected) {
        std::sort(spans.begin(), spans.end(), [](const ScoredSpan& a, const ScoredSpan& b) {
            return std::tie(a.span.token_start, a.span.token_end) <
                   std::tie(b.span.token_start, b.span.token_end);
        });
        spans.erase(std::unique(spans.begin(), spans.end(),
                                [](const ScoredSpan& a, const ScoredSpan& b) {
                                    return a.span.token_start == b.span.token_start &&
                                           a.span.token_end == b.span.token_end;
                                }),
                    spans.end());
    }
    return collected;
}

// Deduplicates and keeps one value per cluster; `all_values` keeps every
// cluster (document-level key), otherwise only the cluster whose span occurs
// earliest in the document survives.
std::vector<ExtractedValue> dedup_values(const std::vector<ScoredSpan>& spans,
                                         const HeadWeights& weights, bool all_values) {
    std::vector<ExtractedValue> out;
    if (spans.empty()) return out;
    ClusterResult clusters = duplicate_detect(spans, weights);
    for (std::size_t c = 0; c < clusters.clusters.size(); ++c) {
        const ScoredSpan& rep = spans[clusters.representatives[c]];
        out.push_back(ExtractedValue{rep.span, rep.embed});
        if (!all_values) break;  // clusters are ordered by earliest member
    }
    return out;
}

Cell value_cell(const std::optional<ExtractedValue>& v, bool retain) {
    Cell cell;
    if (v) {
        cell.value = normalize_value(v->span.surface);
        if (retain) cell.embed = v->embed;
    }
    return cell;
}

struct MultiRowOutput {
    ExtractedValue key;
    std::vector<std::optional<ExtractedValue>> dependents;  // by dependent position
};

// Alg.-style two-phase extraction for multi-row latent tables. When
// `key_override` is set (join case 2b) phase 1 is skipped.
std::vector<MultiRowOutput> extract_multi_row(
    ExecContext& ctx, const Document& doc, const std::vector<Attribute>& latent_attrs,
    const std::string& key_attr, const std::optional<std::string>& key_override,
    const std::vector<Attribute>& context_attrs,
    const std::map<std::string, std::string>& context_values,
    const std::vector<std::map<std::string, std::string>>& example_rows) {
    std::size_t key_pos = latent_attrs.size();
    for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
        if (latent_attrs[i].name == key_attr) key_pos = i;
    }
    if (key_pos == latent_attrs.size()) {
        throw ValidationError("multi_row extraction requires the document-level key '" + key_attr +
                              "' to stay projected");
    }

    ExtractionTask task;
    task.doc = &doc;
    task.latent_attrs = latent_attrs;
    task.context_attrs = context_attrs;
    task.context_values = context_values;
    task.example_rows = example_rows;

    std::vector<ExtractedValue> keys;
    if (key_override) {
        ExtractedValue v;
        v.span.doc_path = doc.path;
        v.span.surface = *key_override;
        keys.push_back(std::move(v));
    } else {
        auto collected = collect_spans(ctx, task, {key_pos}, /*use_rd=*/false);
        keys = dedup_values(collected.front(), ctx.weights, /*all_values=*/true);
    }

    std::vector<std::size_t> dep_cells;
    for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
        if (i != key_pos) dep_cells.push_back(i);
    }

    std::vector<MultiRowOutput> rows;
    for (const auto& key : keys) {
        MultiRowOutput out_row;
        out_row.key = key;
        out_row.dependents.assign(dep_cells.size(), std::nullopt);
        if (!dep_cells.empty()) {
            ExtractionTask phase2 = task;
            phase2.latent_values[key_attr] = normalize_value(key.span.surface);
            auto collected = collect_spans(ctx, phase2, dep_cells, /*use_rd=*/true);
            for (std::size_t d = 0; d < dep_cells.size(); ++d) {
                auto values = dedup_values(collected[d], ctx.weights, /*all_values=*/false);
                if (!values.empty()) out_row.dependents[d] = std::move(values.front());
            }
        }
        rows.push_back(std::move(out_row));
    }
    return rows;
}

std::vector<std::optional<ExtractedValue>> extract_single_row(
    ExecContext& ctx, const Document& doc, const std::vector<Attribute>& latent_attrs,
    bool use_rd, const std::vector<Attribute>& context_attrs,
    const std::map<std::string, std::string>& context_values,
    const std::vector<std::map<std::string, std::string>>& example_rows) {
    ExtractionTask task;
    task.doc = &doc;
    task.latent_attrs = latent_attrs;
    task.context_attrs = context_attrs;
    task.context_values = context_values;
    task.example_rows = example_rows;

    std::vector<std::size_t> cells(latent_attrs.size());
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    auto collected = collect_spans(ctx, task, cells, use_rd);

    std::vector<std::optional<ExtractedValue>> out(latent_attrs.size());
    for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
        auto values = dedup_values(collected[i], ctx.weights, /*all_values=*/false);
        if (!values.empty()) out[i] = std::move(values.front());
    }
    return out;
}

std::vector<Attribute> scan_output_attrs(const LatentHandle& latent) {
    std::vector<Attribute> attrs = latent.projected_attributes();
    attrs.push_back(Attribute{"path", AttrType::path});
    return attrs;
}

}  // namespace

Table mm_scan(const LatentHandle& latent, ExecContext& ctx) {
    const auto latent_attrs = latent.projected_attributes();
    Table out(scan_output_attrs(latent));
    const bool retain = ctx.options.retain_embeddings;

    for (const Document* doc : latent.documents()) {
        if (latent.schema->kind == TableKind::single_row) {
            auto values = extract_single_row(ctx, *doc, latent_attrs, /*use_rd=*/false, {}, {}, {});
            Row row;
            for (const auto& v : values) row.cells.push_back(value_cell(v, retain));
            row.cells.push_back(Cell{doc->path, {}});
            row.provenance = doc->path;
            out.add_row(std::move(row));
        } else {
            const std::string& key_attr = *latent.schema->document_level_key;
            std::size_t key_pos = latent_attrs.size();
            for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
                if (latent_attrs[i].name == key_attr) key_pos = i;
            }
            auto extracted =
                extract_multi_row(ctx, *doc, latent_attrs, key_attr, std::nullopt, {}, {}, {});
            for (const auto& ext : extracted) {
                Row row;
                std::size_t dep = 0;
                for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
                    if (i == key_pos) {
                        row.cells.push_back(value_cell(ext.key, retain));
                    } else {
                        row.cells.push_back(value_cell(ext.dependents[dep++], retain));
                    }
                }
                row.cells.push_back(Cell{doc->path, {}});
                row.provenance = doc->path;
                out.add_row(std::move(row));
            }
        }
    }
    return out;
}

namespace {

std::size_t path_attr_index(const Table& table) {
    for (std::size_t i = 0; i < table.attributes().size(); ++i) {
        if (table.attributes()[i].type == AttrType::path) return i;
    }
    throw ValidationError("table '" + table.name + "' has no path attribute to join on");
}

}  // namespace

Table mm_join(const Table& table, const LatentHandle& latent,
              const std::vector<std::string>& join_keys, ExecContext& ctx) {
    const std::size_t path_idx = path_attr_index(table);
    const auto latent_attrs = latent.projected_attributes();
    const bool retain = ctx.options.retain_embeddings;

    std::vector<std::string> extra_keys;
    for (const auto& k : join_keys) {
        if (k == "path" || k == table.attributes()[path_idx].name) continue;
        if (!table.attr_index(k)) throw ValidationError("join key '" + k + "' not in table");
        bool in_latent = std::any_of(latent_attrs.begin(), latent_attrs.end(),
                                     [&](const Attribute& a) { return a.name == k; });
        if (!in_latent) {
            throw ValidationError("join key '" + k + "' is not a projected latent attribute");
        }
        extra_keys.push_back(k);
    }
    for (const auto& a : table.attributes()) {
        if (a.type == AttrType::path) continue;
        bool overlaps = std::any_of(latent_attrs.begin(), latent_attrs.end(),
                                    [&](const Attribute& la) { return la.name == a.name; });
        if (overlaps && std::find(extra_keys.begin(), extra_keys.end(), a.name) == extra_keys.end()) {
            throw ValidationError("attribute '" + a.name +
                                  "' exists on both join sides but is not a join key");
        }
    }

    // Texts without a join partner are never encoded; dangling paths are an
    // error unless lenient mode is on.
    std::vector<std::size_t> dangling;
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        const auto& cell = table.rows()[r].cells[path_idx];
        if (!cell.value || latent.collection->find(*cell.value) == nullptr) dangling.push_back(r);
    }
    if (!dangling.empty() && ctx.options.strict_join) {
        std::string rows;
        for (std::size_t r : dangling) rows += (rows.empty() ? "" : ", ") + std::to_string(r);
        throw ExecError("join has dangling paths in rows [" + rows + "]");
    }

    std::vector<Attribute> out_attrs = table.attributes();
    std::vector<std::size_t> latent_out;  // latent attr positions added to output
    for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
        if (std::find(extra_keys.begin(), extra_keys.end(), latent_attrs[i].name) ==
            extra_keys.end()) {
            out_attrs.push_back(latent_attrs[i]);
            latent_out.push_back(i);
        }
    }
    Table out(std::move(out_attrs));

    const std::string key_attr = latent.schema->document_level_key.value_or("");
    const bool table_has_key =
        !key_attr.empty() &&
        std::find(extra_keys.begin(), extra_keys.end(), key_attr) != extra_keys.end();
    const bool multi_row = latent.schema->kind == TableKind::multi_row;
    const bool has_dependents =
        std::any_of(latent_attrs.begin(), latent_attrs.end(),
                    [&](const Attribute& a) { return a.name != key_attr; });

    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        const Row& trow = table.rows()[r];
        if (std::find(dangling.begin(), dangling.end(), r) != dangling.end()) continue;
        const Document* doc = latent.collection->find(*trow.cells[path_idx].value);
        if (latent.docs_filter && !latent.docs_filter->contains(doc->path)) continue;
        auto context = tuple_values(table, trow, extra_keys);

        auto emit = [&](const std::vector<std::optional<ExtractedValue>>& latent_cells) {
            Row row;
            row.cells = trow.cells;
            for (std::size_t pos : latent_out) row.cells.push_back(value_cell(latent_cells[pos], retain));
            row.provenance = doc->path;
            out.add_row(std::move(row));
        };

        if (!multi_row) {
            auto values =
                extract_single_row(ctx, *doc, latent_attrs, /*use_rd=*/true, {}, context, {});
            bool keys_match = true;
            for (const auto& k : extra_keys) {
                const auto& tval = trow.cells[table.require_attr(k)].value;
                std::size_t pos = latent.schema->attr_index(k).value();
                std::size_t ppos = 0;
                for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
                    if (latent_attrs[i].name == k) ppos = i;
                }
                (void)pos;
                if (!tval || !values[ppos] ||
                    !values_equal(*tval, values[ppos]->span.surface)) {
                    keys_match = false;
                }
            }
            if (keys_match) emit(values);
        } else if (table_has_key && has_dependents) {
            // case 2b: the table already supplies key values, skip phase 1
            const auto& kval = trow.cells[table.require_attr(key_attr)].value;
            if (!kval) continue;
            auto rows = extract_multi_row(ctx, *doc, latent_attrs, key_attr, *kval, {}, context, {});
            for (const auto& ext : rows) {
                bool any_value = std::any_of(ext.dependents.begin(), ext.dependents.end(),
                                             [](const auto& v) { return v.has_value(); });
                if (!any_value) continue;  // key not confirmed by any extraction
                std::vector<std::optional<ExtractedValue>> cells(latent_attrs.size());
                std::size_t dep = 0;
                for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
                    if (latent_attrs[i].name == key_attr) {
                        cells[i] = ext.key;
                    } else {
                        cells[i] = ext.dependents[dep++];
                    }
                }
                emit(cells);
            }
        } else {
            // case 2a (or a key-only projection): full two-phase extraction
            auto rows = extract_multi_row(ctx, *doc, latent_attrs, key_attr, std::nullopt, {},
                                          context, {});
            for (const auto& ext : rows) {
                std::vector<std::optional<ExtractedValue>> cells(latent_attrs.size());
                std::size_t dep = 0;
                for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
                    if (latent_attrs[i].name == key_attr) {
                        cells[i] = ext.key;
                    } else {
                        cells[i] = ext.dependents[dep++];
                    }
                }
                if (table_has_key) {
                    const auto& tval = trow.cells[table.require_attr(key_attr)].value;
                    if (!tval || !values_equal(*tval, ext.key.span.surface)) continue;
                }
                emit(cells);
            }
        }
    }
    return out;
}

namespace {

void check_union_compat(const Table& table, const LatentHandle& latent) {
    const auto latent_attrs = latent.projected_attributes();
    for (const auto& attr : table.attributes()) {
        if (attr.type == AttrType::path) continue;
        auto it = std::find_if(latent_attrs.begin(), latent_attrs.end(),
                               [&](const Attribute& la) { return la.name == attr.name; });
        if (it == latent_attrs.end()) {
            throw ValidationError("union schemas incompatible: '" + attr.name +
                                  "' is not a latent attribute");
        }
        if (it->type != attr.type) {
            throw ValidationError("union schemas incompatible: '" + attr.name +
                                  "' differs in type");
        }
    }
}

}  // namespace

Table mm_union(const Table& table, const LatentHandle& latent, ExecContext& ctx) {
    check_union_compat(table, latent);
    const bool retain = ctx.options.retain_embeddings;

    // extraction restricted to the attributes present on the tabular side
    std::vector<std::size_t> wanted;
    for (std::size_t idx : latent.attrs) {
        const auto& name = latent.schema->latent_attributes[idx].name;
        for (const auto& attr : table.attributes()) {
            if (attr.type != AttrType::path && attr.name == name) {
                wanted.push_back(idx);
                break;
            }
        }
    }
    LatentHandle restricted = latent;
    restricted.attrs = wanted;
    const auto latent_attrs = restricted.projected_attributes();

    const std::string key_attr = latent.schema->document_level_key.value_or("");
    const bool multi_row = latent.schema->kind == TableKind::multi_row;
    if (multi_row && !std::any_of(latent_attrs.begin(), latent_attrs.end(),
                                  [&](const Attribute& a) { return a.name == key_attr; })) {
        throw ValidationError("union with a multi_row latent table must include the key '" +
                              key_attr + "'");
    }

    // Two example rows per group, drawn under a seeded permutation.
    std::vector<std::map<std::string, std::string>> examples;
    {
        std::vector<std::size_t> order(table.rows().size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 rng(ctx.options.seed);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < order.size() && examples.size() < 2; ++i) {
            std::map<std::string, std::string> ex;
            const Row& row = table.rows()[order[i]];
            for (std::size_t a = 0; a < table.attributes().size(); ++a) {
                const Attribute& attr = table.attributes()[a];
                if (attr.type == AttrType::path || !row.cells[a].value) continue;
                ex[attr.name] = *row.cells[a].value;
            }
            if (!ex.empty()) examples.push_back(std::move(ex));
        }
    }

    Table out(table.attributes());
    out.rows() = table.rows();

    auto append_row = [&](const Document& doc,
                          const std::vector<std::optional<ExtractedValue>>& values) {
        Row row;
        for (const auto& attr : table.attributes()) {
            if (attr.type == AttrType::path) {
                row.cells.push_back(Cell{doc.path, {}});
                continue;
            }
            std::size_t pos = 0;
            for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
                if (latent_attrs[i].name == attr.name) pos = i;
            }
            row.cells.push_back(value_cell(values[pos], retain));
        }
        row.provenance = doc.path;
        out.add_row(std::move(row));
    };

    for (const Document* doc : restricted.documents()) {
        if (!multi_row) {
            auto values =
                extract_single_row(ctx, *doc, latent_attrs, /*use_rd=*/false, {}, {}, examples);
            append_row(*doc, values);
        } else {
            std::size_t key_pos = 0;
            for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
                if (latent_attrs[i].name == key_attr) key_pos = i;
            }
            auto rows = extract_multi_row(ctx, *doc, latent_attrs, key_attr, std::nullopt, {}, {},
                                          examples);
            for (const auto& ext : rows) {
                std::vector<std::optional<ExtractedValue>> values(latent_attrs.size());
                std::size_t dep = 0;
                for (std::size_t i = 0; i < latent_attrs.size(); ++i) {
                    if (i == key_pos) {
                        values[i] = ext.key;
                    } else {
                        values[i] = ext.dependents[dep++];
                    }
                }
                append_row(*doc, values);
            }
        }
    }
    return out;
}

LatentHandle mm_project(const LatentHandle& latent, const std::vector<std::string>& attrs) {
    LatentHandle out = latent;
    out.attrs.clear();
    for (const auto& name : attrs) {
        auto idx = latent.schema->attr_index(name);
        if (!idx) throw ValidationError("unknown latent attribute '" + name + "'");
        bool visible = std::find(latent.attrs.begin(), latent.attrs.end(), *idx) !=
                       latent.attrs.end();
        if (!visible) throw ValidationError("attribute '" + name + "' was already projected away");
        out.attrs.push_back(*idx);
    }
    if (latent.schema->kind == TableKind::multi_row) {
        const auto& key = *latent.schema->document_level_key;
        if (std::find(attrs.begin(), attrs.end(), key) == attrs.end()) {
            throw ValidationError("projection on a multi_row latent table must keep the key '" +
                                  key + "'");
        }
    }
    return out;
}

LatentHandle mm_select_latent(const LatentHandle& latent, const Condition& cond,
                              const MultiModalIndex* index, ExecContext& ctx) {
    if (!latent.schema->attr_index(cond.attr)) {
        throw ValidationError("selection attribute '" + cond.attr + "' is not a latent attribute");
    }
    std::set<std::string> selected;
    if (index != nullptr) {
        selected = probe(*index, cond.value, ctx);
    } else {
        ctx.report.warnings.push_back("no index on " + latent.schema->qualified_name() + "." +
                                      cond.attr + "; falling back to a full scan");
        MultiModalIndex ephemeral = build_index(latent, cond.attr, ctx);
        selected = probe(ephemeral, cond.value, ctx);
    }
    LatentHandle out = latent;
    if (out.docs_filter) {
        std::set<std::string> merged;
        for (const auto& p : selected) {
            if (out.docs_filter->contains(p)) merged.insert(p);
        }
        out.docs_filter = std::move(merged);
    } else {
        out.docs_filter = std::move(selected);
    }
    return out;
}

Table mm_select_table(const Table& table, const Condition& cond, ExecContext& ctx) {
    const std::size_t idx = table.require_attr(cond.attr);
    std::optional<std::vector<float>> query;
    Table out(table.attributes());
    out.name = table.name;
    for (const Row& row : table.rows()) {
        const Cell& cell = row.cells[idx];
        if (!cell.value) continue;
        bool keep = false;
        if (!cell.embed.empty()) {
            if (!query) query = embed_query_value(ctx, cond.attr, cond.value);
            keep = dd_similarity(cell.embed, *query, ctx.weights) > 0.0;
        } else {
            keep = values_equal(*cell.value, cond.value);
        }
        if (keep) out.add_row(row);
    }
    return out;
}

namespace {

Table aggregate_output(const std::vector<AggGroup>& groups, const Table& input,
                       const std::string& group_attr, AggFunc func) {
    std::vector<Attribute> attrs;
    attrs.push_back(Attribute{group_attr, AttrType::text});
    if (func == AggFunc::count) {
        attrs.push_back(Attribute{"count", AttrType::number});
    } else {
        for (const auto& a : input.attributes()) {
            if (a.name != group_attr && a.type != AttrType::path) {
                attrs.push_back(Attribute{a.name, AttrType::text});
            }
        }
    }
    Table out(std::move(attrs));
    for (const auto& group : groups) {
        Row row;
        row.cells.push_back(group.label);
        if (func == AggFunc::count) {
            row.cells.push_back(Cell{std::to_string(group.member_rows.size()), {}});
        } else {
            for (const auto& [attr, cells] : group.collected) {
                std::string joined;
                for (const auto& c : cells) {
                    if (!c.value) continue;
                    if (!joined.empty()) joined += "; ";
                    joined += *c.value;
                }
                row.cells.push_back(Cell{std::move(joined), {}});
            }
        }
        out.add_row(std::move(row));
    }
    return out;
}

std::vector<AggGroup> finish_groups(const Table& table, const std::string& group_attr,
                                    const std::vector<std::vector<std::size_t>>& clusters) {
    const std::size_t gidx = table.require_attr(group_attr);
    std::vector<AggGroup> groups;
    for (const auto& members : clusters) {
        AggGroup group;
        group.member_rows = members;
        // longest value labels the group, ties to the earliest row
        std::size_t best = members.front();
        for (std::size_t r : members) {
            const auto& val = table.rows()[r].cells[gidx].value;
            const auto& cur = table.rows()[best].cells[gidx].value;
            std::size_t vlen = val ? val->size() : 0;
            std::size_t clen = cur ? cur->size() : 0;
            if (vlen > clen) best = r;
        }
        group.label = table.rows()[best].cells[gidx];
        for (std::size_t a = 0; a < table.attributes().size(); ++a) {
            const Attribute& attr = table.attributes()[a];
            if (attr.name == group_attr || attr.type == AttrType::path) continue;
            std::vector<Cell> cells;
            for (std::size_t r : members) cells.push_back(table.rows()[r].cells[a]);
            group.collected.emplace_back(attr.name, std::move(cells));
        }
        groups.push_back(std::move(group));
    }
    return groups;
}

std::vector<std::vector<std::size_t>> group_rows_exact(const Table& table, std::size_t gidx) {
    std::vector<std::vector<std::size_t>> clusters;
    std::map<std::string, std::size_t> by_value;
    std::optional<std::size_t> null_cluster;
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        const auto& val = table.rows()[r].cells[gidx].value;
        if (!val) {
            if (!null_cluster) {
                null_cluster = clusters.size();
                clusters.push_back({});
            }
            clusters[*null_cluster].push_back(r);
            continue;
        }
        std::string key = normalize_value(*val);
        auto it = by_value.find(key);
        if (it == by_value.end()) {
            it = by_value.emplace(key, clusters.size()).first;
            clusters.push_back({});
        }
        clusters[it->second].push_back(r);
    }
    std::sort(clusters.begin(), clusters.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return clusters;
}

}  // namespace

AggResult mm_aggregate(const Table& table, const std::string& group_attr, AggFunc func,
                       ExecContext& ctx) {
    const std::size_t gidx = table.require_attr(group_attr);

    std::vector<std::size_t> valued;
    bool all_embedded = true;
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        const Cell& cell = table.rows()[r].cells[gidx];
        if (!cell.value) continue;
        valued.push_back(r);
        all_embedded = all_embedded && !cell.embed.empty();
    }

    std::vector<std::vector<std::size_t>> clusters;
    if (all_embedded && !valued.empty()) {
        const std::size_t n = valued.size();
        std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double d = -dd_similarity(table.rows()[valued[i]].cells[gidx].embed,
                                          table.rows()[valued[j]].cells[gidx].embed, ctx.weights);
                dist[i][j] = d;
                dist[j][i] = d;
            }
        }
        for (auto& cluster : cluster_by_distance(dist)) {
            for (auto& idx : cluster) idx = valued[idx];
            clusters.push_back(std::move(cluster));
        }
        std::vector<std::size_t> nulls;
        for (std::size_t r = 0; r < table.rows().size(); ++r) {
            if (!table.rows()[r].cells[gidx].value) nulls.push_back(r);
        }
        if (!nulls.empty()) clusters.push_back(std::move(nulls));
        std::sort(clusters.begin(), clusters.end(),
                  [](const auto& a, const auto& b) { return a.front() < b.front(); });
    } else {
        clusters = group_rows_exact(table, gidx);
    }

    AggResult result;
    result.groups = finish_groups(table, group_attr, clusters);
    result.table = aggregate_output(result.groups, table, group_attr, func);
    return result;
}

Table t_join(const Table& left, const Table& right, const std::vector<std::string>& keys) {
    std::vector<std::pair<std::size_t, std::size_t>> key_idx;
    for (const auto& k : keys) {
        std::string name = k;
        if (name == "path") {
            // "path" may name the path-typed attribute on either side
            for (const auto& a : left.attributes()) {
                if (a.type == AttrType::path) name = a.name;
            }
        }
        std::size_t li = left.require_attr(name);
        std::size_t ri;
        if (auto r = right.attr_index(name)) {
            ri = *r;
        } else if (k == "path") {
            ri = right.require_attr("path");
        } else {
            ri = right.require_attr(name);
        }
        key_idx.emplace_back(li, ri);
    }

    std::vector<Attribute> attrs = left.attributes();
    std::vector<std::size_t> right_keep;
    for (std::size_t i = 0; i < right.attributes().size(); ++i) {
        bool is_key = std::any_of(key_idx.begin(), key_idx.end(),
                                  [&](const auto& p) { return p.second == i; });
        if (!is_key) {
            attrs.push_back(right.attributes()[i]);
            right_keep.push_back(i);
        }
    }
    Table out(std::move(attrs));

    std::multimap<std::string, std::size_t> right_by_key;
    auto key_of = [](const Row& row, const std::vector<std::size_t>& idxs) {
        std::string key;
        for (std::size_t i : idxs) {
            if (!row.cells[i].value) return std::optional<std::string>{};
            key += normalize_value(*row.cells[i].value);
            key.push_back('\x1f');
        }
        return std::optional<std::string>{key};
    };
    std::vector<std::size_t> lkeys, rkeys;
    for (const auto& [l, r] : key_idx) {
        lkeys.push_back(l);
        rkeys.push_back(r);
    }
    for (std::size_t r = 0; r < right.rows().size(); ++r) {
        if (auto key = key_of(right.rows()[r], rkeys)) right_by_key.emplace(*key, r);
    }
    for (const Row& lrow : left.rows()) {
        auto key = key_of(lrow, lkeys);
        if (!key) continue;
        auto [begin, end] = right_by_key.equal_range(*key);
        for (auto it = begin; it != end; ++it) {
            const Row& rrow = right.rows()[it->second];
            Row row;
            row.cells = lrow.cells;
            for (std::size_t i : right_keep) row.cells.push_back(rrow.cells[i]);
            row.provenance = !rrow.provenance.empty() ? rrow.provenance : lrow.provenance;
            out.add_row(std::move(row));
        }
    }
    return out;
}

Table t_union(const Table& left, const Table& right) {
    std::vector<std::size_t> mapping;
    for (const auto& attr : left.attributes()) {
        auto idx = right.attr_index(attr.name);
        if (!idx || right.attributes()[*idx].type != attr.type) {
            throw ValidationError("union schemas incompatible at attribute '" + attr.name + "'");
        }
        mapping.push_back(*idx);
    }
    Table out(left.attributes());
    out.rows() = left.rows();
    for (const Row& rrow : right.rows()) {
        Row row;
        for (std::size_t i : mapping) row.cells.push_back(rrow.cells[i]);
        row.provenance = rrow.provenance;
        out.add_row(std::move(row));
    }
    return out;
}

Table t_project(const Table& table, const std::vector<std::string>& attrs) {
    std::vector<std::size_t> idxs;
    std::vector<Attribute> out_attrs;
    for (const auto& name : attrs) {
        std::size_t i = table.require_attr(name);
        idxs.push_back(i);
        out_attrs.push_back(table.attributes()[i]);
    }
    Table out(std::move(out_attrs));
    for (const Row& row : table.rows()) {
        Row r;
        for (std::size_t i : idxs) r.cells.push_back(row.cells[i]);
        r.provenance = row.provenance;
        out.add_row(std::move(r));
    }
    return out;
}

Table t_select(const Table& table, const Condition& cond) {
    const std::size_t idx = table.require_attr(cond.attr);
    Table out(table.attributes());
    for (const Row& row : table.rows()) {
        const auto& val = row.cells[idx].value;
        if (val && values_equal(*val, cond.value)) out.add_row(row);
    }
    return out;
}

AggResult t_aggregate(const Table& table, const std::string& group_attr, AggFunc func) {
    const std::size_t gidx = table.require_attr(group_attr);
    auto clusters = group_rows_exact(table, gidx);
    AggResult result;
    result.groups = finish_groups(table, group_attr, clusters);
    result.table = aggregate_output(result.groups, table, group_attr, func);
    return result;
}

std::vector<ExtractedValue> extract_attribute_values(const Document& doc,
                                                     const LatentHandle& latent,
                                                     std::size_t attr_index, ExecContext& ctx) {
    ExtractionTask task;
    task.doc = &doc;
    task.latent_attrs = latent.projected_attributes();
    if (attr_index >= task.latent_attrs.size()) {
        throw ValidationError("attribute index out of range");
    }
    auto collected = collect_spans(ctx, task, {attr_index}, /*use_rd=*/false);
    return dedup_values(collected.front(), ctx.weights, /*all_values=*/true);
}

bool rows_equal(const Row& a, const Row& b) {
    if (a.cells.size() != b.cells.size()) return false;
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        if (a.cells[i].value != b.cells[i].value) return false;
    }
    return true;
}

bool tables_equal_as_multisets(const Table& a, const Table& b) {
    if (a.attributes().size() != b.attributes().size()) return false;
    for (std::size_t i = 0; i < a.attributes().size(); ++i) {
        if (a.attributes()[i].name != b.attributes()[i].name) return false;
    }
    auto canon = [](const Table& t) {
        std::vector<std::string> rows;
        for (const Row& row : t.rows()) {
            std::string key;
            for (const Cell& c : row.cells) {
                key += c.value ? *c.value : std::string("\x01");
                key.push_back('\x1f');
            }
            rows.push_back(std::move(key));
        }
        std::sort(rows.begin(), rows.end());
        return rows;
    };
    return canon(a) == canon(b);
}

}  // namespace ltq
