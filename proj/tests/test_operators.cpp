#include <set>

#include "doctest.h"
#include "ltq/harness.hpp"
#include "ltq/mini.hpp"

using namespace ltq;

namespace {

struct Fixture {
    AnnotatedDataset ds = mini::build();
    OracleEncoder encoder{ds.catalog, ds.annotation_ptrs()};
    HeadWeights weights = mini::oracle_weights(ds);

    ExecContext ctx() { return ExecContext(encoder, weights); }
};

}  // namespace

TEST_CASE("scan row counts follow the table kind") {
    Fixture f;
    auto ctx = f.ctx();

    SUBCASE("single-row scans emit exactly one row per document") {
        Table t = mm_scan(LatentHandle::open(f.ds.catalog, "reports.Examination"), ctx);
        CHECK(t.rows().size() == f.ds.catalog.collection("reports").documents.size());
        CHECK(t.attributes().back().name == "path");
        for (const auto& row : t.rows()) CHECK(row.provenance == *row.cells.back().value);
    }
    SUBCASE("multi-row scans emit one row per deduplicated key") {
        Table t = mm_scan(LatentHandle::open(f.ds.catalog, "ntsb.Incident"), ctx);
        std::size_t gold_rows = 0;
        for (const auto& d : f.ds.annotation_for("ntsb.Incident")->documents) {
            gold_rows += d.rows.size();
        }
        CHECK(t.rows().size() == gold_rows);
    }
    SUBCASE("an empty collection scans to an empty table with the right schema") {
        AnnotatedDataset empty;
        TextCollection none;
        none.name = "void";
        empty.catalog.add_collection(std::move(none));
        LatentTableSchema schema;
        schema.name = "Nothing";
        schema.collection = "void";
        schema.latent_attributes = {{"a", AttrType::text}};
        empty.catalog.register_latent_table(schema);
        CollectionAnnotation ann;
        ann.latent_table = "void.Nothing";
        empty.annotations.push_back(ann);
        OracleEncoder enc(empty.catalog, empty.annotation_ptrs());
        HeadWeights w = HeadWeights::oracle(enc.dim());
        ExecContext ctx2(enc, w);
        Table t = mm_scan(LatentHandle::open(empty.catalog, "void.Nothing"), ctx2);
        CHECK(t.rows().empty());
        REQUIRE(t.attributes().size() == 2);
        CHECK(t.attributes()[0].name == "a");
        CHECK(t.attributes()[1].name == "path");
    }
}

TEST_CASE("every extracted value is a substring of its source document") {
    Fixture f;
    auto ctx = f.ctx();
    for (const char* latent : {"reports.Examination", "ntsb.Incident"}) {
        Table t = mm_scan(LatentHandle::open(f.ds.catalog, latent), ctx);
        const auto& schema = f.ds.catalog.latent(latent);
        const auto& collection = f.ds.catalog.collection(schema.collection);
        for (const auto& row : t.rows()) {
            const Document* doc = collection.find(row.provenance);
            REQUIRE(doc != nullptr);
            for (std::size_t c = 0; c + 1 < row.cells.size(); ++c) {  // path column last
                if (!row.cells[c].value) continue;
                CHECK(doc->text.find(*row.cells[c].value) != std::string::npos);
            }
        }
    }
}

TEST_CASE("mm_join equals the definitional join over a scan") {
    Fixture f;
    auto ctx = f.ctx();

    SUBCASE("single-row join") {
        Table joined = mm_join(f.ds.catalog.table("patients"),
                               LatentHandle::open(f.ds.catalog, "reports.Examination"),
                               {"path", "name"}, ctx);
        auto ctx2 = f.ctx();
        Table scan = mm_scan(LatentHandle::open(f.ds.catalog, "reports.Examination"), ctx2);
        Table definitional = t_join(f.ds.catalog.table("patients"), scan, {"path", "name"});
        CHECK(tables_equal_as_multisets(joined, definitional));
    }
    SUBCASE("multi-row join without key context (case 2a)") {
        Table joined = mm_join(f.ds.catalog.table("aircraft_info"),
                               LatentHandle::open(f.ds.catalog, "ntsb.Incident"), {"path"}, ctx);
        // only documents the table references are ever encoded
        std::set<std::string> referenced;
        const Table& info = f.ds.catalog.table("aircraft_info");
        for (const auto& row : info.rows()) referenced.insert(*row.cells[1].value);
        for (const auto& path : ctx.report.docs_touched) CHECK(referenced.contains(path));
        auto ctx2 = f.ctx();
        Table scan = mm_scan(LatentHandle::open(f.ds.catalog, "ntsb.Incident"), ctx2);
        Table definitional = t_join(f.ds.catalog.table("aircraft_info"), scan, {"path"});
        CHECK(tables_equal_as_multisets(joined, definitional));
    }
    SUBCASE("multi-row join with key values from the table (case 2b)") {
        // build a table that supplies (aircraft, path) pairs
        Table ops(std::vector<Attribute>{{"aircraft", AttrType::text},
                                         {"path", AttrType::path}});
        ops.name = "ops";
        for (const auto& doc : f.ds.annotation_for("ntsb.Incident")->documents) {
            for (const auto& row : doc.rows) {
                Row r;
                r.cells.push_back(Cell{*row.key, {}});
                r.cells.push_back(Cell{doc.doc_path, {}});
                ops.add_row(std::move(r));
            }
        }
        Table joined = mm_join(ops, LatentHandle::open(f.ds.catalog, "ntsb.Incident"),
                               {"path", "aircraft"}, ctx);
        // phase 1 was skipped: one dependent-attribute encode per tuple
        CHECK(ctx.report.encode_calls == ops.rows().size());
        auto ctx2 = f.ctx();
        Table scan = mm_scan(LatentHandle::open(f.ds.catalog, "ntsb.Incident"), ctx2);
        Table definitional = t_join(ops, scan, {"path", "aircraft"});
        CHECK(tables_equal_as_multisets(joined, definitional));
        // phase 1 skipped: every encode call belongs to a dependent-attribute pass
        CHECK(joined.rows().size() == ops.rows().size());

        SUBCASE("a key the document never mentions joins to nothing on either route") {
            Row bogus;
            bogus.cells.push_back(Cell{"N999ZZ", {}});
            bogus.cells.push_back(Cell{ops.rows().front().cells[1].value.value(), {}});
            Table with_bogus = ops;
            with_bogus.add_row(bogus);
            auto ctx3 = f.ctx();
            Table joined2 = mm_join(with_bogus, LatentHandle::open(f.ds.catalog, "ntsb.Incident"),
                                    {"path", "aircraft"}, ctx3);
            Table definitional2 = t_join(with_bogus, scan, {"path", "aircraft"});
            CHECK(tables_equal_as_multisets(joined2, definitional2));
        }
    }
    SUBCASE("empty left table joins to an empty output") {
        Table empty(f.ds.catalog.table("patients").attributes());
        empty.name = "empty";
        Table joined = mm_join(empty, LatentHandle::open(f.ds.catalog, "reports.Examination"),
                               {"path", "name"}, ctx);
        CHECK(joined.rows().empty());
        CHECK(ctx.report.encode_calls == 0);
    }
}

TEST_CASE("join pruning encodes only documents with a join partner") {
    Fixture f;
    for (const char* ward : {"B2"}) {
        auto ctx = f.ctx();
        Table selected = t_select(f.ds.catalog.table("patients"), Condition{"ward", ward});
        REQUIRE(selected.rows().size() == 4);
        Table joined = mm_join(selected, LatentHandle::open(f.ds.catalog, "reports.Examination"),
                               {"path", "name"}, ctx);
        CHECK(joined.rows().size() == 4);
        CHECK(ctx.report.encode_calls == 4);
        CHECK(ctx.report.docs_touched.size() == 4);
    }
}

TEST_CASE("dangling join paths error in strict mode and skip in lenient mode") {
    Fixture f;
    Table patients = f.ds.catalog.table("patients");
    patients.rows()[0].cells[3].value = "reports/missing.txt";

    auto strict = f.ctx();
    CHECK_THROWS_AS(mm_join(patients, LatentHandle::open(f.ds.catalog, "reports.Examination"),
                            {"path", "name"}, strict),
                    ExecError);

    ExecOptions lenient_opts;
    lenient_opts.strict_join = false;
    ExecContext lenient(f.encoder, f.weights, lenient_opts);
    Table joined = mm_join(patients, LatentHandle::open(f.ds.catalog, "reports.Examination"),
                           {"path", "name"}, lenient);
    CHECK(joined.rows().size() == patients.rows().size() - 1);
}

TEST_CASE("mm_union equals the definitional union over a scan") {
    Fixture f;
    auto ctx = f.ctx();
    Table unioned = mm_union(f.ds.catalog.table("clinic_records"),
                             LatentHandle::open(f.ds.catalog, "reports.Examination"), ctx);
    auto ctx2 = f.ctx();
    Table scan = mm_scan(LatentHandle::open(f.ds.catalog, "reports.Examination"), ctx2);
    Table definitional = t_union(f.ds.catalog.table("clinic_records"), scan);
    CHECK(tables_equal_as_multisets(unioned, definitional));

    SUBCASE("multi-row union with example rows") {
        auto ctx3 = f.ctx();
        Table u2 = mm_union(f.ds.catalog.table("incident_log"),
                            LatentHandle::open(f.ds.catalog, "ntsb.Incident"), ctx3);
        auto ctx4 = f.ctx();
        Table d2 = t_union(f.ds.catalog.table("incident_log"),
                           mm_scan(LatentHandle::open(f.ds.catalog, "ntsb.Incident"), ctx4));
        CHECK(tables_equal_as_multisets(u2, d2));
    }
    SUBCASE("an empty latent collection leaves the table unchanged") {
        AnnotatedDataset empty;
        TextCollection none;
        none.name = "void";
        empty.catalog.add_collection(std::move(none));
        LatentTableSchema schema;
        schema.name = "Records";
        schema.collection = "void";
        schema.latent_attributes = {{"name", AttrType::text},
                                    {"diagnosis", AttrType::text},
                                    {"treatment", AttrType::text}};
        empty.catalog.register_latent_table(schema);
        CollectionAnnotation ann;
        ann.latent_table = "void.Records";
        empty.annotations.push_back(ann);
        OracleEncoder enc(empty.catalog, empty.annotation_ptrs());
        HeadWeights w = HeadWeights::oracle(enc.dim());
        ExecContext ctx5(enc, w);
        Table u3 = mm_union(f.ds.catalog.table("clinic_records"),
                            LatentHandle::open(empty.catalog, "void.Records"), ctx5);
        CHECK(tables_equal_as_multisets(u3, f.ds.catalog.table("clinic_records")));
    }
    SUBCASE("incompatible schemas are rejected") {
        CHECK_THROWS_AS(mm_union(f.ds.catalog.table("patients"),
                                 LatentHandle::open(f.ds.catalog, "reports.Examination"), ctx),
                        ValidationError);
    }
}

TEST_CASE("union example rows follow the seeded permutation") {
    Fixture f;
    ExecOptions a_opts;
    a_opts.seed = 0;
    ExecOptions b_opts;
    b_opts.seed = 0;
    ExecContext a(f.encoder, f.weights, a_opts), b(f.encoder, f.weights, b_opts);
    Table ta = mm_union(f.ds.catalog.table("clinic_records"),
                        LatentHandle::open(f.ds.catalog, "reports.Examination"), a);
    Table tb = mm_union(f.ds.catalog.table("clinic_records"),
                        LatentHandle::open(f.ds.catalog, "reports.Examination"), b);
    CHECK(tables_equal_as_multisets(ta, tb));
}

TEST_CASE("mm_project narrows extraction and commutes with the scan") {
    Fixture f;
    LatentHandle handle = LatentHandle::open(f.ds.catalog, "reports.Examination");

    SUBCASE("projecting all attributes is the identity") {
        LatentHandle all = mm_project(handle, {"name", "diagnosis", "treatment"});
        auto ctx1 = f.ctx();
        auto ctx2 = f.ctx();
        CHECK(tables_equal_as_multisets(mm_scan(all, ctx1), mm_scan(handle, ctx2)));
    }
    SUBCASE("scan of a projection equals projecting the scan") {
        LatentHandle projected = mm_project(handle, {"name", "diagnosis"});
        auto ctx1 = f.ctx();
        Table left = mm_scan(projected, ctx1);
        auto ctx2 = f.ctx();
        Table right = t_project(mm_scan(handle, ctx2), {"name", "diagnosis", "path"});
        CHECK(tables_equal_as_multisets(left, right));
    }
    SUBCASE("unknown attributes and dropped keys are rejected") {
        CHECK_THROWS_AS(mm_project(handle, {"name", "bogus"}), ValidationError);
        LatentHandle incidents = LatentHandle::open(f.ds.catalog, "ntsb.Incident");
        CHECK_THROWS_AS(mm_project(incidents, {"severity"}), ValidationError);
    }
}

TEST_CASE("mm_select_table keeps DD duplicates of the condition value") {
    Fixture f;
    auto ctx = f.ctx();
    Table scan = mm_scan(LatentHandle::open(f.ds.catalog, "reports.Examination"), ctx);
    auto ctx2 = f.ctx();
    Table fever = mm_select_table(scan, Condition{"diagnosis", "fever"}, ctx2);
    // three documents carry the fever concept, one only as its synonym
    CHECK(fever.rows().size() == 3);
    std::set<std::string> values;
    for (const auto& row : fever.rows()) {
        values.insert(*row.cells[scan.require_attr("diagnosis")].value);
    }
    CHECK(values.contains("high body temperature"));

    SUBCASE("kept rows equal an independent bilinear recomputation") {
        auto ctx3 = f.ctx();
        auto query = embed_query_value(ctx3, "diagnosis", "fever");
        std::size_t expected = 0;
        const std::size_t diag = scan.require_attr("diagnosis");
        for (const auto& row : scan.rows()) {
            if (!row.cells[diag].value) continue;
            if (dd_similarity(row.cells[diag].embed, query, f.weights) > 0.0) ++expected;
        }
        CHECK(fever.rows().size() == expected);
    }
    SUBCASE("exact fallback applies when no embeddings were retained") {
        Table plain = scan;
        for (auto& row : plain.rows()) {
            for (auto& cell : row.cells) cell.embed.clear();
        }
        auto ctx4 = f.ctx();
        Table exact = mm_select_table(plain, Condition{"diagnosis", "fever"}, ctx4);
        // d17 is the only row whose representative is the literal string
        CHECK(exact.rows().size() == 1);
    }
}

TEST_CASE("mm_aggregate groups by concept and partitions the rows") {
    Fixture f;
    auto ctx = f.ctx();
    Table scan = mm_scan(LatentHandle::open(f.ds.catalog, "reports.Examination"), ctx);
    auto ctx2 = f.ctx();
    AggResult agg = mm_aggregate(scan, "diagnosis", AggFunc::list, ctx2);

    // 8 diagnosis concepts in the fixture
    CHECK(agg.groups.size() == 8);
    std::set<std::size_t> seen;
    for (const auto& group : agg.groups) {
        for (std::size_t r : group.member_rows) CHECK(seen.insert(r).second);
    }
    CHECK(seen.size() == scan.rows().size());

    // the fever group pools the synonym docs and labels with the longest value
    bool found_fever = false;
    for (const auto& group : agg.groups) {
        if (group.label.value == "high body temperature") {
            found_fever = true;
            CHECK(group.member_rows.size() == 3);
        }
    }
    CHECK(found_fever);

    SUBCASE("count aggregation on distinct concepts yields count 1 each") {
        auto ctx3 = f.ctx();
        Table names = mm_scan(
            mm_project(LatentHandle::open(f.ds.catalog, "reports.Examination"), {"name"}), ctx3);
        auto ctx4 = f.ctx();
        AggResult counts = mm_aggregate(names, "name", AggFunc::count, ctx4);
        CHECK(counts.groups.size() == names.rows().size());
        for (const auto& row : counts.table.rows()) CHECK(*row.cells[1].value == "1");
    }
}

TEST_CASE("windowed extraction matches whole-document extraction") {
    AnnotatedDataset long_ds = mini::build_long_ntsb();
    for (const auto& doc : long_ds.catalog.collection("ntsb_long").documents) {
        CHECK(doc.tokens.size() >= 1500);
    }
    OracleEncoder encoder(long_ds.catalog, long_ds.annotation_ptrs());
    HeadWeights weights = mini::oracle_weights(long_ds);
    ExecContext ctx(encoder, weights);
    Table windowed = mm_scan(LatentHandle::open(long_ds.catalog, "ntsb_long.Incident"), ctx);
    CHECK(ctx.report.encode_calls > long_ds.catalog.collection("ntsb_long").documents.size());

    // same rows as scanning the original per-document collection, paths aside
    AnnotatedDataset ds = mini::build();
    OracleEncoder enc2(ds.catalog, ds.annotation_ptrs());
    HeadWeights w2 = mini::oracle_weights(ds);
    ExecContext ctx2(enc2, w2);
    Table per_doc = mm_scan(LatentHandle::open(ds.catalog, "ntsb.Incident"), ctx2);

    auto strip = [](const Table& t) {
        std::vector<std::string> rows;
        for (const auto& row : t.rows()) {
            std::string key;
            for (std::size_t c = 0; c + 1 < row.cells.size(); ++c) {
                key += row.cells[c].value.value_or("\x01") + "\x1f";
            }
            rows.push_back(std::move(key));
        }
        std::sort(rows.begin(), rows.end());
        return rows;
    };
    CHECK(strip(windowed) == strip(per_doc));
}

TEST_CASE("documents with no extractable content scan to NULL rows") {
    AnnotatedDataset ds;
    TextCollection c;
    c.name = "notes";
    c.documents.push_back(Document::make("notes/empty.txt", ""));
    c.documents.push_back(Document::make("notes/blank.txt", "nothing relevant here"));
    ds.catalog.add_collection(std::move(c));
    LatentTableSchema schema;
    schema.name = "Facts";
    schema.collection = "notes";
    schema.latent_attributes = {{"topic", AttrType::text}};
    ds.catalog.register_latent_table(schema);
    CollectionAnnotation ann;
    ann.latent_table = "notes.Facts";
    DocAnnotation d1;
    d1.doc_path = "notes/empty.txt";
    d1.rows.push_back(GoldRow{});
    ann.documents.push_back(d1);
    ds.annotations.push_back(std::move(ann));

    OracleEncoder encoder(ds.catalog, ds.annotation_ptrs());
    HeadWeights weights = HeadWeights::oracle(encoder.dim());
    ExecContext ctx(encoder, weights);
    Table t = mm_scan(LatentHandle::open(ds.catalog, "notes.Facts"), ctx);
    REQUIRE(t.rows().size() == 2);  // one row per document, NULL topic
    CHECK(!t.rows()[0].cells[0].value.has_value());
    CHECK(!t.rows()[1].cells[0].value.has_value());
}

TEST_CASE("traditional aggregate matches a brute-force grouping") {
    Table t(std::vector<Attribute>{{"k", AttrType::text}, {"v", AttrType::text}});
    t.name = "t";
    for (auto [k, v] : std::vector<std::pair<const char*, const char*>>{
             {"a", "1"}, {"b", "2"}, {"a", "3"}, {"c", "4"}, {"b", "5"}}) {
        Row row;
        row.cells.push_back(Cell{k, {}});
        row.cells.push_back(Cell{v, {}});
        t.add_row(std::move(row));
    }
    AggResult agg = t_aggregate(t, "k", AggFunc::list);
    REQUIRE(agg.groups.size() == 3);
    CHECK(agg.groups[0].label.value == "a");
    CHECK(agg.groups[0].member_rows == std::vector<std::size_t>{0, 2});
    CHECK(*agg.table.rows()[0].cells[1].value == "1; 3");
    AggResult counts = t_aggregate(t, "k", AggFunc::count);
    CHECK(*counts.table.rows()[0].cells[1].value == "2");
}
