#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "ltq/cli.hpp"
#include "ltq/csv.hpp"
#include "ltq/mini.hpp"
#include "ltq/workspace.hpp"

using namespace ltq;
namespace fs = std::filesystem;

namespace {

int run_cli(std::initializer_list<const char*> args, std::string* out_text = nullptr,
            std::string* err_text = nullptr) {
    std::vector<const char*> argv = {"ltq"};
    argv.insert(argv.end(), args.begin(), args.end());
    std::ostringstream out, err;
    int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text != nullptr) *out_text = out.str();
    if (err_text != nullptr) *err_text = err.str();
    return code;
}

struct TempWorkspace {
    fs::path dir;
    TempWorkspace() {
        dir = fs::temp_directory_path() / "ltq_ws_test";
        fs::remove_all(dir);
        mini::save_workspace(mini::build(), dir.string());
    }
    ~TempWorkspace() { fs::remove_all(dir); }
    std::string str() const { return dir.string(); }
};

}  // namespace

TEST_CASE("annotations round-trip through JSON") {
    AnnotatedDataset ds = mini::build();
    for (const auto& ann : ds.annotations) {
        std::string text = annotation_to_json(ann);
        CollectionAnnotation reloaded = annotation_from_json(text);
        CHECK(annotation_to_json(reloaded) == text);
        CHECK(reloaded.documents.size() == ann.documents.size());
    }
}

TEST_CASE("workspaces round-trip the dataset") {
    TempWorkspace ws;
    Workspace loaded = load_workspace(ws.str());
    CHECK(loaded.dataset.catalog.collection("reports").documents.size() == 18);
    CHECK(loaded.dataset.catalog.table("patients").rows().size() == 18);
    CHECK(loaded.dataset.queries.size() == 15);
    CHECK(loaded.default_weights_path.has_value());

    // the reloaded workspace drives the same benchmark to the same scores
    OracleEncoder encoder(loaded.dataset.catalog, loaded.dataset.annotation_ptrs());
    HeadWeights weights = HeadWeights::load(*loaded.default_weights_path);
    auto results = run_benchmark(loaded.dataset, encoder, weights);
    for (const auto& r : results) {
        INFO(r.id, " ", r.error);
        CHECK(r.f1 == doctest::Approx(1.0));
    }
}

TEST_CASE("collection manifests may reference external text files") {
    fs::path dir = fs::temp_directory_path() / "ltq_manifest_test";
    fs::remove_all(dir);
    fs::create_directories(dir / "collections" / "docs");
    write_file((dir / "collections" / "docs" / "a.txt").string(), "External text one.");
    write_file((dir / "collections" / "notes.json").string(),
               R"({"name":"notes","documents":[
                    {"path":"docs/a.txt"},
                    {"path":"inline.txt","text":"Inline text two."}]})");
    Workspace ws = load_workspace(dir.string());
    const auto& collection = ws.dataset.catalog.collection("notes");
    REQUIRE(collection.documents.size() == 2);
    CHECK(collection.documents[0].text == "External text one.");
    CHECK(collection.documents[1].text == "Inline text two.");
    fs::remove_all(dir);
}

TEST_CASE("benchmark runs record per-plan failures and continue") {
    AnnotatedDataset ds = mini::build();
    ds.queries.insert(ds.queries.begin(), BenchQuery{"q00", "Scan(nowhere.Nothing)"});
    OracleEncoder encoder(ds.catalog, ds.annotation_ptrs());
    HeadWeights weights = mini::oracle_weights(ds);
    auto results = run_benchmark(ds, encoder, weights);
    REQUIRE(results.size() == 16);
    CHECK(!results[0].error.empty());
    for (std::size_t i = 1; i < results.size(); ++i) {
        CHECK(results[i].error.empty());
        CHECK(results[i].f1 == doctest::Approx(1.0));
    }
    CHECK(results_csv(results).find("q00,error") != std::string::npos);
}

TEST_CASE("cli exit codes follow the contract") {
    TempWorkspace ws;
    SUBCASE("unknown flags exit 64 with usage text") {
        std::string err;
        CHECK(run_cli({"run", "--frobnicate"}, nullptr, &err) == 64);
        CHECK(err.find("Usage") != std::string::npos);
    }
    SUBCASE("missing subcommand exits 64") {
        CHECK(run_cli({}) == 64);
    }
    SUBCASE("validation failures exit 1") {
        std::string err;
        CHECK(run_cli({"run", "nonexistent.mmq", "--data", ws.str().c_str()}, nullptr, &err) == 1);
        CHECK(err.find("error:") != std::string::npos);
    }
    SUBCASE("execution failures exit 2") {
        // dangling path in strict mode
        fs::path bad_table = ws.dir / "tables" / "patients.csv";
        std::string csv = read_file(bad_table.string());
        auto pos = csv.find("reports/d01.txt");
        csv.replace(pos, std::string("reports/d01.txt").size(), "reports/gone.txt");
        write_file(bad_table.string(), csv);
        std::string err;
        CHECK(run_cli({"run", (ws.dir / "bench" / "q01.mmq").string().c_str(), "--data",
                       ws.str().c_str()},
                      nullptr, &err) == 2);
        CHECK(err.find("dangling") != std::string::npos);
    }
    SUBCASE("help exits 0") {
        std::string out;
        CHECK(run_cli({"--help"}, &out) == 0);
        CHECK(out.find("run") != std::string::npos);
    }
}

TEST_CASE("cli run prints csv and eval writes deterministic results") {
    TempWorkspace ws;
    std::string out;
    CHECK(run_cli({"run", (ws.dir / "bench" / "q03.mmq").string().c_str(), "--data",
                   ws.str().c_str()},
                  &out) == 0);
    CHECK(out.find("name,diagnosis,treatment,path") == 0);
    CHECK(out.find("Alice Carter") != std::string::npos);

    const std::string a = (ws.dir / "a.csv").string();
    const std::string b = (ws.dir / "b.csv").string();
    CHECK(run_cli({"eval", "--data", ws.str().c_str(), "--seed", "7", "--out", a.c_str()}) == 0);
    CHECK(run_cli({"eval", "--data", ws.str().c_str(), "--seed", "7", "--out", b.c_str()}) == 0);
    CHECK(read_file(a) == read_file(b));
    CHECK(read_file(a).find("q01,1.000000") != std::string::npos);
}

TEST_CASE("cli build-index persists and run uses it") {
    TempWorkspace ws;
    std::string out;
    CHECK(run_cli({"build-index", "reports.Examination", "diagnosis", "--data",
                   ws.str().c_str()},
                  &out) == 0);
    CHECK(fs::exists(ws.dir / "indexes" / "reports.Examination.diagnosis.mmix"));

    std::string err;
    CHECK(run_cli({"run", (ws.dir / "bench" / "q10.mmq").string().c_str(), "--data",
                   ws.str().c_str()},
                  &out, &err) == 0);
    CHECK(out.find("migraine") != std::string::npos);
    CHECK(err.find("docs touched: 2") != std::string::npos);
}

TEST_CASE("cli register validates and writes the schema file") {
    TempWorkspace ws;
    LatentTableSchema schema;
    schema.name = "Second";
    schema.collection = "reports";
    schema.latent_attributes = {{"name", AttrType::text}};
    schema.kind = TableKind::single_row;
    const std::string schema_file = (ws.dir / "second.json").string();
    write_file(schema_file, latent_schema_to_json(schema));

    std::string out;
    CHECK(run_cli({"register", schema_file.c_str(), "--data", ws.str().c_str()}, &out) == 0);
    CHECK(out.find("registered reports.Second") != std::string::npos);
    CHECK(fs::exists(ws.dir / "latents" / "reports.Second.json"));

    SUBCASE("registering the same name twice fails with exit 1") {
        CHECK(run_cli({"register", schema_file.c_str(), "--data", ws.str().c_str()}) == 1);
    }
    SUBCASE("a single_row schema with a key fails with exit 1") {
        schema.name = "Third";
        schema.document_level_key = "name";
        write_file(schema_file, latent_schema_to_json(schema));
        std::string err;
        CHECK(run_cli({"register", schema_file.c_str(), "--data", ws.str().c_str()}, nullptr,
                      &err) == 1);
        CHECK(err.find("document_level_key") != std::string::npos);
    }
}

TEST_CASE("retained span embeddings round-trip through the sidecar file") {
    AnnotatedDataset ds = mini::build();
    OracleEncoder encoder(ds.catalog, ds.annotation_ptrs());
    HeadWeights weights = mini::oracle_weights(ds);
    ExecContext ctx(encoder, weights);
    Table scan = mm_scan(LatentHandle::open(ds.catalog, "reports.Examination"), ctx);

    const std::string path = (fs::temp_directory_path() / "ltq_sidecar_test.bin").string();
    write_table_embeddings(scan, path);
    TableEmbeddings sidecar = read_table_embeddings(path);
    CHECK(sidecar.dim == static_cast<std::size_t>(encoder.dim()));
    REQUIRE(!sidecar.entries.empty());
    for (const auto& entry : sidecar.entries) {
        CHECK(entry.embed == scan.rows()[entry.row].cells[entry.col].embed);
    }
    fs::remove(path);
}

TEST_CASE("cli records and replays embeddings") {
    TempWorkspace ws;
    const std::string base = (ws.dir / "dump").string();
    std::string direct;
    CHECK(run_cli({"run", (ws.dir / "bench" / "q03.mmq").string().c_str(), "--data",
                   ws.str().c_str(), "--dump-embeddings", base.c_str()},
                  &direct) == 0);
    std::string replayed;
    CHECK(run_cli({"run", (ws.dir / "bench" / "q03.mmq").string().c_str(), "--data",
                   ws.str().c_str(), "--encoder", "replay", "--embeddings", base.c_str()},
                  &replayed) == 0);
    CHECK(direct == replayed);
}
