// Acceptance suite: runs every gate criterion and prints one PASS/FAIL line
// per criterion. Exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "ltq/cli.hpp"
#include "ltq/mini.hpp"
#include "ltq/workspace.hpp"
#include "reference_impls.hpp"

using namespace ltq;
namespace fs = std::filesystem;

namespace {

struct Gate {
    int failures = 0;

    void run(int number, const std::string& label, const std::function<void()>& body) {
        std::string detail;
        bool ok = true;
        try {
            body();
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        std::printf("[%s] criterion %2d: %s%s%s\n", ok ? "PASS" : "FAIL", number, label.c_str(),
                    detail.empty() ? "" : " -- ", detail.c_str());
        if (!ok) ++failures;
    }
};

void require(bool condition, const std::string& message) {
    if (!condition) throw std::runtime_error(message);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct MiniFixture {
    AnnotatedDataset ds = mini::build();
    OracleEncoder encoder{ds.catalog, ds.annotation_ptrs()};
    HeadWeights weights = mini::oracle_weights(ds);
};

}  // namespace

int main() {
    Gate gate;

    // 1. Every benchmark plan reaches F1 = 1.000 exactly under the oracle.
    gate.run(1, "oracle keystone: all 15 plans at F1 = 1.000 in under 10 s", [] {
        MiniFixture f;
        std::size_t docs = f.ds.catalog.collection("reports").documents.size() +
                           f.ds.catalog.collection("ntsb").documents.size();
        require(docs == 30, "mini dataset must hold 30 documents");
        auto start = std::chrono::steady_clock::now();
        auto results = run_benchmark(f.ds, f.encoder, f.weights);
        double elapsed = seconds_since(start);
        require(results.size() == 15, "expected 15 benchmark queries");
        for (const auto& r : results) {
            require(r.error.empty(), r.id + " failed: " + r.error);
            require(r.f1 == 1.0, r.id + " scored " + std::to_string(r.f1));
        }
        require(elapsed < 10.0, "benchmark took " + std::to_string(elapsed) + " s");
    });

    // 2. Fused operators equal their definitional scan-based plans.
    gate.run(2, "definitional equivalences for join, union and indexed selection", [] {
        MiniFixture f;
        auto start = std::chrono::steady_clock::now();

        auto ctx = [&] { return ExecContext(f.encoder, f.weights); };
        LatentHandle exams = LatentHandle::open(f.ds.catalog, "reports.Examination");
        LatentHandle incidents = LatentHandle::open(f.ds.catalog, "ntsb.Incident");

        ExecContext c1 = ctx();
        Table exam_scan = mm_scan(exams, c1);
        ExecContext c2 = ctx();
        Table incident_scan = mm_scan(incidents, c2);

        ExecContext c3 = ctx();
        Table join_fused = mm_join(f.ds.catalog.table("patients"), exams, {"path", "name"}, c3);
        Table join_def = t_join(f.ds.catalog.table("patients"), exam_scan, {"path", "name"});
        require(tables_equal_as_multisets(join_fused, join_def), "single-row join differs");

        ExecContext c4 = ctx();
        Table join2_fused = mm_join(f.ds.catalog.table("aircraft_info"), incidents, {"path"}, c4);
        Table join2_def = t_join(f.ds.catalog.table("aircraft_info"), incident_scan, {"path"});
        require(tables_equal_as_multisets(join2_fused, join2_def), "multi-row join differs");

        ExecContext c5 = ctx();
        Table union_fused = mm_union(f.ds.catalog.table("clinic_records"), exams, c5);
        Table union_def = t_union(f.ds.catalog.table("clinic_records"), exam_scan);
        require(tables_equal_as_multisets(union_fused, union_def), "union differs");

        ExecContext c6 = ctx();
        MultiModalIndex index = build_index(exams, "diagnosis", c6);
        ExecContext c7 = ctx();
        LatentHandle selected =
            mm_select_latent(exams, Condition{"diagnosis", "migraine"}, &index, c7);
        Table select_fused = mm_scan(selected, c7);
        Table select_def = t_select(exam_scan, Condition{"diagnosis", "migraine"});
        require(tables_equal_as_multisets(select_fused, select_def),
                "indexed selection differs from scan-and-filter");

        double elapsed = seconds_since(start);
        require(elapsed < 5.0, "equivalences took " + std::to_string(elapsed) + " s");
    });

    // 3. Rewriting never changes results and terminates quickly.
    gate.run(3, "rewrite soundness on every benchmark plan", [] {
        MiniFixture f;
        PlanEnv env{f.ds.catalog, {}};
        for (auto [latent, attr] :
             std::vector<std::pair<std::string, std::string>>{{"reports.Examination", "diagnosis"},
                                                              {"ntsb.Incident", "severity"}}) {
            ExecContext ctx(f.encoder, f.weights);
            env.indexes.emplace(latent + "." + attr,
                                build_index(LatentHandle::open(f.ds.catalog, latent), attr, ctx));
        }
        for (const auto& query : f.ds.queries) {
            PlanPtr original = parse_plan(query.text, env);
            RewriteResult rewritten = rewrite(*original, env);
            require(rewritten.applications < 100,
                    query.id + " needed " + std::to_string(rewritten.applications) + " rules");
            ExecutionResult a = execute(*original, env, f.encoder, f.weights);
            ExecutionResult b = execute(*rewritten.plan, env, f.encoder, f.weights);
            require(tables_equal_as_multisets(a.table, b.table),
                    query.id + " changes under rewrite");
        }
    });

    // 4. Decoder heads match brute-force references.
    gate.run(4, "decoder micro-suite vs brute-force references", [] {
        std::mt19937_64 rng(20240811);
        std::uniform_real_distribution<float> val(-1.5f, 1.5f);
        std::uniform_int_distribution<int> dim_dist(2, 12);
        std::uniform_int_distribution<int> len_dist(0, 40);
        for (int iter = 0; iter < 200; ++iter) {
            const int dim = dim_dist(rng);
            const int n = len_dist(rng);
            std::vector<std::vector<float>> tokens(n, std::vector<float>(dim));
            for (auto& t : tokens) {
                for (auto& x : t) x = val(rng);
            }
            std::vector<float> cell(dim);
            for (auto& x : cell) x = val(rng);
            std::vector<float> w_i(dim * dim), w_b(dim * dim);
            for (auto& x : w_i) x = val(rng);
            for (auto& x : w_b) x = val(rng);
            float thresh = val(rng);

            RowEmbeddings row;
            row.n = static_cast<std::size_t>(n);
            row.m = 0;
            for (const auto& t : tokens) row.ve.insert(row.ve.end(), t.begin(), t.end());
            row.dd = row.ve;
            auto got = tag_tokens(row, dim, cell, w_i, w_b, thresh);
            auto want = reference::tag_by_brute_force(tokens, cell, w_i, w_b, thresh);
            require(got.size() == want.size(), "tag count mismatch");
            for (std::size_t i = 0; i < got.size(); ++i) {
                require(got[i] == want[i], "tag mismatch in case " + std::to_string(iter));
            }
        }

        std::uniform_real_distribution<double> dval(-1.0, 1.0);
        // every span-set size up to 8, a dozen random matrices each
        for (std::size_t n = 0; n <= 8; ++n) {
            for (int iter = 0; iter < 13; ++iter) {
                std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = dval(rng);
                }
                auto got = cluster_by_distance(dist);
                std::sort(got.begin(), got.end());
                require(got == reference::cluster_by_brute_force(dist),
                        "clustering mismatch at n=" + std::to_string(n));
            }
        }
    });

    // 5. Forward loss against hand-computed values.
    gate.run(5, "pre-training loss forward computation", [] {
        HeadWeights w;
        w.dim = 2;
        w.span_dim = 2;
        w.w_i_rd = {1, 0, 0, 1};
        w.w_b_rd = {0, 1, 1, 0};
        w.thresh_rd = 0.25f;
        w.w_i_ad = {1, 1, 0, 1};
        w.w_b_ad = {1, 0, 1, 1};
        w.thresh_ad = -0.25f;
        w.w_dd = {1, 0, 0, 1};
        w.thresh_dd = 0.5f;
        w.vertical = VerticalAttentionWeights::identity(2);

        EncoderOutput output;
        output.dim = 2;
        RowEmbeddings row;
        row.n = 2;
        row.m = 1;
        row.ve = {1, 0, 0, 1};
        row.dd = {2, 0, 0, 3};
        row.cells = {1, 1};
        output.rows.push_back(row);

        GroupLabels labels;
        GroupLabels::RowLabels rl;
        rl.rd_tags[0] = {IobTag::B, IobTag::I};
        rl.ad_tags = {{IobTag::B, IobTag::O}};
        rl.dd_spans = {{0, 1, 0}, {1, 2, 0}};
        labels.rows.push_back(std::move(rl));

        LossConfig config;
        config.l_mlm = 0.25;
        LossBreakdown loss = pretrain_loss_forward(output, labels, w, config);
        require(std::abs(loss.l_mcr - 0.905175810455938301) < 1e-9, "l_mcr off");
        require(std::abs(loss.l_ata - 2.012490302027199980) < 1e-9, "l_ata off");
        require(std::abs(loss.l_dd - 0.974076984180106681) < 1e-9, "l_dd off");
        require(std::abs(loss.combined - 433.7760442831375954) < 1e-9, "combined off");
        require(loss.combined == 300.0 * loss.l_mcr + 80.0 * loss.l_ata + 1.0 * loss.l_dd +
                                     1.0 * loss.l_mlm,
                "combined is not the exact weighted sum");

        // uniform logits: zero weights and thresholds
        HeadWeights zero = w;
        for (auto* m : {&zero.w_i_rd, &zero.w_b_rd, &zero.w_i_ad, &zero.w_b_ad, &zero.w_dd}) {
            std::fill(m->begin(), m->end(), 0.0f);
        }
        zero.thresh_rd = zero.thresh_ad = zero.thresh_dd = 0.0f;
        LossBreakdown uniform = pretrain_loss_forward(output, labels, zero, {});
        require(std::abs(uniform.l_mcr - std::log(3.0)) < 1e-12, "uniform MCR is not ln 3");
        require(std::abs(uniform.l_ata - std::log(3.0)) < 1e-12, "uniform ATA is not ln 3");
    });

    // 6. Join pruning: encode calls equal the selected documents.
    gate.run(6, "join pruning across selectivities 0.01 / 0.05 / 0.10", [] {
        AnnotatedDataset ds = mini::build_pruning(100);
        OracleEncoder encoder(ds.catalog, ds.annotation_ptrs());
        HeadWeights weights = mini::oracle_weights(ds);
        PlanEnv env{ds.catalog, {}};
        std::vector<std::size_t> touched;
        const std::vector<std::pair<std::string, std::size_t>> buckets = {
            {"b1", 1}, {"b5", 5}, {"b10", 10}};
        for (const auto& [bucket, expected] : buckets) {
            PlanPtr plan = parse_plan("Join[path,player](Select[bucket=" + bucket +
                                          "](roster), Scan(games.Stats))",
                                      env);
            PlanPtr fused = rewrite(*plan, env).plan;
            ExecutionResult result = execute(*fused, env, encoder, weights);
            require(result.table.rows().size() == expected, bucket + " row count");
            require(result.report.encode_calls == expected,
                    bucket + " made " + std::to_string(result.report.encode_calls) +
                        " encode calls, expected " + std::to_string(expected));
            require(result.report.docs_touched.size() == expected, bucket + " docs");
            touched.push_back(result.report.docs_touched.size());
        }
        require(touched[0] < touched[1] && touched[1] < touched[2],
                "docs_touched is not strictly monotone");
    });

    // 7. Indexed selection touches only the matching concept group.
    gate.run(7, "index selection touches only the concept group", [] {
        MiniFixture f;
        PlanEnv env{f.ds.catalog, {}};
        ExecContext build_ctx(f.encoder, f.weights);
        env.indexes.emplace("reports.Examination.diagnosis",
                            build_index(LatentHandle::open(f.ds.catalog, "reports.Examination"),
                                        "diagnosis", build_ctx));

        PlanPtr plan =
            parse_plan("Select[diagnosis=migraine](Scan(reports.Examination))", env);
        PlanPtr indexed = rewrite(*plan, env).plan;
        require(indexed->render() ==
                    "MMScan(MMSelectLatent[diagnosis=migraine](reports.Examination))",
                "selection did not route through the index");
        ExecutionResult fast = execute(*indexed, env, f.encoder, f.weights);
        const std::size_t collection_size =
            f.ds.catalog.collection("reports").documents.size();
        // sel = 2/18, documents touched must stay within 0.15 * |D|
        require(fast.report.docs_touched.size() == 2, "expected the 2 migraine documents");
        require(static_cast<double>(fast.report.docs_touched.size()) <=
                    0.15 * static_cast<double>(collection_size),
                "docs_touched exceeds 0.15 |D|");

        ExecutionResult naive = execute(*plan, env, f.encoder, f.weights);
        require(tables_equal_as_multisets(fast.table, naive.table),
                "indexed result differs from the naive plan");
    });

    // 8. Sliding window extraction is stable on long texts.
    gate.run(8, "sliding window over 1500-token texts", [] {
        AnnotatedDataset long_ds = mini::build_long_ntsb();
        for (const auto& doc : long_ds.catalog.collection("ntsb_long").documents) {
            require(doc.tokens.size() >= 1500,
                    "long document has only " + std::to_string(doc.tokens.size()) + " tokens");
        }
        OracleEncoder encoder(long_ds.catalog, long_ds.annotation_ptrs());
        HeadWeights weights = mini::oracle_weights(long_ds);
        ExecContext ctx(encoder, weights);
        Table windowed = mm_scan(LatentHandle::open(long_ds.catalog, "ntsb_long.Incident"), ctx);

        MiniFixture f;
        ExecContext ctx2(f.encoder, f.weights);
        Table per_doc = mm_scan(LatentHandle::open(f.ds.catalog, "ntsb.Incident"), ctx2);

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
        require(strip(windowed) == strip(per_doc),
                "windowed rows differ from per-document extraction");

        PlanEnv env{long_ds.catalog, {}};
        PlanPtr plan = parse_plan("Scan(ntsb_long.Incident)", env);
        GoldResult gold = execute_gold(*plan, long_ds);
        double f1 = f1_per_text(windowed, gold_rows_per_text(gold.table, "aircraft"),
                                std::string("aircraft"));
        require(f1 == 1.0, "windowed F1 is " + std::to_string(f1));
    });

    // 9. Metric fixtures.
    gate.run(9, "metric hand fixtures at 1e-12", [] {
        auto exact_row = [](std::vector<std::pair<std::string, std::string>> cells) {
            GoldEvalRow row;
            for (auto& [k, v] : cells) row.cells.emplace(k, ValueWithAlts::exact(v));
            return row;
        };
        auto pred = [](std::vector<std::vector<const char*>> rows,
                       std::vector<const char*> attrs) {
            std::vector<Attribute> schema;
            for (const char* a : attrs) schema.push_back(Attribute{a, AttrType::text});
            Table t(schema);
            for (auto& values : rows) {
                Row row;
                for (const char* v : values) {
                    Cell cell;
                    if (v != nullptr) cell.value = v;
                    row.cells.push_back(std::move(cell));
                }
                row.provenance = "d1";
                t.add_row(std::move(row));
            }
            return t;
        };

        {  // perfect -> 1.0
            GoldDocRows gold{"d1", {exact_row({{"a", "x"}, {"b", "y"}})}};
            double f1 = f1_per_text(pred({{"x", "y"}}, {"a", "b"}), {gold}, std::nullopt);
            require(std::abs(f1 - 1.0) < 1e-12, "perfect fixture");
        }
        {  // 1 of 2 correct -> 0.5
            GoldDocRows gold{"d1", {exact_row({{"a", "x"}, {"b", "y"}})}};
            double f1 = f1_per_text(pred({{"x", "z"}}, {"a", "b"}), {gold}, std::nullopt);
            require(std::abs(f1 - 0.5) < 1e-12, "half fixture");
        }
        {  // P=0.5, R=1.0 -> 2/3
            GoldDocRows gold{"d1", {exact_row({{"a", "x"}})}};
            double f1 = f1_per_text(pred({{"x", "extra"}}, {"a", "b"}), {gold}, std::nullopt);
            require(std::abs(f1 - 2.0 / 3.0) < 1e-12, "precision-recall fixture");
        }
        {  // per-group: identical -> 1.0; missing group -> includes a 0
            EvalGroup g1{ValueWithAlts::exact("a"), {{"v", {ValueWithAlts::exact("1")}}}};
            EvalGroup g2{ValueWithAlts::exact("b"), {{"v", {ValueWithAlts::exact("2")}}}};
            require(std::abs(f1_per_group({g1, g2}, {g1, g2}) - 1.0) < 1e-12, "group identity");
            require(std::abs(f1_per_group({g1}, {g1, g2}) - 0.5) < 1e-12, "group zero");
        }
        {  // per-group: one perfect, one half-recalled -> (1 + 2/3) / 2
            EvalGroup perfect{ValueWithAlts::exact("a"),
                              {{"v", {ValueWithAlts::exact("1"), ValueWithAlts::exact("2")}}}};
            EvalGroup half_pred{ValueWithAlts::exact("b"), {{"v", {ValueWithAlts::exact("3")}}}};
            EvalGroup half_gold{ValueWithAlts::exact("b"),
                                {{"v", {ValueWithAlts::exact("3"), ValueWithAlts::exact("4")}}}};
            double f1 = f1_per_group({perfect, half_pred}, {perfect, half_gold});
            require(std::abs(f1 - (1.0 + 2.0 / 3.0) / 2.0) < 1e-12, "group mean fixture");
        }
    });

    // 10. Byte-identical result CSVs across repeated runs.
    gate.run(10, "reproducible eval output", [] {
        MiniFixture f;
        BenchOptions options;
        options.exec.seed = 7;
        auto a = run_benchmark(f.ds, f.encoder, f.weights, options);
        auto b = run_benchmark(f.ds, f.encoder, f.weights, options);
        require(results_csv(a) == results_csv(b), "in-process CSVs differ");

        // and through the CLI, including workspace loading
        fs::path dir = fs::temp_directory_path() / "ltq_acceptance_ws";
        fs::remove_all(dir);
        mini::save_workspace(f.ds, dir.string());
        auto run_eval = [&](const std::string& out_file) {
            std::ostringstream out, err;
            std::string out_path = (dir / out_file).string();
            std::vector<const char*> argv = {"ltq",   "eval",           "--data",
                                             nullptr, "--seed",         "7",
                                             "--out", out_path.c_str()};
            std::string dir_str = dir.string();
            argv[3] = dir_str.c_str();
            int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
            require(code == 0, "eval exited with " + std::to_string(code));
            return read_file(out_path);
        };
        std::string first = run_eval("r1.csv");
        std::string second = run_eval("r2.csv");
        require(!first.empty() && first == second, "CLI result CSVs differ");
        fs::remove_all(dir);
    });

    if (gate.failures == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criterion(s) failed\n", gate.failures);
    return 1;
}
