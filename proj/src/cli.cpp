#include "ltq/cli.hpp"

#include <filesystem>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "ltq/csv.hpp"
#include "ltq/llm.hpp"
#include "ltq/mini.hpp"
#include "ltq/workspace.hpp"

namespace ltq {

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string data_dir = ".";
    std::string encoder = "oracle";
    std::string weights_file;
    std::string embeddings_base;  // replay input
    std::uint64_t seed = 0;
    bool strict_join = true;
};

struct Session {
    Workspace workspace;
    std::unique_ptr<Encoder> encoder;
    HeadWeights weights;
};

Session open_session(const CommonOpts& opts) {
    Session session;
    session.workspace = load_workspace(opts.data_dir);
    const AnnotatedDataset& ds = session.workspace.dataset;

    if (opts.encoder == "oracle") {
        if (ds.annotations.empty()) {
            throw ValidationError("oracle encoder needs annotations/ in the workspace");
        }
        session.encoder = std::make_unique<OracleEncoder>(ds.catalog, ds.annotation_ptrs());
    } else if (opts.encoder == "hash") {
        if (!opts.weights_file.empty()) {
            HeadWeights w = HeadWeights::load(opts.weights_file);
            session.encoder = std::make_unique<HashEncoder>(w.dim, w.vertical);
        } else {
            session.encoder = std::make_unique<HashEncoder>();
        }
    } else if (opts.encoder == "replay") {
        if (opts.embeddings_base.empty()) {
            throw ValidationError("--encoder replay needs --embeddings BASE");
        }
        session.encoder =
            std::make_unique<ReplayEncoder>(EmbeddingStore::load(opts.embeddings_base));
    } else {
        throw ValidationError("unknown encoder '" + opts.encoder + "'");
    }

    if (!opts.weights_file.empty()) {
        session.weights = HeadWeights::load(opts.weights_file);
    } else if (session.workspace.default_weights_path && opts.encoder == "oracle") {
        session.weights = HeadWeights::load(*session.workspace.default_weights_path);
    } else {
        session.weights = HeadWeights::oracle(session.encoder->dim());
    }
    return session;
}

ExecOptions exec_options(const CommonOpts& opts) {
    ExecOptions exec;
    exec.seed = opts.seed;
    exec.strict_join = opts.strict_join;
    return exec;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--data", opts.data_dir, "workspace directory")->capture_default_str();
    cmd->add_option("--encoder", opts.encoder, "encoder: oracle, hash or replay")
        ->check(CLI::IsMember({"oracle", "hash", "replay"}))
        ->capture_default_str();
    cmd->add_option("--weights", opts.weights_file, "head weights JSON file");
    cmd->add_option("--embeddings", opts.embeddings_base,
                    "embedding store base path (replay encoder)");
    cmd->add_option("--seed", opts.seed, "seed for sampled example rows");
    cmd->add_flag("--strict-join,!--lenient-join", opts.strict_join,
                  "error on dangling join paths (default) or skip them");
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"latent-table query engine"};
    app.require_subcommand(1);

    CommonOpts opts;

    // register
    auto* reg = app.add_subcommand("register", "validate and register a latent table schema");
    std::string schema_file;
    reg->add_option("schema", schema_file, "latent schema JSON")->required();
    reg->add_option("--data", opts.data_dir, "workspace directory");

    // build-index
    auto* build = app.add_subcommand("build-index", "build a multi-modal index");
    std::string index_latent, index_attr, index_out;
    build->add_option("latent", index_latent, "latent table, e.g. reports.Examination")
        ->required();
    build->add_option("attribute", index_attr, "latent attribute to index")->required();
    build->add_option("--out", index_out, "output file (default: indexes/<latent>.<attr>.mmix)");
    add_common(build, opts);

    // run
    auto* run = app.add_subcommand("run", "execute a plan file and print CSV");
    std::string plan_file, run_out, dump_base, emb_sidecar;
    bool no_rewrite = false;
    run->add_option("plan", plan_file, "plan file (.mmq text or .json tree)")->required();
    run->add_option("--out", run_out, "write CSV here instead of stdout");
    run->add_flag("--no-rewrite", no_rewrite, "execute the plan exactly as written");
    run->add_option("--dump-embeddings", dump_base,
                    "record encoder outputs to BASE.json/BASE.bin");
    run->add_option("--embeddings-sidecar", emb_sidecar,
                    "write retained span embeddings next to the CSV");
    add_common(run, opts);

    // eval
    auto* eval = app.add_subcommand("eval", "run the benchmark plans and score them");
    std::string eval_out, eval_report;
    eval->add_option("--out", eval_out, "deterministic results CSV");
    eval->add_option("--report", eval_report, "full report CSV including runtimes");
    add_common(eval, opts);

    // suggest-schema
    auto* suggest = app.add_subcommand("suggest-schema",
                                       "ask a chat endpoint for key and row-kind suggestions");
    std::string suggest_collection, suggest_attrs;
    std::size_t sample_count = 3;
    suggest->add_option("collection", suggest_collection, "text collection name")->required();
    suggest->add_option("--attrs", suggest_attrs, "comma-separated attribute names")->required();
    suggest->add_option("--samples", sample_count, "number of sample texts")
        ->capture_default_str();
    suggest->add_option("--data", opts.data_dir, "workspace directory");

    // gen-mini
    auto* gen = app.add_subcommand("gen-mini", "write the bundled mini dataset as a workspace");
    std::string gen_dir;
    gen->add_option("dir", gen_dir, "target directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << app.help();
        return 64;
    }

    try {
        if (*reg) {
            Workspace ws = load_workspace(opts.data_dir);
            LatentTableSchema schema = latent_schema_from_json(read_file(schema_file));
            std::string qualified = ws.dataset.catalog.register_latent_table(schema);
            fs::create_directories(fs::path(opts.data_dir) / "latents");
            write_file((fs::path(opts.data_dir) / "latents" / (qualified + ".json")).string(),
                       latent_schema_to_json(schema));
            out << "registered " << qualified << "\n";
        } else if (*build) {
            Session session = open_session(opts);
            ExecContext ctx(*session.encoder, session.weights, exec_options(opts));
            MultiModalIndex index = build_index(
                LatentHandle::open(session.workspace.dataset.catalog, index_latent), index_attr,
                ctx);
            if (index_out.empty()) {
                fs::create_directories(fs::path(opts.data_dir) / "indexes");
                index_out = (fs::path(opts.data_dir) / "indexes" /
                             (index_latent + "." + index_attr + ".mmix"))
                                .string();
            }
            index.persist(index_out);
            out << "index with " << index.groups.size() << " concept groups -> " << index_out
                << "\n";
        } else if (*run) {
            Session session = open_session(opts);
            EmbeddingStore dump_store;
            const Encoder* encoder = session.encoder.get();
            std::unique_ptr<RecordingEncoder> recorder;
            if (!dump_base.empty()) {
                recorder = std::make_unique<RecordingEncoder>(*session.encoder, dump_store);
                encoder = recorder.get();
            }

            PlanEnv env{session.workspace.dataset.catalog, std::move(session.workspace.indexes)};
            std::string text = read_file(plan_file);
            PlanPtr plan = fs::path(plan_file).extension() == ".json"
                               ? parse_plan_json(text, env)
                               : parse_plan(trim(text), env);
            if (!no_rewrite) plan = rewrite(*plan, env).plan;
            ExecutionResult result =
                execute(*plan, env, *encoder, session.weights, exec_options(opts));

            if (!dump_base.empty()) dump_store.save(dump_base);
            if (!emb_sidecar.empty()) write_table_embeddings(result.table, emb_sidecar);
            if (run_out.empty()) {
                out << table_to_csv(result.table);
            } else {
                write_table_csv(result.table, run_out);
            }
            err << "rows: " << result.table.rows().size()
                << "  encode calls: " << result.report.encode_calls
                << "  docs touched: " << result.report.docs_touched.size() << "\n";
            for (const auto& warning : result.report.warnings) err << "warning: " << warning
                                                                   << "\n";
        } else if (*eval) {
            Session session = open_session(opts);
            BenchOptions bench;
            bench.exec = exec_options(opts);
            auto results =
                run_benchmark(session.workspace.dataset, *session.encoder, session.weights, bench);
            if (!eval_out.empty()) write_file(eval_out, results_csv(results));
            if (!eval_report.empty()) write_file(eval_report, report_csv(results));
            out << report_text(results);
            for (const auto& r : results) {
                if (!r.error.empty()) return 2;
            }
        } else if (*suggest) {
            Workspace ws = load_workspace(opts.data_dir);
            const TextCollection& collection =
                ws.dataset.catalog.collection(suggest_collection);
            std::vector<std::string> samples;
            for (std::size_t i = 0; i < collection.documents.size() && i < sample_count; ++i) {
                samples.push_back(collection.documents[i].text);
            }
            std::vector<std::string> attrs = split(suggest_attrs, ',');
            for (auto& a : attrs) a = trim(a);
            auto config = ChatConfig::from_environment();
            if (!config) {
                throw ValidationError(
                    "no chat endpoint configured; set LTQ_LLM_BASE_URL (and optionally "
                    "LTQ_LLM_MODEL, LTQ_LLM_API_KEY)");
            }
            ChatClient client(*config);
            SchemaSuggestion suggestion = suggest_registration(samples, attrs, client);
            out << "{\n  \"document_level_key\": \"" << suggestion.document_level_key
                << "\",\n  \"kind\": \""
                << (suggestion.kind == TableKind::multi_row ? "multi_row" : "single_row")
                << "\"\n}\n";
            err << "confirm before registering; suggestions are not applied automatically\n";
        } else if (*gen) {
            mini::save_workspace(mini::build(), gen_dir);
            out << "mini dataset written to " << gen_dir << "\n";
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const ExecError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace ltq
