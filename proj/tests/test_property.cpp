// Property tests over randomly generated annotated corpora: the oracle
// round-trip and the definitional equivalences must hold for any dataset the
// generator can produce, not just the bundled fixture.

#include <random>
#include <set>

#include "doctest.h"
#include "ltq/harness.hpp"
#include "ltq/index.hpp"

using namespace ltq;

namespace {

struct DocSketch {
    std::string path;
    std::string text;
    DocAnnotation annotation;
    std::size_t rows = 0;

    void say(const std::string& piece) { text += piece; }

    void value(std::size_t row, const std::string& attr, const std::string& surface,
               std::vector<std::string> alternatives) {
        if (annotation.rows.size() <= row) annotation.rows.resize(row + 1);
        marks.push_back(Mark{row, attr, text.size(), text.size() + surface.size(),
                             std::move(alternatives)});
        text += surface;
    }

    Document finish() {
        Document doc = Document::make(path, text);
        annotation.doc_path = path;
        for (const Mark& mark : marks) {
            std::size_t start_tok = doc.tokens.size(), end_tok = 0;
            for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
                if (doc.tokens[t].char_start == mark.start) start_tok = t;
                if (doc.tokens[t].char_end == mark.end) end_tok = t + 1;
            }
            REQUIRE(start_tok < doc.tokens.size());
            REQUIRE(end_tok > start_tok);
            GoldCell& cell = annotation.rows[mark.row].cells[mark.attr];
            cell.spans.push_back(GoldSpan{start_tok, end_tok});
            if (cell.alternatives.empty()) cell.alternatives = mark.alternatives;
        }
        return doc;
    }

private:
    struct Mark {
        std::size_t row;
        std::string attr;
        std::size_t start, end;
        std::vector<std::string> alternatives;
    };
    std::vector<Mark> marks;
};

struct Vocab {
    std::mt19937_64 rng;
    std::size_t counter = 0;

    explicit Vocab(std::uint64_t seed) : rng(seed) {}

    std::string word() {
        static const std::vector<std::string> syllables = {"ka", "ro",  "mi", "ta", "len",
                                                           "dor", "va", "su", "ne", "bel"};
        std::uniform_int_distribution<std::size_t> pick(0, syllables.size() - 1);
        std::uniform_int_distribution<int> len(2, 3);
        std::string w;
        for (int i = 0, n = len(rng); i < n; ++i) w += syllables[pick(rng)];
        return w + std::to_string(counter++);  // surfaces stay globally unique
    }

    std::string phrase(int max_words) {
        std::uniform_int_distribution<int> count(1, max_words);
        std::string p;
        for (int i = 0, n = count(rng); i < n; ++i) {
            if (i > 0) p += " ";
            p += word();
        }
        return p;
    }
};

struct RandomCorpus {
    AnnotatedDataset ds;
    std::map<int, std::set<std::string>> finding_docs;  // concept -> doc paths
    std::vector<std::vector<std::string>> finding_surfaces;
};

RandomCorpus random_corpus(std::uint64_t seed) {
    RandomCorpus corpus;
    Vocab vocab(seed);
    std::mt19937_64 rng(seed ^ 0xabcdefULL);

    // finding concepts, some with a synonym surface
    const int concepts = 5;
    for (int c = 0; c < concepts; ++c) {
        std::vector<std::string> surfaces = {vocab.phrase(2)};
        if (c % 2 == 0) surfaces.push_back(vocab.phrase(3));
        corpus.finding_surfaces.push_back(surfaces);
    }

    std::uniform_int_distribution<int> doc_count(6, 12);
    std::uniform_int_distribution<int> pad_words(0, 30);

    // single-row collection
    TextCollection singles;
    singles.name = "rnd_reports";
    CollectionAnnotation singles_ann;
    singles_ann.latent_table = "rnd_reports.Rec";
    Table people(std::vector<Attribute>{{"subject", AttrType::text},
                                        {"path", AttrType::path}});
    people.name = "people";

    const int n_single = doc_count(rng);
    for (int i = 0; i < n_single; ++i) {
        DocSketch sketch;
        sketch.path = "rnd_reports/r" + std::to_string(i) + ".txt";
        sketch.rows = 1;
        std::string subject = vocab.word() + " " + vocab.word();
        int concept_id = static_cast<int>(rng() % concepts);
        const auto& surfaces = corpus.finding_surfaces[concept_id];
        std::string remedy = vocab.word();

        // occasional leading padding pushes the document across windows when
        // a small context length is used
        for (int p = pad_words(rng); p > 0; --p) sketch.say("pad" + std::to_string(p) + " ");
        sketch.say("Subject ");
        sketch.value(0, "subject", subject, {subject});
        sketch.say(" was observed. Findings include ");
        sketch.value(0, "finding", surfaces[0], surfaces);
        sketch.say(". ");
        if (surfaces.size() > 1 && rng() % 2 == 0) {
            sketch.say("Also noted ");
            sketch.value(0, "finding", surfaces[1], surfaces);
            sketch.say(" again. ");
        }
        sketch.say("Remedy given was ");
        sketch.value(0, "remedy", remedy, {remedy});
        sketch.say(".");

        corpus.finding_docs[concept_id].insert(sketch.path);
        Document doc = sketch.finish();
        singles_ann.documents.push_back(sketch.annotation);
        singles.documents.push_back(std::move(doc));

        Row row;
        row.cells.push_back(Cell{subject, {}});
        row.cells.push_back(Cell{sketch.path, {}});
        people.add_row(std::move(row));
    }

    // multi-row collection
    TextCollection logs;
    logs.name = "rnd_logs";
    CollectionAnnotation logs_ann;
    logs_ann.latent_table = "rnd_logs.Entry";
    Table ledger(std::vector<Attribute>{{"code", AttrType::text},
                                        {"grade", AttrType::text},
                                        {"spot", AttrType::text}});
    ledger.name = "ledger";
    const std::vector<std::string> grades = {"alphagrade", "betagrade", "gammagrade"};

    const int n_multi = doc_count(rng) / 2 + 2;
    int code_counter = 0;
    for (int i = 0; i < n_multi; ++i) {
        DocSketch sketch;
        sketch.path = "rnd_logs/l" + std::to_string(i) + ".txt";
        std::uniform_int_distribution<int> row_count(1, 3);
        const int rows = row_count(rng);
        sketch.rows = rows;
        sketch.say("Log " + std::to_string(i) + ". ");
        for (int r = 0; r < rows; ++r) {
            std::string code = "Q" + std::to_string(100 + code_counter++) + "X";
            std::string grade = grades[rng() % grades.size()];
            std::string spot = vocab.word();
            sketch.say("Unit ");
            sketch.value(r, "code", code, {code});
            sketch.say(" rated ");
            sketch.value(r, "grade", grade, {grade});
            sketch.say(" near ");
            sketch.value(r, "spot", spot, {spot});
            sketch.say(". ");
            sketch.annotation.rows[r].key = code;
        }
        Document doc = sketch.finish();
        logs_ann.documents.push_back(sketch.annotation);
        logs.documents.push_back(std::move(doc));
    }
    {
        Row row;
        row.cells.push_back(Cell{"Q900X", {}});
        row.cells.push_back(Cell{grades[0], {}});
        row.cells.push_back(Cell{vocab.word(), {}});
        ledger.add_row(std::move(row));
    }

    corpus.ds.catalog.add_collection(std::move(singles));
    corpus.ds.catalog.add_collection(std::move(logs));
    corpus.ds.catalog.add_table(std::move(people));
    corpus.ds.catalog.add_table(std::move(ledger));

    LatentTableSchema rec;
    rec.name = "Rec";
    rec.collection = "rnd_reports";
    rec.latent_attributes = {{"subject", AttrType::text},
                             {"finding", AttrType::text},
                             {"remedy", AttrType::text}};
    rec.kind = TableKind::single_row;
    corpus.ds.catalog.register_latent_table(rec);

    LatentTableSchema entry;
    entry.name = "Entry";
    entry.collection = "rnd_logs";
    entry.latent_attributes = {{"code", AttrType::text},
                               {"grade", AttrType::text},
                               {"spot", AttrType::text}};
    entry.kind = TableKind::multi_row;
    entry.document_level_key = "code";
    corpus.ds.catalog.register_latent_table(entry);

    corpus.ds.annotations.push_back(std::move(singles_ann));
    corpus.ds.annotations.push_back(std::move(logs_ann));
    corpus.ds.validate();
    return corpus;
}

// a narrow context length forces windowing even on short documents
class NarrowOracle : public OracleEncoder {
public:
    using OracleEncoder::OracleEncoder;
    std::size_t context_length() const override { return 64; }
};

}  // namespace

TEST_CASE("random corpora: oracle extraction reproduces the gold annotation") {
    for (std::uint64_t seed : {11ULL, 22ULL, 33ULL, 44ULL, 55ULL}) {
        CAPTURE(seed);
        RandomCorpus corpus = random_corpus(seed);
        OracleEncoder encoder(corpus.ds.catalog, corpus.ds.annotation_ptrs());
        HeadWeights weights = HeadWeights::oracle(encoder.dim());
        PlanEnv env{corpus.ds.catalog, {}};

        // single-row scan matches gold
        ExecContext c1(encoder, weights);
        Table singles = mm_scan(LatentHandle::open(corpus.ds.catalog, "rnd_reports.Rec"), c1);
        GoldResult gold1 = execute_gold(*parse_plan("Scan(rnd_reports.Rec)", env), corpus.ds);
        CHECK(f1_per_text(singles, gold_rows_per_text(gold1.table, std::nullopt),
                          std::nullopt) == doctest::Approx(1.0));

        // multi-row scan matches gold
        ExecContext c2(encoder, weights);
        Table multis = mm_scan(LatentHandle::open(corpus.ds.catalog, "rnd_logs.Entry"), c2);
        GoldResult gold2 = execute_gold(*parse_plan("Scan(rnd_logs.Entry)", env), corpus.ds);
        CHECK(f1_per_text(multis, gold_rows_per_text(gold2.table, "code"),
                          std::string("code")) == doctest::Approx(1.0));

        // join and union stay definitional
        ExecContext c3(encoder, weights);
        Table joined = mm_join(corpus.ds.catalog.table("people"),
                               LatentHandle::open(corpus.ds.catalog, "rnd_reports.Rec"),
                               {"path", "subject"}, c3);
        CHECK(tables_equal_as_multisets(
            joined, t_join(corpus.ds.catalog.table("people"), singles, {"path", "subject"})));

        ExecContext c4(encoder, weights);
        Table unioned = mm_union(corpus.ds.catalog.table("ledger"),
                                 LatentHandle::open(corpus.ds.catalog, "rnd_logs.Entry"), c4);
        CHECK(tables_equal_as_multisets(unioned,
                                        t_union(corpus.ds.catalog.table("ledger"), multis)));

        // index probes find exactly the documents of the queried concept
        ExecContext c5(encoder, weights);
        MultiModalIndex index =
            build_index(LatentHandle::open(corpus.ds.catalog, "rnd_reports.Rec"), "finding", c5);
        for (const auto& [concept_id, docs] : corpus.finding_docs) {
            for (const auto& surface : corpus.finding_surfaces[concept_id]) {
                ExecContext c6(encoder, weights);
                CHECK(probe(index, surface, c6) == docs);
            }
        }
    }
}

TEST_CASE("random corpora: windowed extraction is stable under a narrow context") {
    for (std::uint64_t seed : {7ULL, 8ULL}) {
        CAPTURE(seed);
        RandomCorpus corpus = random_corpus(seed);
        NarrowOracle narrow(corpus.ds.catalog, corpus.ds.annotation_ptrs());
        OracleEncoder wide(corpus.ds.catalog, corpus.ds.annotation_ptrs());
        HeadWeights weights = HeadWeights::oracle(narrow.dim());

        for (const char* latent : {"rnd_reports.Rec", "rnd_logs.Entry"}) {
            ExecContext cn(narrow, weights);
            Table windowed = mm_scan(LatentHandle::open(corpus.ds.catalog, latent), cn);
            ExecContext cw(wide, weights);
            Table whole = mm_scan(LatentHandle::open(corpus.ds.catalog, latent), cw);
            CHECK(tables_equal_as_multisets(windowed, whole));
            CHECK(cn.report.encode_calls >= cw.report.encode_calls);
        }
    }
}
