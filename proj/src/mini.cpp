#include "ltq/mini.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "json.hpp"
#include "ltq/csv.hpp"

namespace ltq::mini {

using nlohmann::json;

namespace {

// A document script: literal text interleaved with annotated values, so the
// same content can be assembled standalone or concatenated into long texts.
struct Piece {
    bool is_value = false;
    std::size_t row = 0;
    std::string attr;
    std::string text;
    std::vector<std::string> alternatives;
};

struct DocScript {
    std::string path;
    std::size_t rows = 0;
    std::vector<Piece> pieces;

    void say(std::string text) { pieces.push_back(Piece{false, 0, "", std::move(text), {}}); }
    void value(std::size_t row, std::string attr, std::string surface,
               std::vector<std::string> alternatives) {
        pieces.push_back(
            Piece{true, row, std::move(attr), std::move(surface), std::move(alternatives)});
    }
};

// Renders scripts into one document plus its annotation. Values must start
// and end on token boundaries; the fixture templates guarantee that.
std::pair<Document, DocAnnotation> render(const std::string& path,
                                          const std::vector<const DocScript*>& scripts,
                                          const std::string& filler,
                                          const std::string& key_attr = "") {
    std::string text;
    struct Mark {
        std::size_t row;
        std::string attr;
        std::size_t char_start, char_end;
        std::vector<std::string> alternatives;
    };
    std::vector<Mark> marks;
    std::size_t row_offset = 0;
    std::size_t total_rows = 0;
    for (std::size_t s = 0; s < scripts.size(); ++s) {
        if (s > 0 && !filler.empty()) text += filler;
        for (const Piece& piece : scripts[s]->pieces) {
            if (piece.is_value) {
                marks.push_back(Mark{row_offset + piece.row, piece.attr, text.size(),
                                     text.size() + piece.text.size(), piece.alternatives});
            }
            text += piece.text;
        }
        row_offset += scripts[s]->rows;
        total_rows = row_offset;
    }

    Document doc = Document::make(path, std::move(text));
    auto token_at_start = [&](std::size_t pos) {
        for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
            if (doc.tokens[t].char_start == pos) return t;
        }
        throw ValidationError("fixture value does not start on a token boundary");
    };
    auto token_at_end = [&](std::size_t pos) {
        for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
            if (doc.tokens[t].char_end == pos) return t + 1;
        }
        throw ValidationError("fixture value does not end on a token boundary");
    };

    DocAnnotation ann;
    ann.doc_path = doc.path;
    ann.rows.resize(total_rows);
    for (const Mark& mark : marks) {
        GoldCell& cell = ann.rows[mark.row].cells[mark.attr];
        cell.spans.push_back(GoldSpan{token_at_start(mark.char_start),
                                      token_at_end(mark.char_end)});
        if (cell.alternatives.empty()) cell.alternatives = mark.alternatives;
    }
    if (!key_attr.empty()) {
        for (auto& row : ann.rows) {
            auto it = row.cells.find(key_attr);
            if (it != row.cells.end() && !it->second.alternatives.empty()) {
                row.key = it->second.alternatives.front();
            }
        }
    }
    // duplicate groups: the span ids of every cell with several mentions
    std::size_t span_id = 0;
    for (auto& row : ann.rows) {
        for (auto& [attr, cell] : row.cells) {
            if (cell.spans.size() > 1) {
                std::vector<std::size_t> group;
                for (std::size_t i = 0; i < cell.spans.size(); ++i) group.push_back(span_id + i);
                ann.duplicate_groups.push_back(std::move(group));
            }
            span_id += cell.spans.size();
        }
    }
    return {std::move(doc), std::move(ann)};
}

Cell cell_of(std::string value) { return Cell{std::move(value), {}}; }

const std::vector<std::string> kPatientNames = {
    "Alice Carter", "Bob Hansen",  "Carol Mendez",  "David Kim",   "Erin Walsh",
    "Farid Aziz",   "Grace Liu",   "Henry Adler",   "Iris Novak",  "Jonas Weber",
    "Kara Olsen",   "Liam Brooks", "Mona Haddad",   "Nina Petrova", "Omar Sayed",
    "Paula Vidal",  "Quentin Ross", "Rita Sampson"};

struct DiagnosisPlan {
    std::string surface;                  // mention used in the text
    std::string second;                   // optional second mention (synonym)
    std::vector<std::string> alternatives;
};

const std::vector<std::string> kFeverAlts = {"fever", "high body temperature"};
const std::vector<std::string> kMigraineAlts = {"migraine", "severe headache"};
const std::vector<std::string> kBrokenArmAlts = {"broken arm", "fractured arm"};
const std::vector<std::string> kFluAlts = {"influenza", "flu"};

const std::vector<DiagnosisPlan> kDiagnoses = {
    {"fever", "high body temperature", kFeverAlts},
    {"migraine", "", kMigraineAlts},
    {"sore throat", "", {"sore throat"}},
    {"broken arm", "fractured arm", kBrokenArmAlts},
    {"flu", "", kFluAlts},
    {"sunburn", "", {"sunburn"}},
    {"food poisoning", "", {"food poisoning"}},
    {"back pain", "", {"back pain"}},
    {"high body temperature", "", kFeverAlts},
    {"migraine", "", kMigraineAlts},
    {"sore throat", "", {"sore throat"}},
    {"fractured arm", "", kBrokenArmAlts},
    {"influenza", "flu", kFluAlts},
    {"sunburn", "", {"sunburn"}},
    {"food poisoning", "", {"food poisoning"}},
    {"back pain", "", {"back pain"}},
    {"fever", "", kFeverAlts},
    {"sore throat", "", {"sore throat"}},
};

const std::vector<std::string> kTreatments = {
    "rest",       "ibuprofen",        "lozenges",      "a cast",
    "fluids",     "aloe vera",        "charcoal tablets", "physiotherapy"};

std::vector<DocScript> patient_scripts() {
    std::vector<DocScript> scripts;
    for (std::size_t i = 0; i < kPatientNames.size(); ++i) {
        DocScript script;
        char num[16];
        std::snprintf(num, sizeof(num), "d%02zu", i + 1);
        script.path = "reports/" + std::string(num) + ".txt";
        script.rows = 1;
        const DiagnosisPlan& diag = kDiagnoses[i];
        const std::string& treatment = kTreatments[i % kTreatments.size()];

        script.say("Patient ");
        script.value(0, "name", kPatientNames[i], {kPatientNames[i]});
        script.say(" visited the clinic in the morning. The examination points to ");
        script.value(0, "diagnosis", diag.surface, diag.alternatives);
        script.say(". ");
        if (!diag.second.empty()) {
            script.say("Notes mention ");
            script.value(0, "diagnosis", diag.second, diag.alternatives);
            script.say(" persisting since Monday. ");
        }
        script.say("Prescribed treatment is ");
        script.value(0, "treatment", treatment, {treatment});
        script.say(".");
        scripts.push_back(std::move(script));
    }
    return scripts;
}

struct IncidentPlan {
    std::string aircraft;
    std::string severity;
    std::string site;
    bool second_severity_mention = false;
};

std::vector<std::vector<IncidentPlan>> incident_plans() {
    const std::vector<std::string> sites = {"Denver", "Aspen", "Boulder", "Salem",
                                            "Reno",   "Provo", "Fargo",   "Tulsa"};
    // four documents (1, 4, 7, 10) contain a substantial incident
    const std::vector<std::vector<std::string>> severities = {
        {"substantial", "minor"}, {"minor", "destroyed"},  {"destroyed", "minor"},
        {"minor", "substantial"}, {"destroyed", "minor"},  {"minor", "destroyed"},
        {"minor", "substantial", "destroyed"},
        {"destroyed", "minor", "minor"},
        {"minor", "destroyed", "minor"},
        {"substantial"},          {"minor"},               {"destroyed"}};
    std::vector<std::vector<IncidentPlan>> docs;
    std::size_t code = 0;
    std::size_t site = 0;
    for (std::size_t d = 0; d < severities.size(); ++d) {
        std::vector<IncidentPlan> incidents;
        for (std::size_t k = 0; k < severities[d].size(); ++k) {
            IncidentPlan plan;
            plan.aircraft = "N" + std::to_string(201 + code++) + "Z";
            plan.severity = severities[d][k];
            plan.site = sites[site++ % sites.size()];
            plan.second_severity_mention = (d == 0 && k == 0);
            incidents.push_back(std::move(plan));
        }
        docs.push_back(std::move(incidents));
    }
    return docs;
}

std::vector<DocScript> ntsb_scripts() {
    std::vector<DocScript> scripts;
    auto plans = incident_plans();
    for (std::size_t d = 0; d < plans.size(); ++d) {
        DocScript script;
        char num[16];
        std::snprintf(num, sizeof(num), "b%02zu", d + 1);
        script.path = "ntsb/" + std::string(num) + ".txt";
        script.rows = plans[d].size();
        script.say("Bulletin " + std::to_string(d + 1) + ". ");
        for (std::size_t k = 0; k < plans[d].size(); ++k) {
            const IncidentPlan& plan = plans[d][k];
            script.say(k == 0 ? "The aircraft " : "Another aircraft, ");
            script.value(k, "aircraft", plan.aircraft, {plan.aircraft});
            script.say(k == 0 ? " went down near " : ", went down near ");
            script.value(k, "site", plan.site, {plan.site});
            script.say(" and sustained ");
            script.value(k, "severity", plan.severity, {plan.severity});
            script.say(" damage. ");
            if (plan.second_severity_mention) {
                script.say("The ");
                script.value(k, "severity", plan.severity, {plan.severity});
                script.say(" damage forced a closure of the strip. ");
            }
        }
        scripts.push_back(std::move(script));
    }
    return scripts;
}

TextCollection collection_from_scripts(const std::string& name,
                                       const std::vector<DocScript>& scripts,
                                       CollectionAnnotation& annotation,
                                       const std::string& key_attr = "") {
    TextCollection collection;
    collection.name = name;
    for (const auto& script : scripts) {
        auto [doc, ann] = render(script.path, {&script}, "", key_attr);
        collection.documents.push_back(std::move(doc));
        annotation.documents.push_back(std::move(ann));
    }
    return collection;
}

const std::vector<std::pair<std::string, std::string>> kBenchQueries = {
    {"q01", "Join[path,name](patients, Scan(reports.Examination))"},
    {"q02", "Union(clinic_records, Scan(reports.Examination))"},
    {"q03", "Scan(reports.Examination)"},
    {"q04", "Project[name,age,diagnosis](Join[path,name](patients, Scan(reports.Examination)))"},
    {"q05",
     "Union(Project[name,diagnosis](clinic_records), "
     "Project[name,diagnosis](Scan(reports.Examination)))"},
    {"q06", "Project[aircraft,severity](Scan(ntsb.Incident))"},
    {"q07", "Join[path,name](Select[ward=B2](patients), Scan(reports.Examination))"},
    {"q08", "Join[path](aircraft_info, Scan(ntsb.Incident))"},
    {"q09", "Scan(ntsb.Incident)"},
    {"q10", "Select[diagnosis=migraine](Scan(reports.Examination))"},
    {"q11", "Scan(MMSelectLatent[severity=substantial](ntsb.Incident))"},
    {"q12", "MMAggregate[list,diagnosis](Scan(reports.Examination))"},
    {"q13", "Aggregate[count,severity](Scan(ntsb.Incident))"},
    {"q14", "MMSelectTable[diagnosis=fever](MMJoin[path,name](patients, reports.Examination))"},
    {"q15", "Aggregate[list,severity](Union(incident_log, Scan(ntsb.Incident)))"},
};

}  // namespace

AnnotatedDataset build() {
    AnnotatedDataset ds;

    auto patients_scripts = patient_scripts();
    CollectionAnnotation reports_ann;
    reports_ann.latent_table = "reports.Examination";
    ds.catalog.add_collection(collection_from_scripts("reports", patients_scripts, reports_ann));

    auto bulletins = ntsb_scripts();
    CollectionAnnotation ntsb_ann;
    ntsb_ann.latent_table = "ntsb.Incident";
    ds.catalog.add_collection(collection_from_scripts("ntsb", bulletins, ntsb_ann, "aircraft"));

    LatentTableSchema exams;
    exams.name = "Examination";
    exams.collection = "reports";
    exams.latent_attributes = {{"name", AttrType::text},
                               {"diagnosis", AttrType::text},
                               {"treatment", AttrType::text}};
    exams.kind = TableKind::single_row;
    ds.catalog.register_latent_table(exams);

    LatentTableSchema incidents;
    incidents.name = "Incident";
    incidents.collection = "ntsb";
    incidents.latent_attributes = {{"aircraft", AttrType::text},
                                   {"severity", AttrType::text},
                                   {"site", AttrType::text}};
    incidents.kind = TableKind::multi_row;
    incidents.document_level_key = "aircraft";
    ds.catalog.register_latent_table(incidents);

    Table patients(std::vector<Attribute>{{"name", AttrType::text},
                                          {"age", AttrType::number},
                                          {"ward", AttrType::text},
                                          {"path", AttrType::path}});
    patients.name = "patients";
    for (std::size_t i = 0; i < kPatientNames.size(); ++i) {
        Row row;
        row.cells.push_back(cell_of(kPatientNames[i]));
        row.cells.push_back(cell_of(std::to_string(20 + (i * 7) % 50)));
        bool b2 = i == 1 || i == 5 || i == 10 || i == 14;
        row.cells.push_back(cell_of(b2 ? "B2" : (i % 2 == 0 ? "A1" : "C3")));
        row.cells.push_back(cell_of(patients_scripts[i].path));
        patients.add_row(std::move(row));
    }
    ds.catalog.add_table(std::move(patients));

    Table clinic(std::vector<Attribute>{{"name", AttrType::text},
                                        {"diagnosis", AttrType::text},
                                        {"treatment", AttrType::text}});
    clinic.name = "clinic_records";
    for (const auto& [n, d, t] : std::vector<std::array<std::string, 3>>{
             {"Tom Varga", "asthma", "inhaler"},
             {"Una Marsh", "bronchitis", "steam therapy"},
             {"Vik Shah", "anemia", "iron supplements"},
             {"Wes Boyd", "insomnia", "melatonin"}}) {
        Row row;
        row.cells.push_back(cell_of(n));
        row.cells.push_back(cell_of(d));
        row.cells.push_back(cell_of(t));
        clinic.add_row(std::move(row));
    }
    ds.catalog.add_table(std::move(clinic));

    Table aircraft_info(std::vector<Attribute>{{"operator_name", AttrType::text},
                                               {"path", AttrType::path}});
    aircraft_info.name = "aircraft_info";
    const std::vector<std::string> operators = {"Crestline Air", "Mesa Hops", "Bluebird Cargo",
                                                "Stratus West",  "Alto Lines", "Canyon Feeder"};
    for (std::size_t d = 0; d < bulletins.size(); ++d) {
        Row row;
        row.cells.push_back(cell_of(operators[d % operators.size()]));
        row.cells.push_back(cell_of(bulletins[d].path));
        aircraft_info.add_row(std::move(row));
    }
    ds.catalog.add_table(std::move(aircraft_info));

    Table incident_log(std::vector<Attribute>{{"aircraft", AttrType::text},
                                              {"severity", AttrType::text},
                                              {"site", AttrType::text}});
    incident_log.name = "incident_log";
    for (const auto& [a, s, c] : std::vector<std::array<std::string, 3>>{
             {"N500XY", "minor", "Waco"},
             {"N501XY", "destroyed", "Akron"},
             {"N502XY", "substantial", "Minot"}}) {
        Row row;
        row.cells.push_back(cell_of(a));
        row.cells.push_back(cell_of(s));
        row.cells.push_back(cell_of(c));
        incident_log.add_row(std::move(row));
    }
    ds.catalog.add_table(std::move(incident_log));

    ds.annotations.push_back(std::move(reports_ann));
    ds.annotations.push_back(std::move(ntsb_ann));

    for (const auto& [id, text] : kBenchQueries) ds.queries.push_back(BenchQuery{id, text});

    ds.validate();
    return ds;
}

HeadWeights oracle_weights(const AnnotatedDataset& dataset) {
    ConceptTable concepts = ConceptTable::build(dataset.annotation_ptrs());
    return HeadWeights::oracle(std::max(2, 2 * concepts.count()));
}

AnnotatedDataset build_long_ntsb(std::size_t groups, std::size_t min_tokens) {
    AnnotatedDataset ds;
    auto bulletins = ntsb_scripts();
    if (groups == 0 || groups > bulletins.size()) {
        throw ValidationError("bad group count for long documents");
    }

    const std::string filler_sentence =
        "The weather service later published a routine advisory for the region covering wind, "
        "visibility and temperature conditions across several counties together with guidance "
        "for local dispatchers. ";
    const std::size_t filler_tokens = tokenize(filler_sentence).size();

    CollectionAnnotation annotation;
    annotation.latent_table = "ntsb_long.Incident";
    TextCollection collection;
    collection.name = "ntsb_long";

    const std::size_t per_group = (bulletins.size() + groups - 1) / groups;
    std::size_t next = 0;
    std::size_t group_id = 0;
    while (next < bulletins.size()) {
        std::vector<const DocScript*> members;
        std::size_t member_tokens = 0;
        for (std::size_t i = 0; i < per_group && next < bulletins.size(); ++i, ++next) {
            members.push_back(&bulletins[next]);
            std::string text;
            for (const auto& piece : bulletins[next].pieces) text += piece.text;
            member_tokens += tokenize(text).size();
        }
        // enough filler between members to push the text past min_tokens
        std::size_t gaps = members.size() > 1 ? members.size() - 1 : 1;
        std::size_t needed = min_tokens > member_tokens ? min_tokens - member_tokens : 0;
        std::size_t repeats = needed / (gaps * filler_tokens) + 1;
        std::string filler;
        for (std::size_t r = 0; r < repeats; ++r) filler += filler_sentence;

        auto [doc, ann] = render("ntsb_long/g" + std::to_string(++group_id) + ".txt", members,
                                 filler, "aircraft");
        collection.documents.push_back(std::move(doc));
        annotation.documents.push_back(std::move(ann));
    }

    ds.catalog.add_collection(std::move(collection));
    LatentTableSchema schema;
    schema.name = "Incident";
    schema.collection = "ntsb_long";
    schema.latent_attributes = {{"aircraft", AttrType::text},
                                {"severity", AttrType::text},
                                {"site", AttrType::text}};
    schema.kind = TableKind::multi_row;
    schema.document_level_key = "aircraft";
    ds.catalog.register_latent_table(schema);
    ds.annotations.push_back(std::move(annotation));
    ds.validate();
    return ds;
}

AnnotatedDataset build_pruning(std::size_t docs) {
    AnnotatedDataset ds;
    CollectionAnnotation annotation;
    annotation.latent_table = "games.Stats";
    TextCollection collection;
    collection.name = "games";

    Table roster(std::vector<Attribute>{{"player", AttrType::text},
                                        {"bucket", AttrType::text},
                                        {"path", AttrType::path}});
    roster.name = "roster";

    for (std::size_t i = 0; i < docs; ++i) {
        DocScript script;
        script.path = "games/g" + std::to_string(i) + ".txt";
        script.rows = 1;
        std::string player = "Player" + std::to_string(i);
        std::string points = std::to_string(10 + (i % 30));
        script.say("Game bulletin " + std::to_string(i) + ". ");
        script.value(0, "player", player, {player});
        script.say(" posted ");
        script.value(0, "points", points, {points});
        script.say(" points in the open round.");
        auto [doc, ann] = render(script.path, {&script}, "");
        collection.documents.push_back(std::move(doc));
        annotation.documents.push_back(std::move(ann));

        Row row;
        row.cells.push_back(cell_of(player));
        std::string bucket = "rest";
        if (i < 1) bucket = "b1";
        else if (i < 6) bucket = "b5";
        else if (i < 16) bucket = "b10";
        row.cells.push_back(cell_of(bucket));
        row.cells.push_back(cell_of(script.path));
        roster.add_row(std::move(row));
    }

    ds.catalog.add_collection(std::move(collection));
    LatentTableSchema schema;
    schema.name = "Stats";
    schema.collection = "games";
    schema.latent_attributes = {{"player", AttrType::text}, {"points", AttrType::number}};
    schema.kind = TableKind::single_row;
    ds.catalog.register_latent_table(schema);
    ds.catalog.add_table(std::move(roster));
    ds.annotations.push_back(std::move(annotation));
    ds.validate();
    return ds;
}

void save_workspace(const AnnotatedDataset& dataset, const std::string& dir) {
    namespace fs = std::filesystem;
    for (const char* sub : {"collections", "tables", "latents", "annotations", "bench",
                            "weights", "indexes"}) {
        fs::create_directories(fs::path(dir) / sub);
    }

    std::set<std::string> collections;
    for (const auto& latent_name : dataset.catalog.latent_names()) {
        const auto& schema = dataset.catalog.latent(latent_name);
        collections.insert(schema.collection);

        json js;
        js["name"] = schema.name;
        js["collection"] = schema.collection;
        js["kind"] = schema.kind == TableKind::multi_row ? "multi_row" : "single_row";
        if (schema.document_level_key) js["document_level_key"] = *schema.document_level_key;
        js["latent_attributes"] = json::array();
        for (const auto& a : schema.latent_attributes) {
            js["latent_attributes"].push_back(json{{"name", a.name}, {"type", to_string(a.type)}});
        }
        write_file((fs::path(dir) / "latents" / (latent_name + ".json")).string(), js.dump(2));
    }

    for (const auto& name : collections) {
        const auto& collection = dataset.catalog.collection(name);
        json jc;
        jc["name"] = collection.name;
        jc["documents"] = json::array();
        for (const auto& doc : collection.documents) {
            jc["documents"].push_back(json{{"path", doc.path}, {"text", doc.text}});
        }
        write_file((fs::path(dir) / "collections" / (name + ".json")).string(), jc.dump(2));
    }

    for (const auto& table_name :
         {"patients", "clinic_records", "aircraft_info", "incident_log", "roster"}) {
        if (!dataset.catalog.has_table(table_name)) continue;
        const Table& table = dataset.catalog.table(table_name);
        write_table_csv(table, (fs::path(dir) / "tables" / (std::string(table_name) + ".csv"))
                                   .string());
        write_file((fs::path(dir) / "tables" / (std::string(table_name) + ".schema.json"))
                       .string(),
                   table_schema_to_json(table));
    }

    for (const auto& ann : dataset.annotations) {
        write_file((fs::path(dir) / "annotations" / (ann.latent_table + ".json")).string(),
                   annotation_to_json(ann));
    }

    for (const auto& query : dataset.queries) {
        write_file((fs::path(dir) / "bench" / (query.id + ".mmq")).string(), query.text + "\n");
    }

    oracle_weights(dataset).save((fs::path(dir) / "weights" / "oracle.json").string());
}

}  // namespace ltq::mini
