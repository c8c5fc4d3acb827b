#include "ltq/workspace.hpp"

#include <algorithm>
#include <filesystem>

#include "json.hpp"
#include "ltq/csv.hpp"

namespace ltq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& extension) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == extension) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

TextCollection collection_from_manifest(const fs::path& manifest_path) {
    json j = json::parse(read_file(manifest_path.string()));
    TextCollection collection;
    collection.name = j.at("name").get<std::string>();
    for (const auto& jd : j.at("documents")) {
        std::string path = jd.at("path").get<std::string>();
        std::string text;
        if (jd.contains("text")) {
            text = jd["text"].get<std::string>();
        } else {
            text = read_file((manifest_path.parent_path() / path).string());
        }
        collection.documents.push_back(Document::make(std::move(path), std::move(text)));
    }
    return collection;
}

}  // namespace

LatentTableSchema latent_schema_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    LatentTableSchema schema;
    schema.name = j.at("name").get<std::string>();
    schema.collection = j.at("collection").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "single_row") {
        schema.kind = TableKind::single_row;
    } else if (kind == "multi_row") {
        schema.kind = TableKind::multi_row;
    } else {
        throw ValidationError("unknown latent table kind '" + kind + "'");
    }
    if (j.contains("document_level_key") && !j["document_level_key"].is_null()) {
        schema.document_level_key = j["document_level_key"].get<std::string>();
    }
    for (const auto& ja : j.at("latent_attributes")) {
        schema.latent_attributes.push_back(
            Attribute{ja.at("name").get<std::string>(),
                      attr_type_from_string(ja.at("type").get<std::string>())});
    }
    return schema;
}

std::string latent_schema_to_json(const LatentTableSchema& schema) {
    json j;
    j["name"] = schema.name;
    j["collection"] = schema.collection;
    j["kind"] = schema.kind == TableKind::multi_row ? "multi_row" : "single_row";
    if (schema.document_level_key) j["document_level_key"] = *schema.document_level_key;
    j["latent_attributes"] = json::array();
    for (const auto& a : schema.latent_attributes) {
        j["latent_attributes"].push_back(json{{"name", a.name}, {"type", to_string(a.type)}});
    }
    return j.dump(2);
}

Workspace load_workspace(const std::string& dir) {
    Workspace ws;
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw ValidationError("no such workspace directory: " + dir);

    for (const auto& path : sorted_files(root / "collections", ".json")) {
        ws.dataset.catalog.add_collection(collection_from_manifest(path));
    }
    for (const auto& path : sorted_files(root / "tables", ".csv")) {
        fs::path schema_path = path;
        schema_path.replace_extension(".schema.json");
        if (!fs::exists(schema_path)) {
            throw ValidationError("table csv without schema sidecar: " + path.string());
        }
        ws.dataset.catalog.add_table(
            load_table_csv(path.string(), schema_path.string(), path.stem().string()));
    }
    for (const auto& path : sorted_files(root / "latents", ".json")) {
        ws.dataset.catalog.register_latent_table(latent_schema_from_json(read_file(path.string())));
    }
    for (const auto& path : sorted_files(root / "annotations", ".json")) {
        ws.dataset.annotations.push_back(annotation_from_json(read_file(path.string())));
    }
    for (const auto& path : sorted_files(root / "bench", ".mmq")) {
        ws.dataset.queries.push_back(
            BenchQuery{path.stem().string(), trim(read_file(path.string()))});
    }
    for (const auto& path : sorted_files(root / "indexes", ".mmix")) {
        MultiModalIndex index = MultiModalIndex::load(path.string());
        std::string key = index.latent_table + "." + index.attribute;
        ws.indexes.emplace(std::move(key), std::move(index));
    }
    const fs::path weights = root / "weights" / "oracle.json";
    if (fs::exists(weights)) ws.default_weights_path = weights.string();

    ws.dataset.validate();
    return ws;
}

}  // namespace ltq
