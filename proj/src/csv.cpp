#include "ltq/csv.hpp"

#include <sstream>

#include "json.hpp"

namespace ltq {

using nlohmann::json;

namespace {

bool needs_quoting(const std::string& field) {
    return field.find_first_of(",\"\n\r") != std::string::npos;
}

std::string quote(const std::string& field) {
    if (!needs_quoting(field)) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

}  // namespace

std::string table_to_csv(const Table& table) {
    std::ostringstream out;
    for (std::size_t i = 0; i < table.attributes().size(); ++i) {
        out << (i ? "," : "") << quote(table.attributes()[i].name);
    }
    out << "\n";
    for (const Row& row : table.rows()) {
        for (std::size_t i = 0; i < row.cells.size(); ++i) {
            if (i) out << ",";
            if (row.cells[i].value) out << quote(*row.cells[i].value);
        }
        out << "\n";
    }
    return out.str();
}

void write_table_csv(const Table& table, const std::string& path) {
    write_file(path, table_to_csv(table));
}

std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool row_started = false;
    for (std::size_t i = 0; i < content.size(); ++i) {
        char c = content[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                quoted = true;
                row_started = true;
                break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                row_started = true;
                break;
            case '\r':
                break;
            case '\n':
                if (row_started || !field.empty() || !row.empty()) {
                    row.push_back(std::move(field));
                    field.clear();
                    rows.push_back(std::move(row));
                    row.clear();
                    row_started = false;
                }
                break;
            default:
                field.push_back(c);
                row_started = true;
        }
    }
    if (row_started || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

Table load_table_csv(const std::string& csv_path, const std::string& schema_path,
                     const std::string& name) {
    json schema = json::parse(read_file(schema_path));
    std::vector<Attribute> attrs;
    for (const auto& ja : schema.at("attributes")) {
        attrs.push_back(Attribute{ja.at("name").get<std::string>(),
                                  attr_type_from_string(ja.at("type").get<std::string>())});
    }
    auto rows = parse_csv(read_file(csv_path));
    if (rows.empty()) throw ValidationError("table csv has no header: " + csv_path);
    if (rows.front().size() != attrs.size()) {
        throw ValidationError("csv header does not match schema arity: " + csv_path);
    }
    for (std::size_t i = 0; i < attrs.size(); ++i) {
        if (rows.front()[i] != attrs[i].name) {
            throw ValidationError("csv header column '" + rows.front()[i] +
                                  "' does not match schema attribute '" + attrs[i].name + "'");
        }
    }
    Table table(attrs);
    table.name = name;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != attrs.size()) {
            throw ValidationError("csv row " + std::to_string(r) + " has wrong arity in " +
                                  csv_path);
        }
        Row row;
        for (const auto& field : rows[r]) {
            Cell cell;
            if (!field.empty()) cell.value = field;
            row.cells.push_back(std::move(cell));
        }
        table.add_row(std::move(row));
    }
    return table;
}

std::string table_schema_to_json(const Table& table) {
    json j;
    j["attributes"] = json::array();
    for (const auto& a : table.attributes()) {
        j["attributes"].push_back(json{{"name", a.name}, {"type", to_string(a.type)}});
    }
    return j.dump(2);
}

void write_table_embeddings(const Table& table, const std::string& path) {
    std::vector<float> data;
    json entries = json::array();
    std::size_t dim = 0;
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
        const Row& row = table.rows()[r];
        for (std::size_t c = 0; c < row.cells.size(); ++c) {
            if (row.cells[c].embed.empty()) continue;
            dim = row.cells[c].embed.size();
            entries.push_back(json{{"row", r}, {"col", c}, {"offset", data.size()}});
            data.insert(data.end(), row.cells[c].embed.begin(), row.cells[c].embed.end());
        }
    }
    json manifest;
    manifest["dim"] = dim;
    manifest["entries"] = std::move(entries);
    std::string blob = manifest.dump();
    std::string out;
    std::uint64_t json_len = blob.size();
    std::uint64_t float_count = data.size();
    out.append(reinterpret_cast<const char*>(&json_len), sizeof(json_len));
    out.append(blob);
    out.append(reinterpret_cast<const char*>(&float_count), sizeof(float_count));
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    write_file(path, out);
}

TableEmbeddings read_table_embeddings(const std::string& path) {
    std::string blob = read_file(path);
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > blob.size()) throw ValidationError("embedding sidecar truncated: " + path);
    };
    std::uint64_t json_len = 0;
    need(sizeof(json_len));
    std::memcpy(&json_len, blob.data(), sizeof(json_len));
    pos += sizeof(json_len);
    need(json_len);
    json manifest = json::parse(blob.substr(pos, json_len));
    pos += json_len;
    std::uint64_t float_count = 0;
    need(sizeof(float_count));
    std::memcpy(&float_count, blob.data() + pos, sizeof(float_count));
    pos += sizeof(float_count);
    need(float_count * sizeof(float));
    const float* data = reinterpret_cast<const float*>(blob.data() + pos);

    TableEmbeddings out;
    out.dim = manifest.at("dim").get<std::size_t>();
    for (const auto& je : manifest.at("entries")) {
        std::size_t offset = je.at("offset").get<std::size_t>();
        if (offset + out.dim > float_count) {
            throw ValidationError("embedding sidecar entry out of range: " + path);
        }
        out.entries.push_back(TableEmbeddings::Entry{je.at("row").get<std::size_t>(),
                                                     je.at("col").get<std::size_t>(),
                                                     {data + offset, data + offset + out.dim}});
    }
    return out;
}

}  // namespace ltq
