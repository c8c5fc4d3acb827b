#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ltq/datamodel.hpp"

namespace ltq {

// RFC-4180 style: fields with commas, quotes or newlines are quoted, inner
// quotes doubled. NULL cells render as empty fields.
std::string table_to_csv(const Table& table);
void write_table_csv(const Table& table, const std::string& path);

std::vector<std::vector<std::string>> parse_csv(const std::string& content);

// CSV with a header row plus a sidecar JSON {"attributes":[{"name","type"}]}.
Table load_table_csv(const std::string& csv_path, const std::string& schema_path,
                     const std::string& name);

std::string table_schema_to_json(const Table& table);

// Sidecar with the retained span embeddings of a materialized table, keyed by
// (row, column); reuses the embedding-store binary layout conventions.
void write_table_embeddings(const Table& table, const std::string& path);

struct TableEmbeddings {
    std::size_t dim = 0;
    struct Entry {
        std::size_t row = 0;
        std::size_t col = 0;
        std::vector<float> embed;
    };
    std::vector<Entry> entries;
};

TableEmbeddings read_table_embeddings(const std::string& path);

}  // namespace ltq
