#pragma once

#include <map>
#include <optional>
#include <string>

#include "ltq/harness.hpp"
#include "ltq/index.hpp"

namespace ltq {

// On-disk layout consumed by the CLI:
//   collections/<name>.json   manifest, inline text or paths to .txt files
//   tables/<name>.csv         plus <name>.schema.json sidecar
//   latents/<qualified>.json  registered latent table schemas
//   annotations/<qualified>.json
//   bench/<id>.mmq            plan files, sorted by id
//   indexes/<qualified>.<attr>.mmix
//   weights/oracle.json       default head weights, when present
struct Workspace {
    AnnotatedDataset dataset;
    std::map<std::string, MultiModalIndex> indexes;
    std::optional<std::string> default_weights_path;
};

Workspace load_workspace(const std::string& dir);

LatentTableSchema latent_schema_from_json(const std::string& json_text);
std::string latent_schema_to_json(const LatentTableSchema& schema);

}  // namespace ltq
