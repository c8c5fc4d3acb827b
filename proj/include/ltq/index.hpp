#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ltq/operators.hpp"

namespace ltq {

// Concept-grouped hash index from extracted values to document paths: an
// exact-match hash over normalized surfaces, with values that the DD head
// considers duplicates merged into one group.
class MultiModalIndex {
public:
    struct Member {
        std::string value;
        std::vector<float> embed;
        std::string doc_path;
    };
    struct Group {
        std::string representative;
        std::vector<float> representative_embed;
        std::vector<Member> members;
        std::set<std::string> doc_paths;
    };

    std::string latent_table;
    std::string attribute;
    std::uint64_t weights_fingerprint = 0;
    std::vector<Group> groups;
    // normalized surface -> group id, the exact-match fast path
    std::map<std::string, std::size_t> by_value;

    void persist(const std::string& path) const;
    static MultiModalIndex load(const std::string& path);

    bool structurally_equal(const MultiModalIndex& other) const;
};

// Scans every document of the handle once for `attribute`, clusters the
// extracted values with the DD head, and maps each concept group to the
// documents it appears in.
MultiModalIndex build_index(const LatentHandle& latent, const std::string& attribute,
                            ExecContext& ctx);

struct ProbeOptions {
    bool match_members = false;  // match all members instead of representatives
};

// Document paths of every group whose representative is a DD-duplicate of the
// query value; an exact surface match always hits its own group. Encodes only
// the query value itself.
std::set<std::string> probe(const MultiModalIndex& index, const std::string& value,
                            ExecContext& ctx, const ProbeOptions& opts = {});

}  // namespace ltq
