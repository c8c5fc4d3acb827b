#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ltq {

// Raised when inputs fail validation (bad schema, unknown name, malformed
// file). The CLI maps these to exit code 1.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a well-formed request fails during execution (dangling join
// paths, fingerprint mismatch, unreachable endpoint). CLI exit code 2.
struct ExecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// FNV-1a, used for weight fingerprints and replay-file context keys.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string base64_encode(const void* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace ltq
