#pragma once

// Single-file container of named float32 arrays plus a JSON metadata block.
//
// Layout (little-endian):
//   8 bytes   magic "SAMLPARC"
//   u32       format version (1)
//   u64       header length in bytes
//   header    UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape", "offset", "count"}]}
//   payload   float32 values, arrays back to back; offsets are relative to payload start

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "samlp/tensor.hpp"

namespace samlp {

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Archive {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const;
};

struct ArchiveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace samlp
