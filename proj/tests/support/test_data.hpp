#pragma once

#include "vlmerge/merge_core.hpp"
#include "vlmerge/tensor_store.hpp"

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testdata {

// Transformer maps for one random merge case. Each tensor gets one dtype shared
// by all three models and the values are already rounded through it.
struct MergeCase {
    vlmerge::FloatTensorMap pre;
    vlmerge::FloatTensorMap lvlm;
    vlmerge::FloatTensorMap rm;
    std::map<std::string, vlmerge::DType> dtypes;
};

MergeCase random_merge_case(std::mt19937_64& rng, std::size_t max_elements = 256);

vlmerge::Tensor random_tensor(std::mt19937_64& rng, vlmerge::DType dtype, const vlmerge::Shape& shape);
vlmerge::Checkpoint random_checkpoint(std::mt19937_64& rng, std::size_t tensors, std::size_t max_elements = 64);

struct MalformedCase {
    std::string label;
    std::vector<std::byte> bytes;
    std::string expected;  // substring of the error message
};

// Ten broken files, each with the error it must be rejected with.
std::vector<MalformedCase> malformed_corpus();

// Raw file from a header string and a data region.
std::vector<std::byte> raw_file(const std::string& header, std::size_t data_bytes);

// Fresh empty directory under the system temp dir.
std::filesystem::path fresh_dir(const std::string& tag);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace testdata
