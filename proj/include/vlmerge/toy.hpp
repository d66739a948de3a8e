#pragma once

#include "vlmerge/eval.hpp"
#include "vlmerge/tensor_store.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vlmerge {

// Small synthetic base / vision-language / reward-model triple that follows the
// default manifest naming. The LVLM and RM are the base plus random deltas.
struct ToyOptions {
    std::uint64_t seed = 1;
    int layers = 3;
    int hidden = 64;
    int mlp = 128;
    int vocab = 48;       // base vocabulary; LVLM and RM each add one token
    int vision_dim = 32;
    DType dtype = DType::BF16;
};

struct ToyTriple {
    Checkpoint pre;
    Checkpoint lvlm;
    Checkpoint rm;
};

ToyTriple make_toy_triple(const ToyOptions& options = {});

// Pairwise records spread round-robin over `domains`.
std::vector<PairwiseRecord> make_toy_pairwise(std::size_t count, const std::vector<std::string>& domains,
                                              std::uint64_t seed);
// Best-of-n records with n candidates each, at least one of them correct.
std::vector<BoNRecord> make_toy_bon(std::size_t count, std::size_t n, std::uint64_t seed);

std::string pairwise_to_jsonl(const std::vector<PairwiseRecord>& records);
std::string bon_to_jsonl(const std::vector<BoNRecord>& records);

}  // namespace vlmerge
