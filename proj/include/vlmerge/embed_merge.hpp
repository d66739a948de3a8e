#pragma once

#include "vlmerge/merge_core.hpp"
#include "vlmerge/tensor_store.hpp"

#include <optional>
#include <string>
#include <vector>

namespace vlmerge {

struct AlignedRow {
    std::string token;
    std::optional<std::size_t> pre_row;
    std::optional<std::size_t> lvlm_row;
    std::optional<std::size_t> rm_row;
};

// Union of the LVLM and RM vocabularies in output order: LVLM order first,
// then RM-only tokens in RM order. Tokens known only to the base model are
// dropped.
struct AlignedVocab {
    std::vector<AlignedRow> rows;

    Vocab output_vocab() const;
};

AlignedVocab align_vocab(const Vocab& pre, const Vocab& lvlm, const Vocab& rm);

// Per output token, first applicable rule:
//   1. token in the base vocab  -> base row (not for Linear merging)
//   2. token in one of lvlm/rm  -> that row
//   3. token in both            -> unweighted mean of the two rows
// Embeddings are [rows, width]. Throws on width mismatch or a row index past
// the end of its matrix.
FloatTensor merge_embedding_rows(const AlignedVocab& aligned, const FloatTensor& pre_emb, const FloatTensor& lvlm_emb,
                                 const FloatTensor& rm_emb, MergeMethod method);

}  // namespace vlmerge
