#include "vlmerge/embed_merge.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace vlmerge {

Vocab AlignedVocab::output_vocab() const {
    std::vector<std::string> tokens;
    tokens.reserve(rows.size());
    for (const auto& r : rows) {
        tokens.push_back(r.token);
    }
    return Vocab(std::move(tokens));
}

AlignedVocab align_vocab(const Vocab& pre, const Vocab& lvlm, const Vocab& rm) {
    AlignedVocab out;
    out.rows.reserve(lvlm.size() + rm.size());
    for (std::size_t i = 0; i < lvlm.size(); ++i) {
        const auto& tok = lvlm.tokens()[i];
        out.rows.push_back({tok, pre.find(tok), i, rm.find(tok)});
    }
    for (std::size_t i = 0; i < rm.size(); ++i) {
        const auto& tok = rm.tokens()[i];
        if (!lvlm.find(tok)) {
            out.rows.push_back({tok, pre.find(tok), std::nullopt, i});
        }
    }
    return out;
}

namespace {

std::size_t width_of(const FloatTensor& t, const char* label) {
    if (t.shape.size() != 2) {
        throw std::invalid_argument(fmt::format("{} embedding must be 2-d, got {}", label, shape_to_string(t.shape)));
    }
    return static_cast<std::size_t>(t.shape[1]);
}

std::span<const float> row_of(const FloatTensor& t, std::size_t row, std::size_t width, const char* label,
                              const std::string& token) {
    if (row >= static_cast<std::size_t>(t.shape[0])) {
        throw std::out_of_range(fmt::format("{} row index {} for token '{}' is out of range ({} rows)", label, row,
                                            token, t.shape[0]));
    }
    return std::span<const float>(t.values).subspan(row * width, width);
}

}  // namespace

FloatTensor merge_embedding_rows(const AlignedVocab& aligned, const FloatTensor& pre_emb, const FloatTensor& lvlm_emb,
                                 const FloatTensor& rm_emb, MergeMethod method) {
    const std::size_t width = width_of(lvlm_emb, "lvlm");
    if (width_of(rm_emb, "rm") != width) {
        throw std::invalid_argument(
            fmt::format("embedding width mismatch: lvlm {} vs rm {}", width, rm_emb.shape[1]));
    }
    const bool use_pre = method != MergeMethod::Linear;
    if (use_pre && width_of(pre_emb, "pre") != width) {
        throw std::invalid_argument(
            fmt::format("embedding width mismatch: lvlm {} vs pre {}", width, pre_emb.shape[1]));
    }

    FloatTensor out;
    out.shape = {static_cast<std::int64_t>(aligned.rows.size()), static_cast<std::int64_t>(width)};
    out.values.resize(aligned.rows.size() * width);
    for (std::size_t r = 0; r < aligned.rows.size(); ++r) {
        const auto& row = aligned.rows[r];
        auto dst = std::span<float>(out.values).subspan(r * width, width);
        if (use_pre && row.pre_row) {
            const auto src = row_of(pre_emb, *row.pre_row, width, "pre", row.token);
            std::copy(src.begin(), src.end(), dst.begin());
        } else if (row.lvlm_row && row.rm_row) {
            const auto a = row_of(lvlm_emb, *row.lvlm_row, width, "lvlm", row.token);
            const auto b = row_of(rm_emb, *row.rm_row, width, "rm", row.token);
            for (std::size_t c = 0; c < width; ++c) {
                dst[c] = (a[c] + b[c]) / 2.0f;
            }
        } else if (row.lvlm_row) {
            const auto src = row_of(lvlm_emb, *row.lvlm_row, width, "lvlm", row.token);
            std::copy(src.begin(), src.end(), dst.begin());
        } else if (row.rm_row) {
            const auto src = row_of(rm_emb, *row.rm_row, width, "rm", row.token);
            std::copy(src.begin(), src.end(), dst.begin());
        } else {
            throw std::invalid_argument(fmt::format("token '{}' has no lvlm or rm row", row.token));
        }
    }
    return out;
}

}  // namespace vlmerge
