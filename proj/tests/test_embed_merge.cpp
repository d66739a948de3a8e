#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vlmerge/embed_merge.hpp"

#include <random>

using namespace vlmerge;
using M = MergeMethod;

namespace {

FloatTensor rows(std::vector<std::vector<float>> r) {
    FloatTensor t;
    t.shape = {static_cast<std::int64_t>(r.size()), r.empty() ? 0 : static_cast<std::int64_t>(r[0].size())};
    for (const auto& row : r) t.values.insert(t.values.end(), row.begin(), row.end());
    return t;
}

std::vector<float> row(const FloatTensor& t, std::size_t i) {
    const auto w = static_cast<std::size_t>(t.shape[1]);
    return {t.values.begin() + static_cast<std::ptrdiff_t>(i * w),
            t.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * w)};
}

}  // namespace

TEST_CASE("align_vocab orders lvlm tokens first, then rm-only tokens") {
    const auto a = align_vocab(Vocab({"b"}), Vocab({"a", "b"}), Vocab({"b", "c"}));
    REQUIRE(a.rows.size() == 3);
    CHECK(a.output_vocab().tokens() == std::vector<std::string>{"a", "b", "c"});
    CHECK(a.rows[0].lvlm_row == std::optional<std::size_t>(0));
    CHECK_FALSE(a.rows[0].rm_row);
    CHECK_FALSE(a.rows[0].pre_row);
    CHECK(a.rows[1].pre_row == std::optional<std::size_t>(0));
    CHECK(a.rows[1].lvlm_row == std::optional<std::size_t>(1));
    CHECK(a.rows[1].rm_row == std::optional<std::size_t>(0));
    CHECK(a.rows[2].rm_row == std::optional<std::size_t>(1));
    CHECK_FALSE(a.rows[2].lvlm_row);
}

TEST_CASE("align_vocab with identical vocabs") {
    const Vocab v({"x", "y", "z"});
    const auto a = align_vocab(v, v, v);
    CHECK(a.output_vocab() == v);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.rows[i].pre_row == std::optional<std::size_t>(i));
        CHECK(a.rows[i].lvlm_row == std::optional<std::size_t>(i));
        CHECK(a.rows[i].rm_row == std::optional<std::size_t>(i));
    }
}

TEST_CASE("tokens known only to the base model are dropped") {
    const auto a = align_vocab(Vocab({"old", "a"}), Vocab({"a"}), Vocab({"a"}));
    CHECK(a.output_vocab().tokens() == std::vector<std::string>{"a"});
    CHECK(a.rows[0].pre_row == std::optional<std::size_t>(1));
}

TEST_CASE("rule 3: shared token outside the base vocab is averaged") {
    const auto a = align_vocab(Vocab({"p"}), Vocab({"t"}), Vocab({"t"}));
    const auto out = merge_embedding_rows(a, rows({{9, 9}}), rows({{1, 3}}), rows({{3, 1}}), M::TaskArithmetic);
    CHECK(out.shape == Shape{1, 2});
    CHECK(row(out, 0) == std::vector<float>{2, 2});
}

TEST_CASE("rule 2: a token in one model takes that model's row") {
    const auto a = align_vocab(Vocab({"p"}), Vocab({"p", "img"}), Vocab({"p", "pad"}));
    for (auto m : {M::Linear, M::TaskArithmetic, M::Ties, M::DareTaskArithmetic, M::DareTies}) {
        const auto out = merge_embedding_rows(a, rows({{0, 0}}), rows({{1, 1}, {5, -5}}), rows({{3, 3}, {7, 8}}), m);
        CHECK(row(out, 1) == std::vector<float>{5, -5});
        CHECK(row(out, 2) == std::vector<float>{7, 8});
    }
}

TEST_CASE("rule 1 and the linear exception") {
    const auto a = align_vocab(Vocab({"tok"}), Vocab({"tok"}), Vocab({"tok"}));
    const auto pre = rows({{0.5f, 0.5f}});
    const auto lvlm = rows({{1, 3}});
    const auto rm = rows({{3, 5}});
    for (auto m : {M::TaskArithmetic, M::Ties, M::DareTaskArithmetic, M::DareTies}) {
        CHECK(row(merge_embedding_rows(a, pre, lvlm, rm, m), 0) == std::vector<float>{0.5f, 0.5f});
    }
    CHECK(row(merge_embedding_rows(a, pre, lvlm, rm, M::Linear), 0) == std::vector<float>{2, 4});
}

TEST_CASE("identical vocabs reproduce the base embedding") {
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n;
    auto random_rows = [&] {
        FloatTensor t{{6, 5}, std::vector<float>(30)};
        for (auto& v : t.values) v = n(rng);
        return t;
    };
    const Vocab v = Vocab::positional(6);
    const auto pre = random_rows();
    CHECK(merge_embedding_rows(align_vocab(v, v, v), pre, random_rows(), random_rows(), M::Ties) == pre);
}

TEST_CASE("row count is the size of the lvlm/rm union") {
    const auto a = align_vocab(Vocab({"a", "b", "c"}), Vocab({"a", "b", "x", "y"}), Vocab({"b", "y", "z"}));
    CHECK(a.rows.size() == 5);
    FloatTensor pre{{3, 2}, std::vector<float>(6, 1)};
    FloatTensor lvlm{{4, 2}, std::vector<float>(8, 2)};
    FloatTensor rm{{3, 2}, std::vector<float>(6, 4)};
    const auto out = merge_embedding_rows(a, pre, lvlm, rm, M::Linear);
    CHECK(out.shape == Shape{5, 2});
    CHECK(out.values == std::vector<float>{2, 2, 3, 3, 2, 2, 3, 3, 4, 4});
}

TEST_CASE("errors") {
    const auto a = align_vocab(Vocab({"a"}), Vocab({"a"}), Vocab({"a"}));
    CHECK_THROWS(merge_embedding_rows(a, rows({{1, 2}}), rows({{1, 2}}), rows({{1, 2, 3}}), M::Linear));
    const auto b = align_vocab(Vocab({"a"}), Vocab({"a", "b"}), Vocab({"a"}));
    CHECK_THROWS(merge_embedding_rows(b, rows({{1}}), rows({{1}}), rows({{1}}), M::Linear));
    CHECK_THROWS(Vocab({"a", "a"}));
}
