#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "reference_merge.hpp"
#include "test_data.hpp"
#include "vlmerge/assembler.hpp"
#include "vlmerge/toy.hpp"

#include <random>

using namespace vlmerge;
using M = MergeMethod;
using R = ComponentRole;

namespace {

ModelTriple toy(const ToyOptions& o = {}) {
    auto t = make_toy_triple(o);
    return classify_triple(std::move(t.pre), std::move(t.lvlm), std::move(t.rm), ManifestConfig::defaults());
}

Checkpoint assemble(const ModelTriple& t, MergeRecipe r, unsigned jobs = 1) {
    return assemble_vlrm(AssemblyPlan{r, &t, {{"vlmerge.sha256.pre", "abc"}}, jobs});
}

// transformer tensors of one model keyed by canonical name
FloatTensorMap transformer(const ClassifiedModel& m) {
    FloatTensorMap out;
    for (const auto& [key, name] : m.components.canonical_index(R::Transformer)) {
        const auto& t = m.ckpt.at(name);
        out.emplace(key, FloatTensor{t.shape, t.to_f32()});
    }
    return out;
}

void check_verbatim_parts(const ModelTriple& t, const Checkpoint& out) {
    for (auto role : {R::VisionEncoder, R::Adapter}) {
        for (const auto& name : t.lvlm.components.names_with(role)) {
            CHECK(out.at(name) == t.lvlm.ckpt.at(name));
        }
    }
    CHECK(out.at("score.weight") == t.rm.ckpt.at("score.weight"));
    CHECK_FALSE(out.tensors.contains("language_model.lm_head.weight"));
    CHECK_FALSE(out.tensors.contains("lm_head.weight"));
}

}  // namespace

TEST_CASE("linear at lambda 1 keeps the lvlm transformer") {
    const auto t = toy();
    const auto out = assemble(t, {M::Linear, 1.0, {}, {}});
    for (const auto& name : t.lvlm.components.names_with(R::Transformer)) {
        CHECK(out.at(name) == t.lvlm.ckpt.at(name));
    }
    check_verbatim_parts(t, out);
}

TEST_CASE("task arithmetic at lambda 0 gives the base transformer") {
    const auto t = toy();
    const auto out = assemble(t, {M::TaskArithmetic, 0.0, {}, {}});
    for (const auto& [key, name] : t.lvlm.components.canonical_index(R::Transformer)) {
        CHECK(out.at(name).data == t.pre.ckpt.at(key).data);
    }
    check_verbatim_parts(t, out);
}

TEST_CASE("dare-ties toy merge matches the scalar pipeline") {
    const auto t = toy();
    const MergeRecipe r{M::DareTies, 0.7, 0.4, 7};
    const auto out = assemble(t, r);

    testdata::MergeCase c{transformer(t.pre), transformer(t.lvlm), transformer(t.rm), {}};
    const auto want = testdata::reference_merge(c, r);
    const auto merged = merge_transformer(r, c.pre, c.lvlm, c.rm);
    CHECK(testdata::max_rel_error(merged, want) <= 1e-6);
    for (const auto& [key, name] : t.lvlm.components.canonical_index(R::Transformer)) {
        const auto& stored = out.at(name);
        CHECK(stored.dtype == DType::BF16);
        CHECK(stored == Tensor::from_f32(merged.at(key).values, stored.shape, DType::BF16));
    }
    check_verbatim_parts(t, out);
    CHECK(out.metadata.at("vlmerge.method") == "dare-ties");
    CHECK(out.metadata.at("vlmerge.lambda") == "0.7");
    CHECK(out.metadata.at("vlmerge.density") == "0.4");
    CHECK(out.metadata.at("vlmerge.seed") == "7");
    CHECK(out.metadata.at("vlmerge.sha256.pre") == "abc");
    CHECK(out.metadata.at("vlmerge.vocab") == "sidecar");
}

TEST_CASE("merged embedding follows the vocab rules") {
    const auto t = toy();
    const auto out = assemble(t, {M::TaskArithmetic, 1.0, {}, {}});
    REQUIRE(out.vocab);
    const auto& tokens = out.vocab->tokens();
    REQUIRE(tokens.size() == 50);
    CHECK(tokens[48] == "<|image|>");
    CHECK(tokens[49] == "<|pad|>");
    const auto emb = out.at("language_model.model.embed_tokens.weight").to_f32();
    const auto pre = t.pre.ckpt.at("model.embed_tokens.weight").to_f32();
    const auto lvlm = t.lvlm.ckpt.at("language_model.model.embed_tokens.weight").to_f32();
    const auto rm = t.rm.ckpt.at("model.embed_tokens.weight").to_f32();
    const std::size_t w = 64;
    auto slice = [&](const std::vector<float>& v, std::size_t r) {
        return std::vector<float>(v.begin() + r * w, v.begin() + (r + 1) * w);
    };
    CHECK(slice(emb, 0) == slice(pre, 0));
    CHECK(slice(emb, 47) == slice(pre, 47));
    CHECK(slice(emb, 48) == slice(lvlm, 48));
    CHECK(slice(emb, 49) == slice(rm, 48));
}

TEST_CASE("assembly is deterministic and independent of jobs") {
    const auto t = toy();
    for (const MergeRecipe& r : {MergeRecipe{M::Ties, 0.5, 0.2, {}}, MergeRecipe{M::DareTaskArithmetic, 1.0, 0.6, 3}}) {
        const auto a = serialize_checkpoint(assemble(t, r, 1));
        CHECK(serialize_checkpoint(assemble(t, r, 1)) == a);
        CHECK(serialize_checkpoint(assemble(t, r, 4)) == a);
    }
}

TEST_CASE("tensor count") {
    const auto t = toy();
    const auto out = assemble(t, {M::Linear, 0.5, {}, {}});
    const auto& lc = t.lvlm.components;
    CHECK(out.tensors.size() == lc.names_with(R::VisionEncoder).size() + lc.names_with(R::Adapter).size() +
                                    lc.names_with(R::Transformer).size() + 1 + 1);
    const auto merged = classify_tensors(out, ManifestConfig::defaults().merged);
    CHECK(merged.names_with(R::RMHead).size() == 1);
    CHECK(merged.names_with(R::LMHead).empty());
}

TEST_CASE("no vocab sidecars: rows are aligned by position") {
    auto raw = make_toy_triple();
    raw.pre.vocab.reset();
    raw.lvlm.vocab.reset();
    raw.rm.vocab.reset();
    const auto t = classify_triple(raw.pre, raw.lvlm, raw.rm, ManifestConfig::defaults());
    const auto out = assemble(t, {M::TaskArithmetic, 1.0, {}, {}});
    CHECK_FALSE(out.vocab);
    CHECK(out.at("language_model.model.embed_tokens.weight").shape == Shape{49, 64});
    CHECK(out.metadata.at("vlmerge.vocab") == "positional");
}

TEST_CASE("invalid triples are refused with the full report") {
    auto t = toy();
    t.rm.ckpt.tensors["score.weight"] = Tensor::from_f32(std::vector<float>(128), {2, 64}, DType::BF16);
    try {
        assemble(t, {M::Linear, 0.5, {}, {}});
        FAIL("accepted");
    } catch (const AssemblyError& e) {
        CHECK_FALSE(e.report().ok());
        CHECK(std::string(e.what()).find("leading dimension 1") != std::string::npos);
    }
    CHECK_THROWS_AS(assemble(toy(), {M::Ties, 0.5, {}, {}}), std::invalid_argument);
}

TEST_CASE("validate_triple accepts exactly the triples that assemble") {
    std::mt19937_64 rng(31);
    int valid = 0;
    int invalid = 0;
    for (int i = 0; i < 60; ++i) {
        ToyOptions o;
        o.seed = i;
        o.layers = 1 + static_cast<int>(rng() % 2);
        o.hidden = 4;
        o.mlp = 6;
        o.vocab = 5;
        o.vision_dim = 3;
        auto raw = make_toy_triple(o);
        // perturb one model in a random way, or leave it alone
        const auto pick = rng() % 7;
        auto& victim = rng() % 2 ? raw.rm : raw.pre;
        if (pick == 1) {
            victim.tensors["model.norm.weight"] = Tensor::from_f32(std::vector<float>(5), {5}, DType::BF16);
        } else if (pick == 2) {
            victim.tensors.erase("model.layers.0.mlp.up_proj.weight");
        } else if (pick == 3) {
            victim.tensors["model.layers.0.input_layernorm.weight"] =
                cast_tensor(victim.tensors["model.layers.0.input_layernorm.weight"], DType::F16);
        } else if (pick == 4) {
            victim.vocab.reset();
        } else if (pick == 5) {
            victim.tensors["model.embed_tokens.weight"] = Tensor::from_f32(std::vector<float>(30), {6, 5}, DType::BF16);
        }
        const auto t = classify_triple(raw.pre, raw.lvlm, raw.rm, ManifestConfig::defaults());
        const bool ok = validate_triple(t).ok();
        ok ? ++valid : ++invalid;
        bool assembled = true;
        try {
            assemble(t, {M::Ties, 1.0, 0.4, {}});
        } catch (const AssemblyError&) {
            assembled = false;
        }
        CAPTURE(pick);
        CHECK(ok == assembled);
        CHECK(ok == (pick == 0 || pick == 6));
    }
    CHECK(valid > 0);
    CHECK(invalid > 0);
}
