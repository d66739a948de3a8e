#include "vlmerge/toy.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

namespace vlmerge {

namespace {

// Portable across standard libraries, unlike std::normal_distribution.
class ToyRng {
public:
    explicit ToyRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double normal() {
        if (spare_) {
            const double v = *spare_;
            spare_.reset();
            return v;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }

private:
    std::uint64_t state_;
    std::optional<double> spare_;
};

std::vector<float> gaussian(ToyRng& rng, std::size_t n, double mean, double stddev) {
    std::vector<float> v(n);
    for (auto& x : v) {
        x = static_cast<float>(mean + stddev * rng.normal());
    }
    return v;
}

struct LayerTensor {
    std::string name;
    Shape shape;
    bool is_norm;
};

std::vector<LayerTensor> layer_tensors(const ToyOptions& o, int layer) {
    const auto h = static_cast<std::int64_t>(o.hidden);
    const auto m = static_cast<std::int64_t>(o.mlp);
    const std::string p = fmt::format("model.layers.{}.", layer);
    return {
        {p + "self_attn.q_proj.weight", {h, h}, false},
        {p + "self_attn.k_proj.weight", {h, h}, false},
        {p + "self_attn.v_proj.weight", {h, h}, false},
        {p + "self_attn.o_proj.weight", {h, h}, false},
        {p + "mlp.gate_proj.weight", {m, h}, false},
        {p + "mlp.up_proj.weight", {m, h}, false},
        {p + "mlp.down_proj.weight", {h, m}, false},
        {p + "input_layernorm.weight", {h}, true},
        {p + "post_attention_layernorm.weight", {h}, true},
    };
}

Tensor store(const std::vector<float>& values, Shape shape, DType dtype) {
    return Tensor::from_f32(values, std::move(shape), dtype);
}

std::vector<float> plus(const std::vector<float>& a, const std::vector<float>& b) {
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return out;
}

std::vector<float> with_extra_rows(std::vector<float> emb, const std::vector<float>& extra) {
    emb.insert(emb.end(), extra.begin(), extra.end());
    return emb;
}

}  // namespace

ToyTriple make_toy_triple(const ToyOptions& o) {
    if (o.layers < 1 || o.hidden < 1 || o.mlp < 1 || o.vocab < 2 || o.vision_dim < 1) {
        throw std::invalid_argument("make_toy_triple: sizes must be positive");
    }
    ToyRng rng(o.seed);
    ToyTriple t;
    const auto h = static_cast<std::int64_t>(o.hidden);
    const auto v = static_cast<std::int64_t>(o.vocab);
    const auto vd = static_cast<std::int64_t>(o.vision_dim);
    constexpr double kWeightStd = 0.05;
    constexpr double kDeltaStd = 0.01;

    std::vector<LayerTensor> trans;
    for (int l = 0; l < o.layers; ++l) {
        for (auto& lt : layer_tensors(o, l)) {
            trans.push_back(std::move(lt));
        }
    }
    trans.push_back({"model.norm.weight", {h}, true});

    for (const auto& lt : trans) {
        const auto n = element_count(lt.shape);
        const auto base = gaussian(rng, n, lt.is_norm ? 1.0 : 0.0, lt.is_norm ? 0.02 : kWeightStd);
        const auto lvlm = plus(base, gaussian(rng, n, 0.0, kDeltaStd));
        const auto rm = plus(base, gaussian(rng, n, 0.0, kDeltaStd));
        t.pre.tensors.emplace(lt.name, store(base, lt.shape, o.dtype));
        t.lvlm.tensors.emplace("language_model." + lt.name, store(lvlm, lt.shape, o.dtype));
        t.rm.tensors.emplace(lt.name, store(rm, lt.shape, o.dtype));
    }

    // embeddings: shared base rows, each fine-tuned model adds one token
    const auto base_emb = gaussian(rng, static_cast<std::size_t>(v * h), 0.0, kWeightStd);
    const auto lvlm_emb = with_extra_rows(plus(base_emb, gaussian(rng, base_emb.size(), 0.0, kDeltaStd)),
                                          gaussian(rng, static_cast<std::size_t>(h), 0.0, kWeightStd));
    const auto rm_emb = with_extra_rows(plus(base_emb, gaussian(rng, base_emb.size(), 0.0, kDeltaStd)),
                                        gaussian(rng, static_cast<std::size_t>(h), 0.0, kWeightStd));
    t.pre.tensors.emplace("model.embed_tokens.weight", store(base_emb, {v, h}, o.dtype));
    t.lvlm.tensors.emplace("language_model.model.embed_tokens.weight", store(lvlm_emb, {v + 1, h}, o.dtype));
    t.rm.tensors.emplace("model.embed_tokens.weight", store(rm_emb, {v + 1, h}, o.dtype));

    t.pre.tensors.emplace("lm_head.weight", store(gaussian(rng, static_cast<std::size_t>(v * h), 0.0, kWeightStd),
                                                  {v, h}, o.dtype));
    t.lvlm.tensors.emplace("language_model.lm_head.weight",
                           store(gaussian(rng, static_cast<std::size_t>((v + 1) * h), 0.0, kWeightStd), {v + 1, h},
                                 o.dtype));
    t.rm.tensors.emplace("score.weight", store(gaussian(rng, static_cast<std::size_t>(h), 0.0, kWeightStd), {1, h},
                                               o.dtype));

    // vision side of the LVLM
    t.lvlm.tensors.emplace("vision_model.patch_embedding.weight",
                           store(gaussian(rng, static_cast<std::size_t>(vd * 48), 0.0, kWeightStd), {vd, 48}, o.dtype));
    t.lvlm.tensors.emplace("vision_model.layernorm.weight",
                           store(gaussian(rng, static_cast<std::size_t>(vd), 1.0, 0.02), {vd}, o.dtype));
    t.lvlm.tensors.emplace("multi_modal_projector.weight",
                           store(gaussian(rng, static_cast<std::size_t>(h * vd), 0.0, kWeightStd), {h, vd}, o.dtype));
    t.lvlm.tensors.emplace("language_model.model.layers.1.cross_attn.q_proj.weight",
                           store(gaussian(rng, static_cast<std::size_t>(h * h), 0.0, kWeightStd), {h, h}, o.dtype));
    t.lvlm.tensors.emplace("language_model.model.layers.1.cross_attn_attn_gate",
                           store(std::vector<float>{0.0f}, {1}, o.dtype));

    std::vector<std::string> tokens = {"<|begin_of_text|>", "<|end_of_text|>", "<|eot_id|>"};
    for (int i = static_cast<int>(tokens.size()); i < o.vocab; ++i) {
        tokens.push_back(fmt::format("tok{:03}", i));
    }
    tokens.resize(static_cast<std::size_t>(o.vocab));
    auto lvlm_tokens = tokens;
    lvlm_tokens.emplace_back("<|image|>");
    auto rm_tokens = tokens;
    rm_tokens.emplace_back("<|pad|>");
    t.pre.vocab = Vocab(tokens);
    t.lvlm.vocab = Vocab(lvlm_tokens);
    t.rm.vocab = Vocab(rm_tokens);

    t.pre.source_label = "toy-pre";
    t.lvlm.source_label = "toy-lvlm";
    t.rm.source_label = "toy-rm";
    return t;
}

namespace {

constexpr std::array<const char*, 24> kWords = {
    "the",   "image", "shows", "a",     "red",    "blue",   "car",    "dog",    "sign",   "two",    "three", "people",
    "chart", "value", "left",  "right", "behind", "table",  "answer", "is",     "street", "window", "green", "small",
};

std::string sentence(ToyRng& rng, std::size_t min_words, std::size_t max_words) {
    const auto n = min_words + rng.below(max_words - min_words + 1);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += kWords[rng.below(kWords.size())];
    }
    return out;
}

}  // namespace

std::vector<PairwiseRecord> make_toy_pairwise(std::size_t count, const std::vector<std::string>& domains,
                                              std::uint64_t seed) {
    if (domains.empty()) {
        throw std::invalid_argument("make_toy_pairwise: no domains");
    }
    ToyRng rng(seed);
    std::vector<PairwiseRecord> out;
    for (std::size_t i = 0; i < count; ++i) {
        PairwiseRecord r;
        r.id = fmt::format("pair-{:05}", i);
        r.domain = domains[i % domains.size()];
        r.instruction = "Describe " + sentence(rng, 3, 8) + "?";
        if (i % 4 != 3) {
            r.image_path = fmt::format("images/{:05}.png", i);
        }
        r.chosen_text = sentence(rng, 4, 16);
        r.rejected_text = sentence(rng, 4, 16);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<BoNRecord> make_toy_bon(std::size_t count, std::size_t n, std::uint64_t seed) {
    if (n == 0) {
        throw std::invalid_argument("make_toy_bon: n must be positive");
    }
    ToyRng rng(seed);
    std::vector<BoNRecord> out;
    for (std::size_t i = 0; i < count; ++i) {
        BoNRecord r;
        r.id = fmt::format("bon-{:05}", i);
        r.instruction = "What " + sentence(rng, 3, 8) + "?";
        r.image_path = fmt::format("images/bon-{:05}.png", i);
        const auto gold = rng.below(n);
        for (std::size_t k = 0; k < n; ++k) {
            r.candidates.push_back({sentence(rng, 2, 12), k == gold || rng.uniform() < 0.2});
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string pairwise_to_jsonl(const std::vector<PairwiseRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["domain"] = r.domain;
        j["instruction"] = r.instruction;
        if (r.image_path) j["image_path"] = *r.image_path;
        j["chosen_text"] = r.chosen_text;
        j["rejected_text"] = r.rejected_text;
        out += j.dump() + "\n";
    }
    return out;
}

std::string bon_to_jsonl(const std::vector<BoNRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["instruction"] = r.instruction;
        if (r.image_path) j["image_path"] = *r.image_path;
        auto cands = nlohmann::ordered_json::array();
        for (const auto& c : r.candidates) {
            nlohmann::ordered_json cj;
            cj["text"] = c.text;
            cj["correct"] = c.correct;
            cands.push_back(cj);
        }
        j["candidates"] = cands;
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace vlmerge
