#include "vlmerge/assembler.hpp"

#include "vlmerge/embed_merge.hpp"

#include <fmt/format.h>

namespace vlmerge {

AssemblyError::AssemblyError(ValidationReport report)
    : std::runtime_error(report.to_string()), report_(std::move(report)) {}

std::map<std::string, std::string> recipe_metadata(const MergeRecipe& recipe) {
    std::map<std::string, std::string> out;
    out[meta::kMethod] = std::string(method_name(recipe.method));
    out[meta::kLambda] = format_number(recipe.lambda);
    if (recipe.density) {
        out[meta::kDensity] = format_number(*recipe.density);
    }
    if (recipe.seed) {
        out[meta::kSeed] = std::to_string(*recipe.seed);
    }
    return out;
}

namespace {

// canonical name -> widened tensor, for one role of one model
FloatTensorMap widen_role(const ClassifiedModel& model, ComponentRole role) {
    std::map<std::string, const Tensor*> picked;
    for (const auto& [key, name] : model.components.canonical_index(role)) {
        picked.emplace(key, &model.ckpt.at(name));
    }
    return widen(picked);
}

Vocab vocab_or_positional(const Checkpoint& ckpt, const Tensor& emb) {
    if (ckpt.vocab) {
        return *ckpt.vocab;
    }
    return Vocab::positional(static_cast<std::size_t>(emb.shape.at(0)));
}

void copy_role(const ClassifiedModel& src, ComponentRole role, Checkpoint& dst) {
    for (const auto& name : src.components.names_with(role)) {
        dst.tensors.emplace(name, src.ckpt.at(name));
    }
}

}  // namespace

Checkpoint assemble_vlrm(const AssemblyPlan& plan) {
    using R = ComponentRole;
    if (plan.triple == nullptr) {
        throw std::invalid_argument("assemble_vlrm: plan has no model triple");
    }
    const ModelTriple& triple = *plan.triple;
    if (auto report = validate_triple(triple); !report.ok()) {
        throw AssemblyError(std::move(report));
    }
    plan.recipe.validate();

    Checkpoint out;
    copy_role(triple.lvlm, R::VisionEncoder, out);
    copy_role(triple.lvlm, R::Adapter, out);

    {
        const auto pre = widen_role(triple.pre, R::Transformer);
        const auto lvlm = widen_role(triple.lvlm, R::Transformer);
        const auto rm = widen_role(triple.rm, R::Transformer);
        const auto merged = merge_transformer(plan.recipe, pre, lvlm, rm, plan.jobs);
        for (const auto& [key, name] : triple.lvlm.components.canonical_index(R::Transformer)) {
            const auto& src = triple.lvlm.ckpt.at(name);
            const auto& m = merged.at(key);
            out.tensors.emplace(name, Tensor::from_f32(m.values, src.shape, src.dtype));
        }
    }

    const bool have_vocab = triple.lvlm.ckpt.vocab.has_value();
    const auto pre_emb = triple.pre.components.canonical_index(R::Embedding);
    const auto rm_emb = triple.rm.components.canonical_index(R::Embedding);
    std::optional<Vocab> merged_vocab;
    for (const auto& [key, name] : triple.lvlm.components.canonical_index(R::Embedding)) {
        const Tensor& lvlm_t = triple.lvlm.ckpt.at(name);
        const Tensor& pre_t = triple.pre.ckpt.at(pre_emb.at(key));
        const Tensor& rm_t = triple.rm.ckpt.at(rm_emb.at(key));
        const auto aligned = align_vocab(vocab_or_positional(triple.pre.ckpt, pre_t),
                                         vocab_or_positional(triple.lvlm.ckpt, lvlm_t),
                                         vocab_or_positional(triple.rm.ckpt, rm_t));
        const auto merged = merge_embedding_rows(aligned, FloatTensor{pre_t.shape, pre_t.to_f32()},
                                                 FloatTensor{lvlm_t.shape, lvlm_t.to_f32()},
                                                 FloatTensor{rm_t.shape, rm_t.to_f32()}, plan.recipe.method);
        out.tensors.emplace(name, Tensor::from_f32(merged.values, merged.shape, lvlm_t.dtype));
        if (have_vocab && !merged_vocab) {
            merged_vocab = aligned.output_vocab();
        }
    }
    out.vocab = std::move(merged_vocab);

    for (const auto& name : triple.rm.components.names_with(R::RMHead)) {
        if (!out.tensors.emplace(name, triple.rm.ckpt.at(name)).second) {
            throw std::invalid_argument(fmt::format("rm head {} collides with another output tensor", name));
        }
    }

    out.metadata = plan.provenance;
    for (auto& [k, v] : recipe_metadata(plan.recipe)) {
        out.metadata[k] = v;
    }
    out.metadata[meta::kVersion] = VLMERGE_VERSION;
    out.metadata[meta::kVocab] = have_vocab ? "sidecar" : "positional";

    const std::size_t expected = triple.lvlm.components.names_with(R::VisionEncoder).size() +
                                 triple.lvlm.components.names_with(R::Adapter).size() +
                                 triple.lvlm.components.names_with(R::Transformer).size() +
                                 triple.lvlm.components.names_with(R::Embedding).size() +
                                 triple.rm.components.names_with(R::RMHead).size();
    if (out.tensors.size() != expected) {
        throw std::logic_error(
            fmt::format("assembled {} tensors, expected {}", out.tensors.size(), expected));
    }
    return out;
}

}  // namespace vlmerge
