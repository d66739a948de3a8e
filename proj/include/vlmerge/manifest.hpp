#pragma once

#include "vlmerge/tensor_store.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vlmerge {

enum class ComponentRole : std::uint8_t { VisionEncoder, Adapter, Embedding, Transformer, LMHead, RMHead };

inline constexpr std::array<ComponentRole, 6> kAllRoles = {
    ComponentRole::VisionEncoder, ComponentRole::Adapter, ComponentRole::Embedding,
    ComponentRole::Transformer,   ComponentRole::LMHead,  ComponentRole::RMHead,
};

std::string_view role_name(ComponentRole role);
ComponentRole parse_role(std::string_view name);

struct RoleRule {
    std::string pattern;
    ComponentRole role;
};

// Classification rules for one model. Tensor names are matched in full against
// the glob patterns; the first match wins. `strip_prefix` maps a tensor name to
// the canonical key used to pair tensors across models (e.g. the LVLM nests its
// language model under "language_model.").
struct ModelRules {
    std::string strip_prefix;
    std::vector<RoleRule> rules;
};

struct ManifestConfig {
    ModelRules pre;
    ModelRules lvlm;
    ModelRules rm;
    ModelRules merged;

    // Llama-3.2-Vision (LVLM) / Llama-3.1 (base) / sequence-classification RM naming.
    static ManifestConfig defaults();
    static ManifestConfig parse(std::string_view json_text);
    std::string to_json() const;
};

// Reads a manifest config file. Sections that are absent keep their defaults.
ManifestConfig load_manifest_config(const std::filesystem::path& path);

class ClassificationError : public std::runtime_error {
public:
    explicit ClassificationError(std::vector<std::string> unmatched);
    const std::vector<std::string>& unmatched() const { return unmatched_; }

private:
    std::vector<std::string> unmatched_;
};

struct ComponentMap {
    std::map<std::string, ComponentRole> assignments;
    ModelRules rules;

    std::map<ComponentRole, std::size_t> counts() const;
    std::vector<std::string> names_with(ComponentRole role) const;
    std::string canonical(const std::string& name) const;
    // canonical key -> tensor name, for tensors of one role
    std::map<std::string, std::string> canonical_index(ComponentRole role) const;
};

// Throws ClassificationError listing every unmatched tensor name.
ComponentMap classify_tensors(const Checkpoint& ckpt, const ModelRules& rules);

struct ClassifiedModel {
    Checkpoint ckpt;
    ComponentMap components;
};

struct ModelTriple {
    ClassifiedModel pre;
    ClassifiedModel lvlm;
    ClassifiedModel rm;
};

struct ValidationReport {
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }
    std::string to_string() const;
};

// Never throws on a bad triple; every violation becomes a report entry.
ValidationReport validate_triple(const ModelTriple& triple);

ModelTriple classify_triple(Checkpoint pre, Checkpoint lvlm, Checkpoint rm, const ManifestConfig& config);

}  // namespace vlmerge
