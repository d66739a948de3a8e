#include "vlmerge/manifest.hpp"

#include "vlmerge/glob.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

namespace vlmerge {

using nlohmann::json;

std::string_view role_name(ComponentRole role) {
    switch (role) {
    case ComponentRole::VisionEncoder: return "vision_encoder";
    case ComponentRole::Adapter: return "adapter";
    case ComponentRole::Embedding: return "embedding";
    case ComponentRole::Transformer: return "transformer";
    case ComponentRole::LMHead: return "lm_head";
    case ComponentRole::RMHead: return "rm_head";
    }
    return "?";
}

ComponentRole parse_role(std::string_view name) {
    for (auto role : kAllRoles) {
        if (role_name(role) == name) {
            return role;
        }
    }
    throw std::invalid_argument(fmt::format("unknown component role '{}'", name));
}

ManifestConfig ManifestConfig::defaults() {
    using R = ComponentRole;
    ManifestConfig cfg;
    cfg.pre.rules = {
        {"model.embed_tokens.*", R::Embedding},
        {"lm_head.*", R::LMHead},
        {"model.layers.*", R::Transformer},
        {"model.norm.*", R::Transformer},
        {"model.rotary_emb.*", R::Transformer},
    };
    cfg.lvlm.strip_prefix = "language_model.";
    cfg.lvlm.rules = {
        {"vision_model.*", R::VisionEncoder},
        {"multi_modal_projector.*", R::Adapter},
        {"language_model.model.layers.*.cross_attn*", R::Adapter},
        {"language_model.model.embed_tokens.*", R::Embedding},
        {"language_model.lm_head.*", R::LMHead},
        {"language_model.model.layers.*", R::Transformer},
        {"language_model.model.norm.*", R::Transformer},
        {"language_model.model.rotary_emb.*", R::Transformer},
    };
    cfg.rm.rules = {
        {"model.embed_tokens.*", R::Embedding},
        {"score.*", R::RMHead},
        {"model.layers.*", R::Transformer},
        {"model.norm.*", R::Transformer},
        {"model.rotary_emb.*", R::Transformer},
    };
    cfg.merged = cfg.lvlm;
    cfg.merged.rules.insert(cfg.merged.rules.begin(), RoleRule{"score.*", R::RMHead});
    return cfg;
}

namespace {

ModelRules parse_model_rules(const json& j, const std::string& section) {
    if (!j.is_object()) {
        throw std::invalid_argument(fmt::format("manifest section '{}' must be an object", section));
    }
    ModelRules out;
    out.strip_prefix = j.value("strip_prefix", std::string{});
    if (!j.contains("rules") || !j["rules"].is_array()) {
        throw std::invalid_argument(fmt::format("manifest section '{}' needs a 'rules' array", section));
    }
    for (const auto& r : j["rules"]) {
        if (!r.is_object() || !r.contains("pattern") || !r.contains("role")) {
            throw std::invalid_argument(
                fmt::format("manifest section '{}': each rule needs 'pattern' and 'role'", section));
        }
        out.rules.push_back({r["pattern"].get<std::string>(), parse_role(r["role"].get<std::string>())});
    }
    if (out.rules.empty()) {
        throw std::invalid_argument(fmt::format("manifest section '{}' has no rules", section));
    }
    return out;
}

json model_rules_json(const ModelRules& m) {
    json rules = json::array();
    for (const auto& r : m.rules) {
        rules.push_back({{"pattern", r.pattern}, {"role", role_name(r.role)}});
    }
    return {{"strip_prefix", m.strip_prefix}, {"rules", rules}};
}

}  // namespace

ManifestConfig ManifestConfig::parse(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(fmt::format("manifest config is not valid JSON: {}", e.what()));
    }
    if (!j.is_object()) {
        throw std::invalid_argument("manifest config must be a JSON object");
    }
    ManifestConfig cfg = defaults();
    for (const auto& [key, value] : j.items()) {
        if (key == "pre") cfg.pre = parse_model_rules(value, key);
        else if (key == "lvlm") cfg.lvlm = parse_model_rules(value, key);
        else if (key == "rm") cfg.rm = parse_model_rules(value, key);
        else if (key == "merged") cfg.merged = parse_model_rules(value, key);
        else throw std::invalid_argument(fmt::format("unknown manifest section '{}'", key));
    }
    return cfg;
}

std::string ManifestConfig::to_json() const {
    json j = {{"pre", model_rules_json(pre)},
              {"lvlm", model_rules_json(lvlm)},
              {"rm", model_rules_json(rm)},
              {"merged", model_rules_json(merged)}};
    return j.dump(2);
}

ManifestConfig load_manifest_config(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return ManifestConfig::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

ClassificationError::ClassificationError(std::vector<std::string> unmatched)
    : std::runtime_error(fmt::format("no rule matches tensor(s): {}", fmt::join(unmatched, ", "))),
      unmatched_(std::move(unmatched)) {}

std::map<ComponentRole, std::size_t> ComponentMap::counts() const {
    std::map<ComponentRole, std::size_t> out;
    for (const auto& [name, role] : assignments) {
        ++out[role];
    }
    return out;
}

std::vector<std::string> ComponentMap::names_with(ComponentRole role) const {
    std::vector<std::string> out;
    for (const auto& [name, r] : assignments) {
        if (r == role) {
            out.push_back(name);
        }
    }
    return out;
}

std::string ComponentMap::canonical(const std::string& name) const {
    const auto& prefix = rules.strip_prefix;
    if (!prefix.empty() && name.starts_with(prefix)) {
        return name.substr(prefix.size());
    }
    return name;
}

std::map<std::string, std::string> ComponentMap::canonical_index(ComponentRole role) const {
    std::map<std::string, std::string> out;
    for (const auto& [name, r] : assignments) {
        if (r == role) {
            out.emplace(canonical(name), name);
        }
    }
    return out;
}

ComponentMap classify_tensors(const Checkpoint& ckpt, const ModelRules& rules) {
    if (rules.rules.empty()) {
        throw std::invalid_argument("classify_tensors: rule list is empty");
    }
    ComponentMap out;
    out.rules = rules;
    std::vector<std::string> unmatched;
    for (const auto& [name, tensor] : ckpt.tensors) {
        auto it = std::find_if(rules.rules.begin(), rules.rules.end(),
                               [&](const RoleRule& r) { return glob_match(r.pattern, name); });
        if (it == rules.rules.end()) {
            unmatched.push_back(name);
        } else {
            out.assignments.emplace(name, it->role);
        }
    }
    if (!unmatched.empty()) {
        throw ClassificationError(std::move(unmatched));
    }
    return out;
}

ModelTriple classify_triple(Checkpoint pre, Checkpoint lvlm, Checkpoint rm, const ManifestConfig& config) {
    ModelTriple triple;
    triple.pre.components = classify_tensors(pre, config.pre);
    triple.lvlm.components = classify_tensors(lvlm, config.lvlm);
    triple.rm.components = classify_tensors(rm, config.rm);
    triple.pre.ckpt = std::move(pre);
    triple.lvlm.ckpt = std::move(lvlm);
    triple.rm.ckpt = std::move(rm);
    return triple;
}

std::string ValidationReport::to_string() const {
    if (violations.empty()) {
        return "triple is mergeable";
    }
    std::string out = fmt::format("{} violation(s):", violations.size());
    for (const auto& v : violations) {
        out += "\n  - ";
        out += v;
    }
    return out;
}

namespace {

struct RoleSpec {
    std::set<ComponentRole> required;
    std::set<ComponentRole> allowed;
};

void check_roles(const char* model, const ComponentMap& map, const RoleSpec& spec,
                 std::vector<std::string>& out) {
    const auto counts = map.counts();
    for (auto role : spec.required) {
        if (!counts.contains(role)) {
            out.push_back(fmt::format("{}: missing role {}", model, role_name(role)));
        }
    }
    for (const auto& [role, n] : counts) {
        if (!spec.allowed.contains(role)) {
            out.push_back(fmt::format("{}: unexpected role {} ({} tensor(s))", model, role_name(role), n));
        }
    }
}

struct Side {
    const char* label;
    const ClassifiedModel* model;
    std::map<std::string, std::string> index;
};

// Name sets must agree across all sides; matched names must agree on shape and dtype.
void check_shared_role(ComponentRole role, std::vector<Side> sides, std::vector<std::string>& out) {
    std::set<std::string> all;
    for (const auto& s : sides) {
        for (const auto& [key, name] : s.index) {
            all.insert(key);
        }
    }
    const auto rname = role_name(role);
    for (const auto& key : all) {
        std::vector<std::string> missing;
        for (const auto& s : sides) {
            if (!s.index.contains(key)) {
                missing.emplace_back(s.label);
            }
        }
        if (!missing.empty()) {
            out.push_back(fmt::format("{} name-set mismatch: {} (missing from {})", rname, key,
                                      fmt::join(missing, ", ")));
            continue;
        }
        const Side& ref = sides.front();
        const Tensor& rt = ref.model->ckpt.at(ref.index.at(key));
        for (std::size_t i = 1; i < sides.size(); ++i) {
            const Tensor& t = sides[i].model->ckpt.at(sides[i].index.at(key));
            if (t.shape != rt.shape) {
                out.push_back(fmt::format("{} shape mismatch: {} {} {} vs {} {}", rname, key, sides[i].label,
                                          shape_to_string(t.shape), ref.label, shape_to_string(rt.shape)));
            }
            if (t.dtype != rt.dtype) {
                out.push_back(fmt::format("{} dtype mismatch: {} {} {} vs {} {}", rname, key, sides[i].label,
                                          dtype_name(t.dtype), ref.label, dtype_name(rt.dtype)));
            }
        }
    }
}

}  // namespace

ValidationReport validate_triple(const ModelTriple& triple) {
    using R = ComponentRole;
    ValidationReport report;
    auto& out = report.violations;

    check_roles("pre", triple.pre.components,
                {{R::Embedding, R::Transformer}, {R::Embedding, R::Transformer, R::LMHead}}, out);
    check_roles("lvlm", triple.lvlm.components,
                {{R::VisionEncoder, R::Adapter, R::Embedding, R::Transformer},
                 {R::VisionEncoder, R::Adapter, R::Embedding, R::Transformer, R::LMHead}},
                out);
    check_roles("rm", triple.rm.components,
                {{R::Embedding, R::Transformer, R::RMHead}, {R::Embedding, R::Transformer, R::RMHead}}, out);

    auto sides_for = [&](R role) {
        return std::vector<Side>{
            {"pre", &triple.pre, triple.pre.components.canonical_index(role)},
            {"lvlm", &triple.lvlm, triple.lvlm.components.canonical_index(role)},
            {"rm", &triple.rm, triple.rm.components.canonical_index(role)},
        };
    };
    check_shared_role(R::Transformer, sides_for(R::Transformer), out);

    // Embeddings pair by canonical name but may differ in row count; widths must agree.
    const auto emb_sides = sides_for(R::Embedding);
    std::set<std::string> emb_keys;
    for (const auto& s : emb_sides) {
        for (const auto& [key, name] : s.index) {
            emb_keys.insert(key);
        }
    }
    for (const auto& key : emb_keys) {
        std::vector<std::string> missing;
        std::vector<std::pair<const char*, const Tensor*>> present;
        for (const auto& s : emb_sides) {
            if (auto it = s.index.find(key); it != s.index.end()) {
                present.emplace_back(s.label, &s.model->ckpt.at(it->second));
            } else {
                missing.emplace_back(s.label);
            }
        }
        if (!missing.empty()) {
            out.push_back(fmt::format("embedding name-set mismatch: {} (missing from {})", key,
                                      fmt::join(missing, ", ")));
            continue;
        }
        bool rank_ok = true;
        for (const auto& [label, t] : present) {
            if (t->shape.size() != 2) {
                out.push_back(fmt::format("embedding {} in {} must be 2-d, got {}", key, label,
                                          shape_to_string(t->shape)));
                rank_ok = false;
            }
        }
        if (!rank_ok) {
            continue;
        }
        for (std::size_t i = 1; i < present.size(); ++i) {
            if (present[i].second->shape[1] != present[0].second->shape[1]) {
                out.push_back(fmt::format("embedding width mismatch: {} {} {} vs {} {}", key, present[i].first,
                                          present[i].second->shape[1], present[0].first,
                                          present[0].second->shape[1]));
            }
        }
    }

    const int with_vocab = static_cast<int>(triple.pre.ckpt.vocab.has_value()) +
                           static_cast<int>(triple.lvlm.ckpt.vocab.has_value()) +
                           static_cast<int>(triple.rm.ckpt.vocab.has_value());
    if (with_vocab != 0 && with_vocab != 3) {
        out.push_back("vocab sidecars must be given for all three models or for none");
    }
    for (const auto* side : {&triple.pre, &triple.lvlm, &triple.rm}) {
        const char* label = side == &triple.pre ? "pre" : side == &triple.lvlm ? "lvlm" : "rm";
        if (!side->ckpt.vocab) {
            continue;
        }
        for (const auto& name : side->components.names_with(R::Embedding)) {
            const auto& t = side->ckpt.at(name);
            if (!t.shape.empty() && side->ckpt.vocab->size() > static_cast<std::size_t>(t.shape[0])) {
                out.push_back(fmt::format("{}: vocab has {} tokens but embedding {} has {} rows", label,
                                          side->ckpt.vocab->size(), name, t.shape[0]));
            }
        }
    }

    for (const auto& name : triple.rm.components.names_with(R::RMHead)) {
        const auto& t = triple.rm.ckpt.at(name);
        if (t.shape.empty() || t.shape[0] != 1) {
            out.push_back(fmt::format("rm head {} must map to one scalar (leading dimension 1), got {}", name,
                                      shape_to_string(t.shape)));
        }
        if (triple.lvlm.ckpt.tensors.contains(name) &&
            triple.lvlm.components.assignments.at(name) != R::LMHead) {
            out.push_back(fmt::format("rm head {} collides with an lvlm tensor of the same name", name));
        }
    }
    return report;
}

}  // namespace vlmerge
