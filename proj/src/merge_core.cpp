#include "vlmerge/merge_core.hpp"

#include "vlmerge/parallel.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace vlmerge {

std::string_view method_name(MergeMethod method) {
    switch (method) {
    case MergeMethod::Linear: return "linear";
    case MergeMethod::TaskArithmetic: return "task-arithmetic";
    case MergeMethod::Ties: return "ties";
    case MergeMethod::DareTaskArithmetic: return "dare-ta";
    case MergeMethod::DareTies: return "dare-ties";
    }
    return "?";
}

MergeMethod parse_method(std::string_view name) {
    for (auto m : {MergeMethod::Linear, MergeMethod::TaskArithmetic, MergeMethod::Ties,
                   MergeMethod::DareTaskArithmetic, MergeMethod::DareTies}) {
        if (method_name(m) == name) {
            return m;
        }
    }
    throw std::invalid_argument(
        fmt::format("unknown merge method '{}' (expected linear, task-arithmetic, ties, dare-ta, dare-ties)", name));
}

bool method_uses_density(MergeMethod m) {
    return m == MergeMethod::Ties || m == MergeMethod::DareTaskArithmetic || m == MergeMethod::DareTies;
}

bool method_uses_seed(MergeMethod m) { return method_is_dare(m); }

bool method_is_dare(MergeMethod m) {
    return m == MergeMethod::DareTaskArithmetic || m == MergeMethod::DareTies;
}

void MergeRecipe::validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) {
        throw std::invalid_argument(fmt::format("lambda must be finite and >= 0, got {}", lambda));
    }
    if (method == MergeMethod::Linear && lambda > 1.0) {
        throw std::invalid_argument(fmt::format("linear merging needs lambda in [0, 1], got {}", lambda));
    }
    if (method_uses_density(method)) {
        if (!density) {
            throw std::invalid_argument(fmt::format("method {} requires a density", method_name(method)));
        }
        if (!(*density > 0.0 && *density <= 1.0)) {
            throw std::invalid_argument(fmt::format("density must be in (0, 1], got {}", *density));
        }
    } else if (density) {
        throw std::invalid_argument(fmt::format("method {} takes no density", method_name(method)));
    }
    if (method_uses_seed(method)) {
        if (!seed) {
            throw std::invalid_argument(fmt::format("method {} requires a seed", method_name(method)));
        }
    } else if (seed) {
        throw std::invalid_argument(fmt::format("method {} takes no seed", method_name(method)));
    }
}

std::string format_number(double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

std::string MergeRecipe::describe() const {
    std::string out = fmt::format("{} lambda={}", method_name(method), format_number(lambda));
    if (density) {
        out += fmt::format(" density={}", format_number(*density));
    }
    if (seed) {
        out += fmt::format(" seed={}", *seed);
    }
    return out;
}

FloatTensorMap widen(const std::map<std::string, const Tensor*>& tensors) {
    FloatTensorMap out;
    for (const auto& [name, t] : tensors) {
        out.emplace(name, FloatTensor{t->shape, t->to_f32()});
    }
    return out;
}

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void require_same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw std::invalid_argument(fmt::format("{}: length mismatch ({} vs {})", what, a, b));
    }
}

}  // namespace

DareStream::DareStream(std::uint64_t seed, TaskOrigin origin, std::string_view tensor_name) {
    std::uint64_t k = mix64(seed + kGolden);
    k = mix64(k ^ (origin == TaskOrigin::LVLM ? 0x4c564c4dULL : 0x524dULL));
    key_ = mix64(k ^ fnv1a(tensor_name));
}

double DareStream::uniform(std::uint64_t index) const {
    const std::uint64_t x = mix64(key_ + (index + 1) * kGolden);
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

std::size_t trim_keep_count(std::size_t n, double density) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw std::invalid_argument(fmt::format("density must be in (0, 1], got {}", density));
    }
    if (n == 0) {
        return 0;
    }
    // Density is taken at 1e-9 resolution so decimal grid values (0.2, 0.6, ...)
    // give the exact ceil(d * n) instead of an off-by-one from binary rounding.
    constexpr std::uint64_t kScale = 1'000'000'000ULL;
    const auto num = static_cast<unsigned __int128>(std::llround(density * static_cast<double>(kScale)));
    const auto k = static_cast<std::size_t>((num * n + kScale - 1) / kScale);
    return std::clamp<std::size_t>(k, 1, n);
}

namespace kernels {

std::vector<float> subtract(std::span<const float> model, std::span<const float> pre) {
    require_same_length(model.size(), pre.size(), "subtract");
    std::vector<float> out(model.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = model[i] - pre[i];
    }
    return out;
}

std::vector<float> linear(std::span<const float> lvlm, std::span<const float> rm, double lambda) {
    require_same_length(lvlm.size(), rm.size(), "linear");
    const float w = static_cast<float>(lambda);
    const float w_rm = 1.0f - w;
    std::vector<float> out(lvlm.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = w * lvlm[i] + w_rm * rm[i];
    }
    return out;
}

std::vector<float> task_arithmetic(std::span<const float> pre, std::span<const float> tau_lvlm,
                                   std::span<const float> tau_rm, double lambda) {
    require_same_length(pre.size(), tau_lvlm.size(), "task_arithmetic");
    require_same_length(pre.size(), tau_rm.size(), "task_arithmetic");
    const float w = static_cast<float>(lambda);
    std::vector<float> out(pre.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = pre[i] + w * (tau_lvlm[i] + tau_rm[i]);
    }
    return out;
}

std::vector<float> trim_by_magnitude(std::span<const float> tau, double density) {
    const std::size_t n = tau.size();
    const std::size_t k = trim_keep_count(n, density);
    if (k == n) {
        return {tau.begin(), tau.end()};
    }
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    // larger magnitude first; equal magnitudes keep the lower flat index
    auto before = [&](std::uint32_t a, std::uint32_t b) {
        const float ma = std::fabs(tau[a]);
        const float mb = std::fabs(tau[b]);
        return ma != mb ? ma > mb : a < b;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    std::vector<float> out(n, 0.0f);
    for (std::size_t i = 0; i < k; ++i) {
        out[order[i]] = tau[order[i]];
    }
    return out;
}

std::vector<std::int8_t> elect_sign(std::span<const std::span<const float>> taus) {
    if (taus.empty()) {
        throw std::invalid_argument("elect_sign: no task vectors");
    }
    const std::size_t n = taus.front().size();
    for (const auto& t : taus) {
        require_same_length(t.size(), n, "elect_sign");
    }
    std::vector<std::int8_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        float pos = 0.0f;
        float neg = 0.0f;
        for (const auto& t : taus) {
            if (t[i] > 0.0f) pos += t[i];
            else if (t[i] < 0.0f) neg -= t[i];
        }
        out[i] = pos >= neg ? 1 : -1;
    }
    return out;
}

std::vector<float> disjoint_mean(std::span<const std::span<const float>> taus, std::span<const std::int8_t> signs) {
    const std::size_t n = signs.size();
    for (const auto& t : taus) {
        require_same_length(t.size(), n, "disjoint_mean");
    }
    std::vector<float> out(n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        float sum = 0.0f;
        int count = 0;
        for (const auto& t : taus) {
            const float v = t[i];
            if ((signs[i] > 0 && v > 0.0f) || (signs[i] < 0 && v < 0.0f)) {
                sum += v;
                ++count;
            }
        }
        if (count > 0) {
            out[i] = sum / static_cast<float>(count);
        }
    }
    return out;
}

std::vector<float> dare_sparsify(std::span<const float> tau, double density, const DareStream& stream,
                                 unsigned jobs) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw std::invalid_argument(fmt::format("density must be in (0, 1], got {}", density));
    }
    if (density == 1.0) {
        return {tau.begin(), tau.end()};
    }
    const float d = static_cast<float>(density);
    std::vector<float> out(tau.size(), 0.0f);
    constexpr std::size_t kBlock = 1 << 14;
    const std::size_t blocks = (tau.size() + kBlock - 1) / kBlock;
    parallel_for(blocks, jobs, [&](std::size_t b) {
        const std::size_t end = std::min(tau.size(), (b + 1) * kBlock);
        for (std::size_t i = b * kBlock; i < end; ++i) {
            if (stream.keep(i, density)) {
                out[i] = tau[i] / d;
            }
        }
    });
    return out;
}

std::vector<float> add_scaled(std::span<const float> pre, std::span<const float> delta, double lambda) {
    require_same_length(pre.size(), delta.size(), "add_scaled");
    const float w = static_cast<float>(lambda);
    std::vector<float> out(pre.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = pre[i] + w * delta[i];
    }
    return out;
}

}  // namespace kernels

namespace {

void require_same_names(const FloatTensorMap& a, const FloatTensorMap& b, const char* what) {
    if (a.size() != b.size()) {
        throw std::invalid_argument(fmt::format("{}: tensor count mismatch ({} vs {})", what, a.size(), b.size()));
    }
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first) {
            throw std::invalid_argument(fmt::format("{}: name mismatch ({} vs {})", what, ia->first, ib->first));
        }
        if (ia->second.shape != ib->second.shape || ia->second.values.size() != ib->second.values.size()) {
            throw std::invalid_argument(fmt::format("{}: shape mismatch for {} ({} vs {})", what, ia->first,
                                                    shape_to_string(ia->second.shape),
                                                    shape_to_string(ib->second.shape)));
        }
    }
}

std::vector<std::string> keys_of(const FloatTensorMap& m) {
    std::vector<std::string> out;
    out.reserve(m.size());
    for (const auto& [k, v] : m) {
        out.push_back(k);
    }
    return out;
}

// Builds an output map with the same keys/shapes as `like`, filling values per tensor in parallel.
template <typename Fn>
FloatTensorMap map_tensors(const FloatTensorMap& like, unsigned jobs, Fn&& fn) {
    const auto names = keys_of(like);
    std::vector<std::vector<float>> results(names.size());
    parallel_for(names.size(), jobs, [&](std::size_t i) { results[i] = fn(names[i]); });
    FloatTensorMap out;
    for (std::size_t i = 0; i < names.size(); ++i) {
        out.emplace(names[i], FloatTensor{like.at(names[i]).shape, std::move(results[i])});
    }
    return out;
}

}  // namespace

TaskVector compute_task_vector(const FloatTensorMap& model_trans, const FloatTensorMap& pre_trans, TaskOrigin origin,
                               unsigned jobs) {
    require_same_names(model_trans, pre_trans, "compute_task_vector");
    TaskVector tv;
    tv.origin = origin;
    tv.deltas = map_tensors(pre_trans, jobs, [&](const std::string& name) {
        return kernels::subtract(model_trans.at(name).values, pre_trans.at(name).values);
    });
    return tv;
}

FloatTensorMap merge_linear(const FloatTensorMap& lvlm_trans, const FloatTensorMap& rm_trans, double lambda,
                            unsigned jobs) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument(fmt::format("linear merging needs lambda in [0, 1], got {}", lambda));
    }
    require_same_names(lvlm_trans, rm_trans, "merge_linear");
    return map_tensors(lvlm_trans, jobs, [&](const std::string& name) {
        return kernels::linear(lvlm_trans.at(name).values, rm_trans.at(name).values, lambda);
    });
}

FloatTensorMap merge_task_arithmetic(const FloatTensorMap& pre_trans, const TaskVector& tau_lvlm,
                                     const TaskVector& tau_rm, double lambda, unsigned jobs) {
    require_same_names(pre_trans, tau_lvlm.deltas, "merge_task_arithmetic");
    require_same_names(pre_trans, tau_rm.deltas, "merge_task_arithmetic");
    return map_tensors(pre_trans, jobs, [&](const std::string& name) {
        return kernels::task_arithmetic(pre_trans.at(name).values, tau_lvlm.deltas.at(name).values,
                                        tau_rm.deltas.at(name).values, lambda);
    });
}

TaskVector trim_by_magnitude(const TaskVector& tau, double density, unsigned jobs) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw std::invalid_argument(fmt::format("density must be in (0, 1], got {}", density));
    }
    TaskVector out;
    out.origin = tau.origin;
    out.deltas = map_tensors(tau.deltas, jobs, [&](const std::string& name) {
        return kernels::trim_by_magnitude(tau.deltas.at(name).values, density);
    });
    return out;
}

SignMap elect_sign(const std::vector<const TaskVector*>& taus) {
    if (taus.empty()) {
        throw std::invalid_argument("elect_sign: no task vectors");
    }
    for (const auto* t : taus) {
        require_same_names(taus.front()->deltas, t->deltas, "elect_sign");
    }
    SignMap out;
    for (const auto& [name, ref] : taus.front()->deltas) {
        std::vector<std::span<const float>> views;
        for (const auto* t : taus) {
            views.emplace_back(t->deltas.at(name).values);
        }
        out.emplace(name, kernels::elect_sign(views));
    }
    return out;
}

FloatTensorMap disjoint_merge(const std::vector<const TaskVector*>& taus, const SignMap& signs) {
    if (taus.empty()) {
        throw std::invalid_argument("disjoint_merge: no task vectors");
    }
    FloatTensorMap out;
    for (const auto& [name, ref] : taus.front()->deltas) {
        auto it = signs.find(name);
        if (it == signs.end()) {
            throw std::invalid_argument(fmt::format("disjoint_merge: no signs for {}", name));
        }
        std::vector<std::span<const float>> views;
        for (const auto* t : taus) {
            views.emplace_back(t->deltas.at(name).values);
        }
        out.emplace(name, FloatTensor{ref.shape, kernels::disjoint_mean(views, it->second)});
    }
    return out;
}

namespace {

// elect + disjoint mean + rescale onto pre, one tensor at a time
FloatTensorMap sign_consensus_merge(const FloatTensorMap& pre_trans, const TaskVector& a, const TaskVector& b,
                                    double lambda, unsigned jobs) {
    require_same_names(pre_trans, a.deltas, "sign_consensus_merge");
    require_same_names(pre_trans, b.deltas, "sign_consensus_merge");
    return map_tensors(pre_trans, jobs, [&](const std::string& name) {
        const std::array<std::span<const float>, 2> views = {a.deltas.at(name).values, b.deltas.at(name).values};
        const auto signs = kernels::elect_sign(views);
        const auto merged = kernels::disjoint_mean(views, signs);
        return kernels::add_scaled(pre_trans.at(name).values, merged, lambda);
    });
}

}  // namespace

FloatTensorMap merge_ties(const FloatTensorMap& pre_trans, const TaskVector& tau_lvlm, const TaskVector& tau_rm,
                          double lambda, double density, unsigned jobs) {
    const auto trimmed_lvlm = trim_by_magnitude(tau_lvlm, density, jobs);
    const auto trimmed_rm = trim_by_magnitude(tau_rm, density, jobs);
    return sign_consensus_merge(pre_trans, trimmed_lvlm, trimmed_rm, lambda, jobs);
}

TaskVector dare_sparsify(const TaskVector& tau, double density, std::uint64_t seed, unsigned jobs) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw std::invalid_argument(fmt::format("density must be in (0, 1], got {}", density));
    }
    TaskVector out;
    out.origin = tau.origin;
    // Large tensors parallelize inside the kernel, so tensors go one at a time here.
    for (const auto& [name, t] : tau.deltas) {
        const DareStream stream(seed, tau.origin, name);
        out.deltas.emplace(name, FloatTensor{t.shape, kernels::dare_sparsify(t.values, density, stream, jobs)});
    }
    return out;
}

FloatTensorMap merge_dare(const FloatTensorMap& pre_trans, const TaskVector& tau_lvlm, const TaskVector& tau_rm,
                          double lambda, double density, std::uint64_t seed, DareMode mode, unsigned jobs) {
    const auto sparse_lvlm = dare_sparsify(tau_lvlm, density, seed, jobs);
    const auto sparse_rm = dare_sparsify(tau_rm, density, seed, jobs);
    if (mode == DareMode::TaskArithmetic) {
        return merge_task_arithmetic(pre_trans, sparse_lvlm, sparse_rm, lambda, jobs);
    }
    return sign_consensus_merge(pre_trans, sparse_lvlm, sparse_rm, lambda, jobs);
}

FloatTensorMap merge_transformer(const MergeRecipe& recipe, const FloatTensorMap& pre_trans,
                                 const FloatTensorMap& lvlm_trans, const FloatTensorMap& rm_trans, unsigned jobs) {
    recipe.validate();
    if (recipe.method == MergeMethod::Linear) {
        return merge_linear(lvlm_trans, rm_trans, recipe.lambda, jobs);
    }
    const auto tau_lvlm = compute_task_vector(lvlm_trans, pre_trans, TaskOrigin::LVLM, jobs);
    const auto tau_rm = compute_task_vector(rm_trans, pre_trans, TaskOrigin::RM, jobs);
    switch (recipe.method) {
    case MergeMethod::TaskArithmetic:
        return merge_task_arithmetic(pre_trans, tau_lvlm, tau_rm, recipe.lambda, jobs);
    case MergeMethod::Ties:
        return merge_ties(pre_trans, tau_lvlm, tau_rm, recipe.lambda, *recipe.density, jobs);
    case MergeMethod::DareTaskArithmetic:
        return merge_dare(pre_trans, tau_lvlm, tau_rm, recipe.lambda, *recipe.density, *recipe.seed,
                          DareMode::TaskArithmetic, jobs);
    case MergeMethod::DareTies:
        return merge_dare(pre_trans, tau_lvlm, tau_rm, recipe.lambda, *recipe.density, *recipe.seed, DareMode::Ties,
                          jobs);
    case MergeMethod::Linear:
        break;
    }
    throw std::logic_error("unreachable merge method");
}

}  // namespace vlmerge
