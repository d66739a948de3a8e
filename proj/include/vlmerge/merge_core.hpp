#pragma once

#include "vlmerge/tensor_store.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vlmerge {

enum class MergeMethod : std::uint8_t { Linear, TaskArithmetic, Ties, DareTaskArithmetic, DareTies };

// CLI spellings: linear, task-arithmetic, ties, dare-ta, dare-ties.
std::string_view method_name(MergeMethod method);
MergeMethod parse_method(std::string_view name);
bool method_uses_density(MergeMethod method);
bool method_uses_seed(MergeMethod method);
bool method_is_dare(MergeMethod method);

// One point of a merge sweep. Density and seed must be present exactly when the
// method consumes them.
struct MergeRecipe {
    MergeMethod method = MergeMethod::Linear;
    double lambda = 1.0;
    std::optional<double> density;
    std::optional<std::uint64_t> seed;

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
    // e.g. "dare-ties lambda=0.7 density=0.4 seed=7"
    std::string describe() const;

    bool operator==(const MergeRecipe&) const = default;
};

// Shortest decimal form that reads back to the same double.
std::string format_number(double value);

enum class TaskOrigin : std::uint8_t { LVLM, RM };

struct FloatTensor {
    Shape shape;
    std::vector<float> values;

    bool operator==(const FloatTensor&) const = default;
};

using FloatTensorMap = std::map<std::string, FloatTensor>;

// Widens every tensor to F32.
FloatTensorMap widen(const std::map<std::string, const Tensor*>& tensors);

struct TaskVector {
    TaskOrigin origin = TaskOrigin::LVLM;
    FloatTensorMap deltas;
};

using SignMap = std::map<std::string, std::vector<std::int8_t>>;

// Counter-based keep/drop stream for DARE. The decision for element i depends
// only on (seed, origin, tensor name, i), so any partition of the element range
// across threads yields the same mask.
class DareStream {
public:
    DareStream(std::uint64_t seed, TaskOrigin origin, std::string_view tensor_name);

    // Uniform draw in [0, 1) for element `index`.
    double uniform(std::uint64_t index) const;
    bool keep(std::uint64_t index, double density) const { return uniform(index) < density; }

private:
    std::uint64_t key_;
};

// Number of entries trimming keeps: ceil(density * n), at least 1 for n > 0.
std::size_t trim_keep_count(std::size_t n, double density);

// Per-tensor kernels. Spans of one call must have equal length.
namespace kernels {

std::vector<float> subtract(std::span<const float> model, std::span<const float> pre);
std::vector<float> linear(std::span<const float> lvlm, std::span<const float> rm, double lambda);
std::vector<float> task_arithmetic(std::span<const float> pre, std::span<const float> tau_lvlm,
                                   std::span<const float> tau_rm, double lambda);
std::vector<float> trim_by_magnitude(std::span<const float> tau, double density);
std::vector<std::int8_t> elect_sign(std::span<const std::span<const float>> taus);
std::vector<float> disjoint_mean(std::span<const std::span<const float>> taus, std::span<const std::int8_t> signs);
std::vector<float> dare_sparsify(std::span<const float> tau, double density, const DareStream& stream,
                                 unsigned jobs = 1);
std::vector<float> add_scaled(std::span<const float> pre, std::span<const float> delta, double lambda);

}  // namespace kernels

TaskVector compute_task_vector(const FloatTensorMap& model_trans, const FloatTensorMap& pre_trans, TaskOrigin origin,
                               unsigned jobs = 1);

FloatTensorMap merge_linear(const FloatTensorMap& lvlm_trans, const FloatTensorMap& rm_trans, double lambda,
                            unsigned jobs = 1);

FloatTensorMap merge_task_arithmetic(const FloatTensorMap& pre_trans, const TaskVector& tau_lvlm,
                                     const TaskVector& tau_rm, double lambda, unsigned jobs = 1);

TaskVector trim_by_magnitude(const TaskVector& tau, double density, unsigned jobs = 1);

SignMap elect_sign(const std::vector<const TaskVector*>& taus);

FloatTensorMap disjoint_merge(const std::vector<const TaskVector*>& taus, const SignMap& signs);

FloatTensorMap merge_ties(const FloatTensorMap& pre_trans, const TaskVector& tau_lvlm, const TaskVector& tau_rm,
                          double lambda, double density, unsigned jobs = 1);

TaskVector dare_sparsify(const TaskVector& tau, double density, std::uint64_t seed, unsigned jobs = 1);

enum class DareMode : std::uint8_t { TaskArithmetic, Ties };

FloatTensorMap merge_dare(const FloatTensorMap& pre_trans, const TaskVector& tau_lvlm, const TaskVector& tau_rm,
                          double lambda, double density, std::uint64_t seed, DareMode mode, unsigned jobs = 1);

// Dispatches on recipe.method. Inputs are keyed by the same (canonical) names.
FloatTensorMap merge_transformer(const MergeRecipe& recipe, const FloatTensorMap& pre_trans,
                                 const FloatTensorMap& lvlm_trans, const FloatTensorMap& rm_trans, unsigned jobs = 1);

}  // namespace vlmerge
