#pragma once

// Scalar reference implementations used as test oracles. Everything here is a
// plain loop over doubles written directly from the merge definitions; none of
// it calls into the library kernels.

#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

// |got - want| <= tol * max(1, |want|)
bool close(double got, double want, double tol = 1e-6);

// Task vectors are defined as float32 differences.
Vec delta(const std::vector<float>& model, const std::vector<float>& pre);

Vec linear(const std::vector<float>& lvlm, const std::vector<float>& rm, double lambda);
Vec task_arithmetic(const std::vector<float>& pre, const Vec& tau_lvlm, const Vec& tau_rm, double lambda);

// ceil(d * n) with d read as a decimal of at most nine places, at least 1.
std::size_t keep_count(std::size_t n, double d);
// Full sort by (|v| desc, index asc), keep the first keep_count entries.
Vec trim(const Vec& tau, double d);
// +1 when the positive mass is at least the negative mass.
std::vector<int> elect(const std::vector<Vec>& taus);
Vec disjoint(const std::vector<Vec>& taus, const std::vector<int>& signs);
Vec ties(const std::vector<float>& pre, const Vec& tau_lvlm, const Vec& tau_rm, double lambda, double d);

// keep(i) decides survival of element i; survivors are divided by d.
Vec dare(const Vec& tau, double d, const std::function<bool(std::size_t)>& keep);
Vec dare_ta(const std::vector<float>& pre, const Vec& sparse_lvlm, const Vec& sparse_rm, double lambda);
Vec dare_ties(const std::vector<float>& pre, const Vec& sparse_lvlm, const Vec& sparse_rm, double lambda);

// Brute-force nearest representable half / bfloat16 value, ties to even
// significand, overflow to infinity. Inputs must not be NaN.
std::uint16_t nearest_f16(double x);
std::uint16_t nearest_bf16(double x);
double f16_value(std::uint16_t bits);
double bf16_value(std::uint16_t bits);

}  // namespace oracle
