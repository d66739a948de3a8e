#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>

namespace oracle {

bool close(double got, double want, double tol) {
    if (std::isnan(got) || std::isnan(want)) {
        return false;
    }
    return std::fabs(got - want) <= tol * std::max(1.0, std::fabs(want));
}

Vec delta(const std::vector<float>& model, const std::vector<float>& pre) {
    Vec out(model.size());
    for (std::size_t i = 0; i < model.size(); ++i) {
        out[i] = static_cast<float>(model[i] - pre[i]);
    }
    return out;
}

Vec linear(const std::vector<float>& lvlm, const std::vector<float>& rm, double lambda) {
    Vec out(lvlm.size());
    for (std::size_t i = 0; i < lvlm.size(); ++i) {
        out[i] = lambda * lvlm[i] + (1.0 - lambda) * rm[i];
    }
    return out;
}

Vec task_arithmetic(const std::vector<float>& pre, const Vec& tau_lvlm, const Vec& tau_rm, double lambda) {
    Vec out(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
        out[i] = pre[i] + lambda * tau_lvlm[i] + lambda * tau_rm[i];
    }
    return out;
}

std::size_t keep_count(std::size_t n, double d) {
    // read d back as a nine-place decimal string and do the ceiling in integers
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", d);
    std::string s(buf);
    const auto dot = s.find('.');
    const std::uint64_t whole = std::stoull(s.substr(0, dot));
    const std::uint64_t frac = std::stoull(s.substr(dot + 1));
    const std::uint64_t num = whole * 1000000000ULL + frac;
    const std::uint64_t prod = num * n;
    std::size_t k = static_cast<std::size_t>(prod / 1000000000ULL + (prod % 1000000000ULL != 0));
    return std::max<std::size_t>(1, std::min(k, n));
}

Vec trim(const Vec& tau, double d) {
    const std::size_t k = keep_count(tau.size(), d);
    std::vector<std::size_t> idx(tau.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (std::fabs(tau[a]) != std::fabs(tau[b])) return std::fabs(tau[a]) > std::fabs(tau[b]);
        return a < b;
    });
    Vec out(tau.size(), 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        out[idx[j]] = tau[idx[j]];
    }
    return out;
}

std::vector<int> elect(const std::vector<Vec>& taus) {
    const std::size_t n = taus.at(0).size();
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double pos = 0.0, neg = 0.0;
        for (const auto& t : taus) {
            if (t[i] > 0) pos += t[i];
            if (t[i] < 0) neg += -t[i];
        }
        out[i] = pos >= neg ? 1 : -1;
    }
    return out;
}

Vec disjoint(const std::vector<Vec>& taus, const std::vector<int>& signs) {
    Vec out(signs.size(), 0.0);
    for (std::size_t i = 0; i < signs.size(); ++i) {
        double sum = 0.0;
        int cnt = 0;
        for (const auto& t : taus) {
            if (t[i] != 0.0 && (t[i] > 0 ? 1 : -1) == signs[i]) {
                sum += t[i];
                ++cnt;
            }
        }
        out[i] = cnt ? sum / cnt : 0.0;
    }
    return out;
}

namespace {

Vec sign_consensus(const std::vector<float>& pre, const Vec& a, const Vec& b, double lambda) {
    const std::vector<Vec> taus = {a, b};
    const auto merged = disjoint(taus, elect(taus));
    Vec out(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
        out[i] = pre[i] + lambda * merged[i];
    }
    return out;
}

}  // namespace

Vec ties(const std::vector<float>& pre, const Vec& tau_lvlm, const Vec& tau_rm, double lambda, double d) {
    return sign_consensus(pre, trim(tau_lvlm, d), trim(tau_rm, d), lambda);
}

Vec dare(const Vec& tau, double d, const std::function<bool(std::size_t)>& keep) {
    Vec out(tau.size(), 0.0);
    for (std::size_t i = 0; i < tau.size(); ++i) {
        if (d >= 1.0 || keep(i)) {
            out[i] = tau[i] / d;
        }
    }
    return out;
}

Vec dare_ta(const std::vector<float>& pre, const Vec& sparse_lvlm, const Vec& sparse_rm, double lambda) {
    return task_arithmetic(pre, sparse_lvlm, sparse_rm, lambda);
}

Vec dare_ties(const std::vector<float>& pre, const Vec& sparse_lvlm, const Vec& sparse_rm, double lambda) {
    return sign_consensus(pre, sparse_lvlm, sparse_rm, lambda);
}

double f16_value(std::uint16_t bits) {
    const int sign = bits >> 15;
    const int exp = (bits >> 10) & 0x1f;
    const int man = bits & 0x3ff;
    double v;
    if (exp == 0x1f) {
        v = man ? NAN : INFINITY;
    } else if (exp == 0) {
        v = std::ldexp(man, -24);
    } else {
        v = std::ldexp(1024 + man, exp - 25);
    }
    return sign ? -v : v;
}

double bf16_value(std::uint16_t bits) {
    const int sign = bits >> 15;
    const int exp = (bits >> 7) & 0xff;
    const int man = bits & 0x7f;
    double v;
    if (exp == 0xff) {
        v = man ? NAN : INFINITY;
    } else if (exp == 0) {
        v = std::ldexp(man, -133);
    } else {
        v = std::ldexp(128 + man, exp - 134);
    }
    return sign ? -v : v;
}

namespace {

struct Table {
    std::vector<double> values;  // index = bit pattern, positive finite values then +inf
    double inf_stand_in;         // one step past the largest finite value
};

// Picks the nearest entry; on an exact tie the even bit pattern wins. Infinity
// takes part as the value 2^(emax+1), which is how IEEE rounding treats overflow.
std::uint16_t nearest(const Table& t, double x) {
    if (std::isnan(x)) {
        throw std::invalid_argument("nearest: NaN");
    }
    const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
    const double ax = std::fabs(x);
    auto value_at = [&](std::size_t i) { return i + 1 == t.values.size() ? t.inf_stand_in : t.values[i]; };
    if (ax >= t.inf_stand_in) {
        return static_cast<std::uint16_t>(sign | (t.values.size() - 1));
    }
    std::size_t lo = 0, hi = t.values.size() - 1;  // value_at(lo) <= ax < value_at(hi)
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        (value_at(mid) <= ax ? lo : hi) = mid;
    }
    const double dlo = ax - value_at(lo);
    const double dhi = value_at(hi) - ax;
    std::size_t pick;
    if (dlo < dhi) pick = lo;
    else if (dhi < dlo) pick = hi;
    else pick = (lo % 2 == 0) ? lo : hi;
    return static_cast<std::uint16_t>(sign | pick);
}

const Table& f16_table() {
    static const Table t = [] {
        Table t;
        for (std::uint32_t b = 0; b <= 0x7c00; ++b) t.values.push_back(f16_value(static_cast<std::uint16_t>(b)));
        t.inf_stand_in = 65536.0;
        return t;
    }();
    return t;
}

const Table& bf16_table() {
    static const Table t = [] {
        Table t;
        for (std::uint32_t b = 0; b <= 0x7f80; ++b) t.values.push_back(bf16_value(static_cast<std::uint16_t>(b)));
        t.inf_stand_in = std::ldexp(1.0, 128);
        return t;
    }();
    return t;
}

}  // namespace

std::uint16_t nearest_f16(double x) { return nearest(f16_table(), x); }
std::uint16_t nearest_bf16(double x) { return nearest(bf16_table(), x); }

}  // namespace oracle
