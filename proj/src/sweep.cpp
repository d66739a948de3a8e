#include "vlmerge/sweep.hpp"

#include "vlmerge/assembler.hpp"
#include "vlmerge/content_hash.hpp"
#include "vlmerge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

namespace vlmerge {

using nlohmann::json;
using nlohmann::ordered_json;

SweepConfig SweepConfig::defaults(MergeMethod method) {
    SweepConfig c;
    c.method = method;
    if (method_uses_density(method)) {
        c.lambda_grid = {0.5, 0.7, 1.0};
        c.density_grid = std::vector<double>{0.2, 0.4, 0.6, 0.8};
    } else {
        for (int i = 0; i <= 10; ++i) {
            c.lambda_grid.push_back(i / 10.0);
        }
    }
    return c;
}

namespace {

std::vector<double> number_list(const json& j, const char* key) {
    if (!j.is_array()) {
        throw std::invalid_argument(fmt::format("sweep config: '{}' must be an array of numbers", key));
    }
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) {
            throw std::invalid_argument(fmt::format("sweep config: '{}' must be an array of numbers", key));
        }
        out.push_back(v.get<double>());
    }
    return out;
}

template <typename T>
T unsigned_field(const json& j, const char* key) {
    if (!j.is_number_unsigned()) {
        throw std::invalid_argument(fmt::format("sweep config: '{}' must be a non-negative integer", key));
    }
    return j.get<T>();
}

}  // namespace

SweepConfig SweepConfig::parse(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(fmt::format("sweep config: malformed JSON ({})", e.what()));
    }
    if (!j.is_object()) {
        throw std::invalid_argument("sweep config: expected a JSON object");
    }
    if (!j.contains("method") || !j["method"].is_string()) {
        throw std::invalid_argument("sweep config: missing 'method'");
    }
    SweepConfig c = defaults(parse_method(j["method"].get<std::string>()));
    for (const auto& [key, value] : j.items()) {
        if (key == "method") {
            continue;
        } else if (key == "lambda_grid") {
            c.lambda_grid = number_list(value, "lambda_grid");
        } else if (key == "density_grid") {
            if (value.is_null()) {
                c.density_grid.reset();
            } else {
                c.density_grid = number_list(value, "density_grid");
            }
        } else if (key == "validation_set") {
            if (!value.is_string()) {
                throw std::invalid_argument("sweep config: 'validation_set' must be a string");
            }
            c.validation_set = value.get<std::string>();
        } else if (key == "primary_size") {
            c.primary_size = unsigned_field<std::size_t>(value, "primary_size");
        } else if (key == "tiebreak_size") {
            c.tiebreak_size = unsigned_field<std::size_t>(value, "tiebreak_size");
        } else if (key == "sampling_seed") {
            c.sampling_seed = unsigned_field<std::uint64_t>(value, "sampling_seed");
        } else if (key == "dare_seed") {
            c.dare_seed = unsigned_field<std::uint64_t>(value, "dare_seed");
        } else if (key == "tie_rounding") {
            if (!value.is_boolean()) {
                throw std::invalid_argument("sweep config: 'tie_rounding' must be a boolean");
            }
            c.tie_rounding = value.get<bool>();
        } else {
            throw std::invalid_argument(fmt::format("sweep config: unknown field '{}'", key));
        }
    }
    return c;
}

std::string SweepConfig::to_json() const {
    ordered_json j;
    j["method"] = std::string(method_name(method));
    j["lambda_grid"] = lambda_grid;
    j["density_grid"] = density_grid ? ordered_json(*density_grid) : ordered_json(nullptr);
    j["validation_set"] = validation_set;
    j["primary_size"] = primary_size;
    j["tiebreak_size"] = tiebreak_size;
    j["sampling_seed"] = sampling_seed;
    j["dare_seed"] = dare_seed;
    j["tie_rounding"] = tie_rounding;
    return j.dump(2);
}

SweepConfig load_sweep_config(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return SweepConfig::parse({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
}

std::vector<MergeRecipe> generate_grid(const SweepConfig& config) {
    const bool sparse = method_uses_density(config.method);
    if (config.density_grid && !sparse) {
        throw std::invalid_argument(
            fmt::format("density_grid given for method {}, which has no density", method_name(config.method)));
    }
    if (sparse && !config.density_grid) {
        throw std::invalid_argument(fmt::format("method {} needs a density_grid", method_name(config.method)));
    }
    if (config.lambda_grid.empty() || (sparse && config.density_grid->empty())) {
        throw std::invalid_argument("empty sweep grid");
    }
    auto lambdas = config.lambda_grid;
    for (double l : lambdas) {
        if (!(l >= 0.0 && l <= 1.5)) {
            throw std::invalid_argument(fmt::format("lambda {} outside [0, 1.5]", l));
        }
    }
    std::sort(lambdas.begin(), lambdas.end());
    lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());

    std::vector<std::optional<double>> densities{std::nullopt};
    if (sparse) {
        auto d = *config.density_grid;
        for (double v : d) {
            if (!(v > 0.0 && v <= 1.0)) {
                throw std::invalid_argument(fmt::format("density {} outside (0, 1]", v));
            }
        }
        std::sort(d.begin(), d.end(), std::greater<>());
        d.erase(std::unique(d.begin(), d.end()), d.end());
        densities.assign(d.begin(), d.end());
    }

    std::vector<MergeRecipe> out;
    for (double l : lambdas) {
        for (const auto& d : densities) {
            MergeRecipe r{config.method, l, d, std::nullopt};
            if (method_uses_seed(config.method)) {
                r.seed = config.dare_seed;
            }
            r.validate();
            out.push_back(r);
        }
    }
    return out;
}

bool grid_order_less(const MergeRecipe& a, const MergeRecipe& b) {
    if (a.lambda != b.lambda) {
        return a.lambda < b.lambda;
    }
    return a.density.value_or(0.0) > b.density.value_or(0.0);
}

namespace {

// Value used for tie comparisons; NaN sorts below everything.
double tie_key(double acc, bool rounding) {
    if (std::isnan(acc)) {
        return -std::numeric_limits<double>::infinity();
    }
    return rounding ? static_cast<double>(std::llround(acc * 1000.0)) : acc;
}

}  // namespace

SweepResult select_best(std::vector<SweepEntry> entries, const TiebreakProvider& tiebreak, bool tie_rounding) {
    if (entries.empty()) {
        throw std::invalid_argument("select_best: no entries");
    }
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].failed) {
            usable.push_back(i);
        }
    }
    if (usable.empty()) {
        throw std::invalid_argument("select_best: every entry failed");
    }
    double best = -std::numeric_limits<double>::infinity();
    for (auto i : usable) {
        best = std::max(best, tie_key(entries[i].primary_accuracy, tie_rounding));
    }
    std::vector<std::size_t> tied;
    for (auto i : usable) {
        if (tie_key(entries[i].primary_accuracy, tie_rounding) == best) {
            tied.push_back(i);
        }
    }
    std::sort(tied.begin(), tied.end(),
              [&](std::size_t a, std::size_t b) { return grid_order_less(entries[a].recipe, entries[b].recipe); });

    SweepResult result;
    if (tied.size() == 1) {
        result.winner = tied.front();
    } else {
        std::size_t pick = tied.front();
        double pick_key = -std::numeric_limits<double>::infinity();
        bool first = true;
        for (auto i : tied) {
            const double acc = tiebreak(entries[i].recipe);
            if (!std::isnan(acc)) {
                entries[i].tiebreak_accuracy = acc;
            }
            const double key = tie_key(acc, tie_rounding);
            if (first || key > pick_key) {
                pick = i;
                pick_key = key;
                first = false;
            }
        }
        result.winner = pick;
    }
    result.entries = std::move(entries);
    return result;
}

namespace {

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, n) without modulo bias
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const auto r = next();
            if (r >= threshold) {
                return r % n;
            }
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace

ValidationSplit split_validation(std::span<const PairwiseRecord> dataset, std::size_t primary_size,
                                 std::size_t tiebreak_size, std::uint64_t seed) {
    if (primary_size == 0) {
        throw std::invalid_argument("primary_size must be positive");
    }
    if (dataset.size() < primary_size + tiebreak_size) {
        throw std::invalid_argument(fmt::format("validation set has {} records, need {} primary + {} tie-break",
                                                dataset.size(), primary_size, tiebreak_size));
    }
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    ValidationSplit split;
    for (std::size_t i = 0; i < primary_size; ++i) {
        split.primary.push_back(dataset[order[i]]);
    }
    for (std::size_t i = primary_size; i < primary_size + tiebreak_size; ++i) {
        split.tiebreak.push_back(dataset[order[i]]);
    }
    return split;
}

std::string variant_cache_key(const std::string& inputs_key, const MergeRecipe& recipe) {
    return sha256_hex(inputs_key + "\n" + recipe.describe());
}

namespace {

constexpr const char* kCacheKeyMeta = "vlmerge.cache_key";

// Reads only the header of a checkpoint and returns its cache key, if any.
std::optional<std::string> cached_key(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    unsigned char len_bytes[8];
    if (!in.read(reinterpret_cast<char*>(len_bytes), 8)) {
        return std::nullopt;
    }
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) {
        n = (n << 8) | len_bytes[i];
    }
    if (n > (1u << 26)) {
        return std::nullopt;
    }
    std::string header(n, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(n))) {
        return std::nullopt;
    }
    try {
        const auto j = json::parse(header);
        return j.at("__metadata__").at(kCacheKeyMeta).get<std::string>();
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

std::string relative_to(const std::filesystem::path& target, const std::filesystem::path& base_dir) {
    const auto t = std::filesystem::absolute(target).lexically_normal();
    const auto b = std::filesystem::absolute(base_dir.empty() ? "." : base_dir).lexically_normal();
    auto rel = t.lexically_relative(b);
    return (rel.empty() ? t : rel).generic_string();
}

ordered_json optional_number(const std::optional<double>& v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json recipe_fields(const MergeRecipe& r) {
    ordered_json j;
    j["method"] = std::string(method_name(r.method));
    j["lambda"] = r.lambda;
    j["density"] = optional_number(r.density);
    j["seed"] = r.seed ? ordered_json(*r.seed) : ordered_json(nullptr);
    return j;
}

void write_run_manifest(const SweepResult& result, const std::filesystem::path& path) {
    std::string text;
    for (std::size_t i = 0; i < result.entries.size(); ++i) {
        const auto& e = result.entries[i];
        ordered_json j;
        j["kind"] = "recipe";
        j["index"] = i;
        j.update(recipe_fields(e.recipe));
        j["primary_accuracy"] = e.failed ? ordered_json(nullptr) : ordered_json(e.primary_accuracy);
        j["tiebreak_accuracy"] = optional_number(e.tiebreak_accuracy);
        j["variant_path"] = e.variant_path;
        j["cache_key"] = e.cache_key;
        j["status"] = e.failed ? "failed" : "ok";
        if (e.failed) {
            j["error"] = e.error;
        }
        text += j.dump() + "\n";
    }
    ordered_json w;
    w["kind"] = "winner";
    if (result.winner) {
        const auto& e = result.winning_entry();
        w["index"] = *result.winner;
        w.update(recipe_fields(e.recipe));
        w["primary_accuracy"] = e.primary_accuracy;
        w["tiebreak_accuracy"] = optional_number(e.tiebreak_accuracy);
        w["variant_path"] = e.variant_path;
    } else {
        w["index"] = nullptr;
        w["status"] = "all recipes failed";
    }
    text += w.dump() + "\n";
    write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
}

double slice_accuracy(Scorer& scorer, const ModelRef& model, std::span<const PairwiseRecord> slice) {
    const auto requests = pairwise_requests(slice);
    const auto rewards = run_scorer(scorer, model, requests);
    const auto pairs = pairs_from_rewards(slice, rewards);
    return score_pairwise_bench(pairs).overall_accuracy;
}

}  // namespace

SweepResult run_sweep(const SweepConfig& config, std::span<const PairwiseRecord> dataset, const SweepRun& run,
                      Scorer& scorer) {
    if (run.triple == nullptr) {
        throw std::invalid_argument("run_sweep: no model triple");
    }
    const auto grid = generate_grid(config);
    const auto split = split_validation(dataset, config.primary_size, config.tiebreak_size, config.sampling_seed);
    const auto manifest_dir = run.manifest_path.parent_path();
    std::filesystem::create_directories(run.variant_dir);
    auto log = [&](const std::string& msg) {
        if (run.log) run.log(msg);
    };

    std::vector<SweepEntry> entries(grid.size());
    std::vector<std::filesystem::path> variant_files(grid.size());
    std::mutex log_mutex;
    parallel_for(grid.size(), run.jobs, [&](std::size_t i) {
        SweepEntry& e = entries[i];
        e.recipe = grid[i];
        e.cache_key = variant_cache_key(run.inputs_key, e.recipe);
        const auto file = run.variant_dir / fmt::format("variant-{}.safetensors", e.cache_key.substr(0, 16));
        variant_files[i] = file;
        e.variant_path = relative_to(file, manifest_dir);
        bool reused = false;
        try {
            if (cached_key(file) == e.cache_key) {
                reused = true;
            } else {
                AssemblyPlan plan{e.recipe, run.triple, run.provenance, 1};
                plan.provenance[kCacheKeyMeta] = e.cache_key;
                auto merged = assemble_vlrm(plan);
                if (merged.vocab) {
                    auto vocab_file = file;
                    vocab_file.replace_extension(".vocab");
                    write_vocab(*merged.vocab, vocab_file);
                }
                auto tmp = file;
                tmp += ".tmp";
                write_checkpoint(merged, tmp);
                std::filesystem::rename(tmp, file);
            }
            e.primary_accuracy = slice_accuracy(scorer, {file.string(), e.cache_key}, split.primary);
        } catch (const std::exception& ex) {
            e.failed = true;
            e.error = ex.what();
        }
        std::lock_guard lock(log_mutex);
        if (e.failed) {
            log(fmt::format("[{}/{}] {}: FAILED: {}", i + 1, grid.size(), e.recipe.describe(), e.error));
        } else {
            log(fmt::format("[{}/{}] {}: accuracy {:.1f}%{}", i + 1, grid.size(), e.recipe.describe(),
                            100.0 * e.primary_accuracy, reused ? " (cached variant)" : ""));
        }
    });

    SweepResult result;
    const bool any_ok = std::any_of(entries.begin(), entries.end(), [](const SweepEntry& e) { return !e.failed; });
    if (any_ok) {
        std::vector<std::string> cache_keys;
        for (const auto& e : entries) cache_keys.push_back(e.cache_key);
        auto tiebreak = [&](const MergeRecipe& recipe) {
            const auto it = std::find(grid.begin(), grid.end(), recipe);
            const auto i = static_cast<std::size_t>(it - grid.begin());
            if (split.tiebreak.empty()) {
                return std::numeric_limits<double>::quiet_NaN();
            }
            try {
                const double acc =
                    slice_accuracy(scorer, {variant_files[i].string(), cache_keys[i]}, split.tiebreak);
                log(fmt::format("tie-break {}: accuracy {:.1f}%", recipe.describe(), 100.0 * acc));
                return acc;
            } catch (const std::exception& ex) {
                log(fmt::format("tie-break {}: FAILED: {}", recipe.describe(), ex.what()));
                return std::numeric_limits<double>::quiet_NaN();
            }
        };
        result = select_best(std::move(entries), tiebreak, config.tie_rounding);
    } else {
        result.entries = std::move(entries);
    }
    if (!run.manifest_path.empty()) {
        write_run_manifest(result, run.manifest_path);
    }
    return result;
}

}  // namespace vlmerge
