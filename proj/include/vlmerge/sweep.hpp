#pragma once

#include "vlmerge/eval.hpp"
#include "vlmerge/manifest.hpp"
#include "vlmerge/merge_core.hpp"
#include "vlmerge/scorer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vlmerge {

struct SweepConfig {
    MergeMethod method = MergeMethod::Linear;
    std::vector<double> lambda_grid;
    std::optional<std::vector<double>> density_grid;
    std::string validation_set;  // pairwise eval file
    std::size_t primary_size = 400;
    std::size_t tiebreak_size = 100;
    std::uint64_t sampling_seed = 0;
    std::uint64_t dare_seed = 0;
    // Treat accuracies equal after rounding to 0.1 percentage points as tied.
    bool tie_rounding = false;

    // lambda 0.0..1.0 step 0.1 for linear / task arithmetic; lambda {0.5, 0.7, 1.0}
    // x density {0.2, 0.4, 0.6, 0.8} for the sparsifying methods.
    static SweepConfig defaults(MergeMethod method);
    // JSON object; "method" is required, every other field falls back to defaults(method).
    static SweepConfig parse(std::string_view json_text);
    std::string to_json() const;
};

SweepConfig load_sweep_config(const std::filesystem::path& path);

// lambda ascending outer, density descending inner. Throws std::invalid_argument
// on an empty grid, out-of-range values, or a density grid the method ignores.
std::vector<MergeRecipe> generate_grid(const SweepConfig& config);

// Grid order used for the last tie-break level.
bool grid_order_less(const MergeRecipe& a, const MergeRecipe& b);

struct SweepEntry {
    MergeRecipe recipe;
    double primary_accuracy = 0.0;
    std::optional<double> tiebreak_accuracy;
    bool failed = false;
    std::string error;
    std::string variant_path;
    std::string cache_key;
};

struct SweepResult {
    std::vector<SweepEntry> entries;
    std::optional<std::size_t> winner;  // index into entries

    const SweepEntry& winning_entry() const { return entries.at(winner.value()); }
};

// Accuracy of a recipe on the tie-break slice. NaN ranks below every number.
using TiebreakProvider = std::function<double(const MergeRecipe&)>;

// Highest primary accuracy wins. If two or more entries share the maximum the
// provider is asked for each of them (and only them); the highest tie-break
// accuracy wins, then grid order. Failed entries are skipped. Throws
// std::invalid_argument when no entry is usable.
SweepResult select_best(std::vector<SweepEntry> entries, const TiebreakProvider& tiebreak, bool tie_rounding = false);

struct ValidationSplit {
    std::vector<PairwiseRecord> primary;
    std::vector<PairwiseRecord> tiebreak;
};

// Seeded shuffle of the dataset; the first primary_size records form the primary
// slice, the next tiebreak_size the tie-break slice.
ValidationSplit split_validation(std::span<const PairwiseRecord> dataset, std::size_t primary_size,
                                 std::size_t tiebreak_size, std::uint64_t seed);

struct SweepRun {
    const ModelTriple* triple = nullptr;
    // Identifies the inputs for variant caching, e.g. their content hashes.
    std::string inputs_key;
    std::map<std::string, std::string> provenance;
    std::filesystem::path variant_dir;
    std::filesystem::path manifest_path;
    unsigned jobs = 1;
    std::function<void(const std::string&)> log;
};

// Assembles (or reuses) one variant per grid point, scores the primary slice,
// selects the winner and writes the run manifest: one JSON line per recipe in
// grid order, then a "winner" line.
SweepResult run_sweep(const SweepConfig& config, std::span<const PairwiseRecord> dataset, const SweepRun& run,
                      Scorer& scorer);

// Variant cache key for a recipe under the given inputs.
std::string variant_cache_key(const std::string& inputs_key, const MergeRecipe& recipe);

}  // namespace vlmerge
