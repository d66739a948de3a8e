#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlmerge {

struct PreferencePair {
    std::string id;
    std::string domain;
    double chosen_reward = 0.0;
    double rejected_reward = 0.0;
};

struct BoNInstance {
    std::string id;
    std::vector<double> candidate_rewards;
    std::vector<bool> candidate_correct;
};

// Accuracies are fractions in [0, 1].
struct BenchReport {
    std::vector<std::string> domains;  // first-appearance order
    std::map<std::string, double> per_domain_accuracy;
    std::map<std::string, std::size_t> counts;
    std::map<std::string, std::size_t> correct;
    std::size_t total = 0;
    std::size_t total_correct = 0;
    double overall_accuracy = 0.0;
    double macro_average = 0.0;

    // Domain columns, then Overall and Macro Avg., as percentages to one decimal.
    std::string to_text() const;
    std::string to_json() const;
};

// Strictly greater chosen reward wins; equal rewards count as a miss.
// Throws std::invalid_argument on a non-finite reward.
bool judge_pair(const PreferencePair& p);

BenchReport score_pairwise_bench(std::span<const PreferencePair> pairs);

// Fraction of instances whose top-reward candidate (lowest index on ties) is correct.
double score_best_of_n(std::span<const BoNInstance> instances);

// Line-delimited eval inputs.
struct PairwiseRecord {
    std::string id;
    std::string domain;
    std::string instruction;
    std::optional<std::string> image_path;
    std::string chosen_text;
    std::string rejected_text;
};

struct BoNCandidate {
    std::string text;
    bool correct = false;
};

struct BoNRecord {
    std::string id;
    std::string instruction;
    std::optional<std::string> image_path;
    std::vector<BoNCandidate> candidates;
};

// Parse failures carry the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, std::string detail, const std::string& source = {});
    std::size_t line() const { return line_; }
    const std::string& detail() const { return detail_; }

private:
    std::size_t line_;
    std::string detail_;
};

std::vector<PairwiseRecord> parse_pairwise(std::string_view text);
std::vector<BoNRecord> parse_bon(std::string_view text, std::optional<std::size_t> expected_n = std::nullopt);
std::vector<PairwiseRecord> read_pairwise_file(const std::filesystem::path& path);
std::vector<BoNRecord> read_bon_file(const std::filesystem::path& path,
                                     std::optional<std::size_t> expected_n = std::nullopt);

}  // namespace vlmerge
