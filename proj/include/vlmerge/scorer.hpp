#pragma once

#include "vlmerge/eval.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlmerge {

// One response to be rewarded. Wire form (one JSON object per line):
//   {"id": ..., "instruction": ..., "response": ..., "image_path": ...}
// and the scorer answers {"id": ..., "reward": <number>} per request, in any order.
struct ScoreRequest {
    std::string id;
    std::string instruction;
    std::string response;
    std::optional<std::string> image_path;

    std::string to_wire() const;
};

// Which model is being scored. `path` is substituted for "{model}" in scorer
// command lines; `key` identifies the model in transcripts, independent of where
// the file lives.
struct ModelRef {
    std::string path;
    std::string key;
};

class ScorerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using RewardMap = std::map<std::string, double>;

class Scorer {
public:
    virtual ~Scorer() = default;
    // Returns exactly one reward per request id; throws ScorerError otherwise.
    virtual RewardMap score(const ModelRef& model, std::span<const ScoreRequest> requests) = 0;
};

// Runs `command` through /bin/sh, streams requests to its stdin and reads replies
// from its stdout.
class ProcessScorer : public Scorer {
public:
    explicit ProcessScorer(std::string command, std::chrono::milliseconds per_record_timeout = std::chrono::minutes(10));
    RewardMap score(const ModelRef& model, std::span<const ScoreRequest> requests) override;

    const std::string& command() const { return command_; }

private:
    std::string command_;
    std::chrono::milliseconds timeout_;
};

struct TranscriptEntry {
    std::string model_key;
    ScoreRequest request;
    double reward = 0.0;
};

// Answers from a recorded transcript; a missing (model, id) is an error.
class ReplayScorer : public Scorer {
public:
    explicit ReplayScorer(const std::filesystem::path& transcript);
    explicit ReplayScorer(std::vector<TranscriptEntry> entries);
    RewardMap score(const ModelRef& model, std::span<const ScoreRequest> requests) override;

private:
    std::map<std::pair<std::string, std::string>, double> rewards_;
};

// Forwards to another scorer and keeps every exchange. Safe to share across threads.
class RecordingScorer : public Scorer {
public:
    explicit RecordingScorer(Scorer& inner) : inner_(inner) {}
    RewardMap score(const ModelRef& model, std::span<const ScoreRequest> requests) override;

    // Sorted by (model key, request id) so the file does not depend on scheduling.
    std::vector<TranscriptEntry> entries() const;
    void write(const std::filesystem::path& path) const;

private:
    Scorer& inner_;
    mutable std::mutex mutex_;
    std::map<std::pair<std::string, std::string>, TranscriptEntry> entries_;
};

void write_transcript(const std::vector<TranscriptEntry>& entries, const std::filesystem::path& path);
std::vector<TranscriptEntry> read_transcript(const std::filesystem::path& path);

// Request ids: "<pair id>/chosen", "<pair id>/rejected", "<instance id>/<k>".
std::vector<ScoreRequest> pairwise_requests(std::span<const PairwiseRecord> records);
std::vector<PreferencePair> pairs_from_rewards(std::span<const PairwiseRecord> records, const RewardMap& rewards);
std::vector<ScoreRequest> bon_requests(std::span<const BoNRecord> records);
std::vector<BoNInstance> bon_from_rewards(std::span<const BoNRecord> records, const RewardMap& rewards);

// Scores every request and checks that each id got exactly one reward.
RewardMap run_scorer(Scorer& scorer, const ModelRef& model, std::span<const ScoreRequest> requests);

// Deterministic stand-in for a reward model, used by the bundled stub scorer.
enum class StubMode : std::uint8_t { Hash, Length };
double stub_reward(const ScoreRequest& request, std::uint64_t model_salt, StubMode mode);
std::uint64_t stub_model_salt(const std::filesystem::path& model_path);

}  // namespace vlmerge
