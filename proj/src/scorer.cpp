#include "vlmerge/scorer.hpp"

#include "vlmerge/tensor_store.hpp"

#include <array>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <fstream>
#include <set>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>
#include <json.hpp>

namespace vlmerge {

using nlohmann::json;

std::string ScoreRequest::to_wire() const {
    json j = {{"id", id}, {"instruction", instruction}, {"response", response}};
    if (image_path) {
        j["image_path"] = *image_path;
    }
    return j.dump();
}

namespace {

json request_json(const ScoreRequest& r) { return json::parse(r.to_wire()); }

ScoreRequest request_from_json(const json& j) {
    ScoreRequest r;
    r.id = j.at("id").get<std::string>();
    r.instruction = j.value("instruction", std::string{});
    r.response = j.value("response", std::string{});
    if (j.contains("image_path") && !j["image_path"].is_null()) {
        r.image_path = j["image_path"].get<std::string>();
    }
    return r;
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out += c;
        }
    }
    out += "'";
    return out;
}

std::string substitute_model(std::string cmd, const std::string& path) {
    const std::string token = "{model}";
    const std::string quoted = shell_quote(path);
    for (auto pos = cmd.find(token); pos != std::string::npos; pos = cmd.find(token, pos + quoted.size())) {
        cmd.replace(pos, token.size(), quoted);
    }
    return cmd;
}

std::string list_ids(const std::vector<std::string>& ids) {
    constexpr std::size_t kShown = 5;
    std::string out;
    for (std::size_t i = 0; i < ids.size() && i < kShown; ++i) {
        out += (i ? ", " : "") + ids[i];
    }
    if (ids.size() > kShown) {
        out += fmt::format(" (+{} more)", ids.size() - kShown);
    }
    return out;
}

void write_all(int fd, const std::string& data) {
    std::size_t done = 0;
    while (done < data.size()) {
        const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            return;  // reader went away; the exit status reports why
        }
        done += static_cast<std::size_t>(n);
    }
}

// Collects replies and enforces one reward per known id.
class ReplyCollector {
public:
    explicit ReplyCollector(std::span<const ScoreRequest> requests) {
        for (const auto& r : requests) {
            if (!pending_.insert(r.id).second) {
                throw ScorerError(fmt::format("duplicate request id '{}'", r.id));
            }
        }
    }

    void accept(const std::string& id, double reward) {
        if (!std::isfinite(reward)) {
            throw ScorerError(fmt::format("scorer returned a non-finite reward for '{}'", id));
        }
        if (rewards_.contains(id)) {
            throw ScorerError(fmt::format("scorer replied twice for id '{}'", id));
        }
        if (!pending_.erase(id)) {
            throw ScorerError(fmt::format("scorer replied with unknown id '{}'", id));
        }
        rewards_.emplace(id, reward);
    }

    RewardMap finish() {
        if (!pending_.empty()) {
            throw ScorerError(fmt::format("scorer gave no reward for id(s): {}",
                                          list_ids({pending_.begin(), pending_.end()})));
        }
        return std::move(rewards_);
    }

    std::size_t received() const { return rewards_.size(); }

private:
    std::set<std::string> pending_;
    RewardMap rewards_;
};

void parse_reply_line(const std::string& line, ReplyCollector& collector) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ScorerError(fmt::format("malformed scorer reply '{}': {}", line, e.what()));
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("reward") ||
        !j["reward"].is_number()) {
        throw ScorerError(fmt::format("scorer reply needs string 'id' and numeric 'reward': {}", line));
    }
    collector.accept(j["id"].get<std::string>(), j["reward"].get<double>());
}

}  // namespace

ProcessScorer::ProcessScorer(std::string command, std::chrono::milliseconds per_record_timeout)
    : command_(std::move(command)), timeout_(per_record_timeout) {}

RewardMap ProcessScorer::score(const ModelRef& model, std::span<const ScoreRequest> requests) {
    ReplyCollector collector(requests);
    const std::string cmd = substitute_model(command_, model.path);

    // a scorer that dies early must surface as an exit status, not kill us
    std::signal(SIGPIPE, SIG_IGN);

    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) {
        throw ScorerError(fmt::format("pipe: {}", std::strerror(errno)));
    }
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
        ::close(to_child[0]);
        ::close(to_child[1]);
        throw ScorerError(fmt::format("pipe: {}", std::strerror(errno)));
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
        for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
        throw ScorerError(fmt::format("fork: {}", std::strerror(errno)));
    }
    if (pid == 0) {
        // own process group, so a kill also reaches whatever the shell started
        ::setpgid(0, 0);
        ::dup2(to_child[0], STDIN_FILENO);
        ::dup2(from_child[1], STDOUT_FILENO);
        ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::setpgid(pid, pid);
    ::close(to_child[0]);
    ::close(from_child[1]);
    const int write_fd = to_child[1];
    const int read_fd = from_child[0];

    std::thread writer([&] {
        std::string batch;
        for (const auto& r : requests) {
            batch += r.to_wire();
            batch += '\n';
            if (batch.size() > (1 << 16)) {
                write_all(write_fd, batch);
                batch.clear();
            }
        }
        write_all(write_fd, batch);
        ::close(write_fd);
    });

    auto reap = [&](bool kill_child) {
        if (kill_child) {
            ::kill(-pid, SIGKILL);
        }
        writer.join();
        ::close(read_fd);
        int status = 0;
        while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
        }
        return status;
    };

    std::string buffer;
    std::array<char, 1 << 16> chunk;
    try {
        for (;;) {
            pollfd pfd{read_fd, POLLIN, 0};
            const int ready = ::poll(&pfd, 1, static_cast<int>(timeout_.count()));
            if (ready < 0) {
                if (errno == EINTR) continue;
                throw ScorerError(fmt::format("poll: {}", std::strerror(errno)));
            }
            if (ready == 0) {
                throw ScorerError(fmt::format("scorer timed out after {} ms waiting for reply {} of {}",
                                              timeout_.count(), collector.received() + 1, requests.size()));
            }
            const ssize_t n = ::read(read_fd, chunk.data(), chunk.size());
            if (n < 0) {
                if (errno == EINTR) continue;
                throw ScorerError(fmt::format("read: {}", std::strerror(errno)));
            }
            if (n == 0) {
                break;
            }
            buffer.append(chunk.data(), static_cast<std::size_t>(n));
            std::size_t start = 0;
            for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n', start)) {
                std::string line = buffer.substr(start, nl - start);
                start = nl + 1;
                if (line.find_first_not_of(" \t\r") != std::string::npos) {
                    parse_reply_line(line, collector);
                }
            }
            buffer.erase(0, start);
        }
        if (buffer.find_first_not_of(" \t\r") != std::string::npos) {
            parse_reply_line(buffer, collector);
        }
    } catch (...) {
        reap(true);
        throw;
    }

    const int status = reap(false);
    if (WIFSIGNALED(status)) {
        throw ScorerError(fmt::format("scorer killed by signal {}", WTERMSIG(status)));
    }
    if (WIFEXITED(status) && WEXITSTATUS(status) != 0) {
        throw ScorerError(fmt::format("scorer exited with status {}", WEXITSTATUS(status)));
    }
    return collector.finish();
}

ReplayScorer::ReplayScorer(const std::filesystem::path& transcript) : ReplayScorer(read_transcript(transcript)) {}

ReplayScorer::ReplayScorer(std::vector<TranscriptEntry> entries) {
    for (auto& e : entries) {
        rewards_[{e.model_key, e.request.id}] = e.reward;
    }
}

RewardMap ReplayScorer::score(const ModelRef& model, std::span<const ScoreRequest> requests) {
    ReplyCollector collector(requests);
    for (const auto& r : requests) {
        auto it = rewards_.find({model.key, r.id});
        if (it == rewards_.end()) {
            throw ScorerError(fmt::format("transcript has no reward for id '{}' under model '{}'", r.id, model.key));
        }
        collector.accept(r.id, it->second);
    }
    return collector.finish();
}

RewardMap RecordingScorer::score(const ModelRef& model, std::span<const ScoreRequest> requests) {
    auto rewards = inner_.score(model, requests);
    std::lock_guard lock(mutex_);
    for (const auto& r : requests) {
        entries_[{model.key, r.id}] = TranscriptEntry{model.key, r, rewards.at(r.id)};
    }
    return rewards;
}

std::vector<TranscriptEntry> RecordingScorer::entries() const {
    std::lock_guard lock(mutex_);
    std::vector<TranscriptEntry> out;
    out.reserve(entries_.size());
    for (const auto& [key, e] : entries_) {
        out.push_back(e);
    }
    return out;
}

void RecordingScorer::write(const std::filesystem::path& path) const { write_transcript(entries(), path); }

void write_transcript(const std::vector<TranscriptEntry>& entries, const std::filesystem::path& path) {
    std::string text;
    for (const auto& e : entries) {
        json j = {{"model", e.model_key}, {"request", request_json(e.request)}, {"reward", e.reward}};
        text += j.dump();
        text += '\n';
    }
    write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::vector<TranscriptEntry> read_transcript(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ScorerError(fmt::format("cannot open transcript '{}'", path.string()));
    }
    std::vector<TranscriptEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = json::parse(line);
            out.push_back({j.at("model").get<std::string>(), request_from_json(j.at("request")),
                           j.at("reward").get<double>()});
        } catch (const json::exception& e) {
            throw ScorerError(fmt::format("{}:{}: bad transcript record: {}", path.string(), line_no, e.what()));
        }
    }
    return out;
}

std::vector<ScoreRequest> pairwise_requests(std::span<const PairwiseRecord> records) {
    std::vector<ScoreRequest> out;
    out.reserve(2 * records.size());
    for (const auto& r : records) {
        out.push_back({r.id + "/chosen", r.instruction, r.chosen_text, r.image_path});
        out.push_back({r.id + "/rejected", r.instruction, r.rejected_text, r.image_path});
    }
    return out;
}

std::vector<PreferencePair> pairs_from_rewards(std::span<const PairwiseRecord> records, const RewardMap& rewards) {
    std::vector<PreferencePair> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back({r.id, r.domain, rewards.at(r.id + "/chosen"), rewards.at(r.id + "/rejected")});
    }
    return out;
}

std::vector<ScoreRequest> bon_requests(std::span<const BoNRecord> records) {
    std::vector<ScoreRequest> out;
    for (const auto& r : records) {
        for (std::size_t k = 0; k < r.candidates.size(); ++k) {
            out.push_back({fmt::format("{}/{}", r.id, k), r.instruction, r.candidates[k].text, r.image_path});
        }
    }
    return out;
}

std::vector<BoNInstance> bon_from_rewards(std::span<const BoNRecord> records, const RewardMap& rewards) {
    std::vector<BoNInstance> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        BoNInstance inst;
        inst.id = r.id;
        for (std::size_t k = 0; k < r.candidates.size(); ++k) {
            inst.candidate_rewards.push_back(rewards.at(fmt::format("{}/{}", r.id, k)));
            inst.candidate_correct.push_back(r.candidates[k].correct);
        }
        out.push_back(std::move(inst));
    }
    return out;
}

RewardMap run_scorer(Scorer& scorer, const ModelRef& model, std::span<const ScoreRequest> requests) {
    auto rewards = scorer.score(model, requests);
    ReplyCollector check(requests);
    for (const auto& [id, reward] : rewards) {
        check.accept(id, reward);
    }
    check.finish();
    return rewards;
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv_update(std::uint64_t h, std::string_view s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

}  // namespace

double stub_reward(const ScoreRequest& request, std::uint64_t model_salt, StubMode mode) {
    if (mode == StubMode::Length) {
        return static_cast<double>(request.response.size());
    }
    std::uint64_t h = fnv_update(kFnvOffset ^ model_salt, request.instruction);
    h = fnv_update(h ^ 0xff, request.response);
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    h ^= h >> 31;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::uint64_t stub_model_salt(const std::filesystem::path& model_path) {
    std::ifstream in(model_path, std::ios::binary);
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open model '{}'", model_path.string()));
    }
    std::uint64_t h = kFnvOffset;
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        h = fnv_update(h, std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
    }
    return h;
}

}  // namespace vlmerge
