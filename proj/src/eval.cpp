#include "vlmerge/eval.hpp"

#include "vlmerge/tensor_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

namespace vlmerge {

using nlohmann::json;

bool judge_pair(const PreferencePair& p) {
    if (!std::isfinite(p.chosen_reward) || !std::isfinite(p.rejected_reward)) {
        throw std::invalid_argument(fmt::format("pair '{}' has a non-finite reward", p.id));
    }
    return p.chosen_reward > p.rejected_reward;
}

namespace {

// Unweighted mean of correct_i / count_i. Evaluated as a single rational
// division over the least common multiple of the counts, so equal-sized domains
// give exactly correct_total / count_total.
double macro_mean(const std::vector<std::pair<std::size_t, std::size_t>>& correct_and_count) {
    using u128 = unsigned __int128;
    constexpr u128 kLimit = static_cast<u128>(1) << 100;
    u128 lcm = 1;
    bool overflow = false;
    for (const auto& [c, n] : correct_and_count) {
        const u128 g = std::gcd(static_cast<std::uint64_t>(lcm % n), static_cast<std::uint64_t>(n));
        lcm = lcm / (g == 0 ? n : g) * n;
        if (lcm > kLimit) {
            overflow = true;
            break;
        }
    }
    const auto k = correct_and_count.size();
    if (!overflow) {
        u128 num = 0;
        for (const auto& [c, n] : correct_and_count) {
            num += static_cast<u128>(c) * (lcm / n);
        }
        return static_cast<double>(num) / static_cast<double>(lcm * k);
    }
    double sum = 0.0;
    for (const auto& [c, n] : correct_and_count) {
        sum += static_cast<double>(c) / static_cast<double>(n);
    }
    return sum / static_cast<double>(k);
}

}  // namespace

BenchReport score_pairwise_bench(std::span<const PreferencePair> pairs) {
    if (pairs.empty()) {
        throw std::invalid_argument("score_pairwise_bench: no pairs");
    }
    BenchReport r;
    for (const auto& p : pairs) {
        if (p.domain.empty()) {
            throw std::invalid_argument(fmt::format("pair '{}' has no domain", p.id));
        }
        if (!r.counts.contains(p.domain)) {
            r.domains.push_back(p.domain);
            r.correct[p.domain] = 0;
        }
        ++r.counts[p.domain];
        if (judge_pair(p)) {
            ++r.correct[p.domain];
            ++r.total_correct;
        }
        ++r.total;
    }
    std::vector<std::pair<std::size_t, std::size_t>> parts;
    for (const auto& d : r.domains) {
        const auto n = r.counts.at(d);
        const auto c = r.correct.at(d);
        r.per_domain_accuracy[d] = static_cast<double>(c) / static_cast<double>(n);
        parts.emplace_back(c, n);
    }
    r.overall_accuracy = static_cast<double>(r.total_correct) / static_cast<double>(r.total);
    r.macro_average = macro_mean(parts);
    return r;
}

std::string BenchReport::to_text() const {
    std::vector<std::string> heads(domains.begin(), domains.end());
    std::vector<std::string> accs;
    std::vector<std::string> ns;
    for (const auto& d : domains) {
        accs.push_back(fmt::format("{:.1f}", 100.0 * per_domain_accuracy.at(d)));
        ns.push_back(std::to_string(counts.at(d)));
    }
    heads.emplace_back("Overall");
    accs.push_back(fmt::format("{:.1f}", 100.0 * overall_accuracy));
    ns.push_back(std::to_string(total));
    heads.emplace_back("Macro Avg.");
    accs.push_back(fmt::format("{:.1f}", 100.0 * macro_average));
    ns.emplace_back("-");

    std::string out;
    auto line = [&](const std::string& label, const std::vector<std::string>& cells) {
        out += fmt::format("{:<9}", label);
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const auto w = std::max<std::size_t>(heads[i].size(), 6);
            out += fmt::format(" | {:>{}}", cells[i], w);
        }
        out += '\n';
    };
    line("", heads);
    line("accuracy", accs);
    line("n", ns);
    return out;
}

std::string BenchReport::to_json() const {
    json domains_json = json::array();
    for (const auto& d : domains) {
        domains_json.push_back({{"domain", d},
                                {"accuracy", per_domain_accuracy.at(d)},
                                {"correct", correct.at(d)},
                                {"count", counts.at(d)}});
    }
    json j = {{"domains", domains_json},
              {"overall_accuracy", overall_accuracy},
              {"macro_average", macro_average},
              {"total", total},
              {"total_correct", total_correct}};
    return j.dump();
}

double score_best_of_n(std::span<const BoNInstance> instances) {
    if (instances.empty()) {
        throw std::invalid_argument("score_best_of_n: no instances");
    }
    std::size_t hits = 0;
    for (const auto& inst : instances) {
        if (inst.candidate_rewards.empty()) {
            throw std::invalid_argument(fmt::format("instance '{}' has no candidates", inst.id));
        }
        if (inst.candidate_rewards.size() != inst.candidate_correct.size()) {
            throw std::invalid_argument(fmt::format("instance '{}': {} rewards for {} candidates", inst.id,
                                                    inst.candidate_rewards.size(), inst.candidate_correct.size()));
        }
        std::size_t best = 0;
        for (std::size_t i = 0; i < inst.candidate_rewards.size(); ++i) {
            if (!std::isfinite(inst.candidate_rewards[i])) {
                throw std::invalid_argument(fmt::format("instance '{}' has a non-finite reward", inst.id));
            }
            if (inst.candidate_rewards[i] > inst.candidate_rewards[best]) {
                best = i;
            }
        }
        if (inst.candidate_correct[best]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(instances.size());
}

ParseError::ParseError(std::size_t line, std::string detail, const std::string& source)
    : std::runtime_error(source.empty() ? fmt::format("line {}: {}", line, detail)
                                        : fmt::format("{}:{}: {}", source, line, detail)),
      line_(line),
      detail_(std::move(detail)) {}

namespace {

template <typename Fn>
void for_each_record(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(line_no, fmt::format("malformed JSON record ({})", e.what()));
        }
        if (!j.is_object()) {
            throw ParseError(line_no, "record is not a JSON object");
        }
        try {
            fn(j, line_no);
        } catch (const json::exception& e) {
            throw ParseError(line_no, e.what());
        }
    }
}

std::string required_string(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || !j[key].is_string()) {
        throw ParseError(line, fmt::format("missing or non-string field '{}'", key));
    }
    return j[key].get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || j[key].is_null()) {
        return std::nullopt;
    }
    if (!j[key].is_string()) {
        throw ParseError(line, fmt::format("field '{}' must be a string", key));
    }
    return j[key].get<std::string>();
}

void check_unique(std::set<std::string>& ids, const std::string& id, std::size_t line) {
    if (id.empty()) {
        throw ParseError(line, "empty id");
    }
    if (!ids.insert(id).second) {
        throw ParseError(line, fmt::format("duplicate id '{}'", id));
    }
}

std::string_view as_text(const std::vector<std::byte>& bytes) {
    return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

}  // namespace

std::vector<PairwiseRecord> parse_pairwise(std::string_view text) {
    std::vector<PairwiseRecord> out;
    std::set<std::string> ids;
    for_each_record(text, [&](const json& j, std::size_t line) {
        PairwiseRecord r;
        r.id = required_string(j, "id", line);
        check_unique(ids, r.id, line);
        r.domain = required_string(j, "domain", line);
        if (r.domain.empty()) {
            throw ParseError(line, "empty domain");
        }
        r.instruction = required_string(j, "instruction", line);
        r.image_path = optional_string(j, "image_path", line);
        r.chosen_text = required_string(j, "chosen_text", line);
        r.rejected_text = required_string(j, "rejected_text", line);
        out.push_back(std::move(r));
    });
    if (out.empty()) {
        throw ParseError(0, "no pairwise records");
    }
    return out;
}

std::vector<BoNRecord> parse_bon(std::string_view text, std::optional<std::size_t> expected_n) {
    std::vector<BoNRecord> out;
    std::set<std::string> ids;
    for_each_record(text, [&](const json& j, std::size_t line) {
        BoNRecord r;
        r.id = required_string(j, "id", line);
        check_unique(ids, r.id, line);
        r.instruction = required_string(j, "instruction", line);
        r.image_path = optional_string(j, "image_path", line);
        if (!j.contains("candidates") || !j["candidates"].is_array() || j["candidates"].empty()) {
            throw ParseError(line, "missing or empty 'candidates' array");
        }
        for (const auto& c : j["candidates"]) {
            if (!c.is_object() || !c.contains("text") || !c["text"].is_string() || !c.contains("correct") ||
                !c["correct"].is_boolean()) {
                throw ParseError(line, "each candidate needs string 'text' and boolean 'correct'");
            }
            r.candidates.push_back({c["text"].get<std::string>(), c["correct"].get<bool>()});
        }
        if (expected_n && r.candidates.size() != *expected_n) {
            throw ParseError(line, fmt::format("expected {} candidates, found {}", *expected_n, r.candidates.size()));
        }
        out.push_back(std::move(r));
    });
    if (out.empty()) {
        throw ParseError(0, "no best-of-n records");
    }
    return out;
}

std::vector<PairwiseRecord> read_pairwise_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return parse_pairwise(as_text(bytes));
    } catch (const ParseError& e) {
        throw ParseError(e.line(), e.detail(), path.string());
    }
}

std::vector<BoNRecord> read_bon_file(const std::filesystem::path& path, std::optional<std::size_t> expected_n) {
    const auto bytes = read_file_bytes(path);
    try {
        return parse_bon(as_text(bytes), expected_n);
    } catch (const ParseError& e) {
        throw ParseError(e.line(), e.detail(), path.string());
    }
}

}  // namespace vlmerge
