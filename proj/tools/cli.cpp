#include "cli.hpp"

#include "vlmerge/assembler.hpp"
#include "vlmerge/content_hash.hpp"
#include "vlmerge/eval.hpp"
#include "vlmerge/manifest.hpp"
#include "vlmerge/parallel.hpp"
#include "vlmerge/scorer.hpp"
#include "vlmerge/sweep.hpp"
#include "vlmerge/toy.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

namespace vlmerge::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kManifestEnv = "VLMERGE_MANIFEST";

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TripleArgs {
    std::string pre, lvlm, rm;
    std::string pre_vocab, lvlm_vocab, rm_vocab;
    std::string manifest;
};

struct RecipeArgs {
    std::string method;
    double lambda = 0.0;
    double density = 0.0;
    std::uint64_t seed = 0;
    CLI::Option* density_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
};

struct ScorerArgs {
    std::string command;
    std::string replay;
    std::string record;
    double timeout_s = 600.0;
};

struct MergeArgs {
    TripleArgs triple;
    RecipeArgs recipe;
    std::string out;
    std::string out_vocab;
    unsigned jobs = 0;
};

struct SweepArgs {
    TripleArgs triple;
    ScorerArgs scorer;
    std::string config;
    std::string method;
    std::string validation_set;
    std::string out_dir = "sweep-out";
    std::string run_manifest;
    unsigned jobs = 0;
};

struct EvalArgs {
    std::string mode;
    std::string input;
    std::string model;
    std::string model_key;
    ScorerArgs scorer;
    std::size_t n = 8;
    bool json = false;
    std::string out;
};

struct InspectArgs {
    std::string checkpoint;
    std::string vocab;
    std::string kind = "merged";
    std::string manifest;
    std::string lvlm;
    bool json = false;
};

struct ToyArgs {
    std::string out_dir = "toy";
    std::uint64_t seed = 1;
    std::size_t eval_pairs = 300;
    std::size_t validation_pairs = 600;
    std::size_t bon_instances = 40;
    std::size_t n = 8;
};

struct StubArgs {
    std::string model;
    std::string mode = "hash";
};

void add_triple_options(CLI::App* cmd, TripleArgs& a) {
    cmd->add_option("--pre", a.pre, "base language model checkpoint")->required();
    cmd->add_option("--lvlm", a.lvlm, "vision-language model checkpoint")->required();
    cmd->add_option("--rm", a.rm, "text reward model checkpoint")->required();
    cmd->add_option("--pre-vocab", a.pre_vocab, "base vocab sidecar");
    cmd->add_option("--lvlm-vocab", a.lvlm_vocab, "LVLM vocab sidecar");
    cmd->add_option("--rm-vocab", a.rm_vocab, "RM vocab sidecar");
    cmd->add_option("--manifest", a.manifest, fmt::format("component manifest config (default: ${} or built-in)",
                                                           kManifestEnv));
}

void add_scorer_options(CLI::App* cmd, ScorerArgs& a) {
    auto* sc = cmd->add_option("--scorer", a.command, "scorer command line; {model} is replaced by the model path");
    auto* rp = cmd->add_option("--replay", a.replay, "answer from a recorded scorer transcript");
    sc->excludes(rp);
    cmd->add_option("--record", a.record, "write the scorer transcript here");
    cmd->add_option("--timeout", a.timeout_s, "per-record scorer timeout in seconds")->capture_default_str();
}

std::string resolve_manifest_path(const std::string& flag) {
    if (!flag.empty()) {
        return flag;
    }
    if (const char* env = std::getenv(kManifestEnv); env != nullptr && *env != '\0') {
        return env;
    }
    return {};
}

ManifestConfig load_manifest(const std::string& path) {
    return path.empty() ? ManifestConfig::defaults() : load_manifest_config(path);
}

MergeRecipe build_recipe(const RecipeArgs& a) {
    MergeRecipe r;
    try {
        r.method = parse_method(a.method);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    r.lambda = a.lambda;
    const bool has_density = a.density_opt != nullptr && a.density_opt->count() > 0;
    const bool has_seed = a.seed_opt != nullptr && a.seed_opt->count() > 0;
    if (method_uses_density(r.method) && !has_density) {
        throw UsageError(fmt::format("--density is required for method {}", a.method));
    }
    if (!method_uses_density(r.method) && has_density) {
        throw UsageError(fmt::format("--density is not accepted by method {}", a.method));
    }
    if (method_uses_seed(r.method) && !has_seed) {
        throw UsageError(fmt::format("--seed is required for method {}", a.method));
    }
    if (!method_uses_seed(r.method) && has_seed) {
        throw UsageError(fmt::format("--seed is not accepted by method {}", a.method));
    }
    if (has_density) r.density = a.density;
    if (has_seed) r.seed = a.seed;
    try {
        r.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return r;
}

struct LoadedTriple {
    ModelTriple triple;
    std::map<std::string, std::string> provenance;  // metadata entries
    std::string inputs_key;
};

LoadedTriple load_triple(const TripleArgs& a, const std::string& manifest_path, std::ostream& err) {
    const int vocab_flags = !a.pre_vocab.empty() + !a.lvlm_vocab.empty() + !a.rm_vocab.empty();
    if (vocab_flags != 0 && vocab_flags != 3) {
        throw UsageError("--pre-vocab, --lvlm-vocab and --rm-vocab must be given together");
    }
    const auto config = load_manifest(manifest_path);
    LoadedTriple out;
    std::string key;
    auto load_one = [&](const char* label, const std::string& path, const std::string& vocab_path) {
        fmt::print(err, "loading {} from {}\n", label, path);
        auto ckpt = read_checkpoint(path);
        ckpt.source_label = label;
        const auto hash = sha256_file(path);
        out.provenance[fmt::format("vlmerge.sha256.{}", label)] = hash;
        key += fmt::format("{}={}\n", label, hash);
        if (!vocab_path.empty()) {
            ckpt.vocab = read_vocab(vocab_path);
            const auto vhash = sha256_file(vocab_path);
            out.provenance[fmt::format("vlmerge.sha256.{}_vocab", label)] = vhash;
            key += fmt::format("{}_vocab={}\n", label, vhash);
        }
        return ckpt;
    };
    auto pre = load_one("pre", a.pre, a.pre_vocab);
    auto lvlm = load_one("lvlm", a.lvlm, a.lvlm_vocab);
    auto rm = load_one("rm", a.rm, a.rm_vocab);
    key += "manifest=" + sha256_hex(config.to_json()) + "\n";
    out.triple = classify_triple(std::move(pre), std::move(lvlm), std::move(rm), config);
    out.inputs_key = sha256_hex(key);
    return out;
}

void echo_config(std::ostream& err, const char* command, const ordered_json& j) {
    fmt::print(err, "resolved {} config: {}\n", command, j.dump());
}

ordered_json triple_json(const TripleArgs& a, const std::string& manifest) {
    ordered_json j;
    j["pre"] = a.pre;
    j["lvlm"] = a.lvlm;
    j["rm"] = a.rm;
    j["pre_vocab"] = a.pre_vocab.empty() ? ordered_json(nullptr) : ordered_json(a.pre_vocab);
    j["lvlm_vocab"] = a.lvlm_vocab.empty() ? ordered_json(nullptr) : ordered_json(a.lvlm_vocab);
    j["rm_vocab"] = a.rm_vocab.empty() ? ordered_json(nullptr) : ordered_json(a.rm_vocab);
    j["manifest"] = manifest.empty() ? ordered_json("<built-in defaults>") : ordered_json(manifest);
    return j;
}

std::unique_ptr<Scorer> make_base_scorer(const ScorerArgs& a) {
    if (!a.replay.empty()) {
        return std::make_unique<ReplayScorer>(fs::path(a.replay));
    }
    if (a.command.empty()) {
        throw UsageError("one of --scorer or --replay is required");
    }
    if (!(a.timeout_s > 0)) {
        throw UsageError("--timeout must be positive");
    }
    return std::make_unique<ProcessScorer>(a.command,
                                           std::chrono::milliseconds(static_cast<long long>(a.timeout_s * 1000.0)));
}

ordered_json scorer_json(const ScorerArgs& a) {
    ordered_json j;
    j["scorer"] = a.command.empty() ? ordered_json(nullptr) : ordered_json(a.command);
    j["replay"] = a.replay.empty() ? ordered_json(nullptr) : ordered_json(a.replay);
    j["record"] = a.record.empty() ? ordered_json(nullptr) : ordered_json(a.record);
    j["timeout_s"] = a.timeout_s;
    return j;
}

void print_report(std::ostream& out, const ValidationReport& report) {
    fmt::print(out, "validation: {}\n", report.to_string());
}

int cmd_merge(const MergeArgs& a, std::ostream& out, std::ostream& err) {
    const auto recipe = build_recipe(a.recipe);
    const auto manifest = resolve_manifest_path(a.triple.manifest);
    const unsigned jobs = resolve_jobs(a.jobs);
    {
        auto j = triple_json(a.triple, manifest);
        j["method"] = std::string(method_name(recipe.method));
        j["lambda"] = recipe.lambda;
        j["density"] = recipe.density ? ordered_json(*recipe.density) : ordered_json(nullptr);
        j["seed"] = recipe.seed ? ordered_json(*recipe.seed) : ordered_json(nullptr);
        j["out"] = a.out;
        j["out_vocab"] = a.out_vocab.empty() ? ordered_json("<derived from --out>") : ordered_json(a.out_vocab);
        j["jobs"] = jobs;
        echo_config(err, "merge", j);
    }
    auto loaded = load_triple(a.triple, manifest, err);
    const auto report = validate_triple(loaded.triple);
    if (!report.ok()) {
        print_report(err, report);
        return kExitFailure;
    }
    print_report(out, report);
    for (const auto& [k, v] : loaded.provenance) {
        fmt::print(out, "{} {}\n", k, v);
    }
    AssemblyPlan plan{recipe, &loaded.triple, loaded.provenance, jobs};
    fmt::print(err, "merging: {}\n", recipe.describe());
    const auto merged = assemble_vlrm(plan);
    write_checkpoint(merged, a.out);
    fmt::print(out, "recipe: {}\n", recipe.describe());
    fmt::print(out, "wrote {} ({} tensors)\n", a.out, merged.tensors.size());
    if (merged.vocab) {
        fs::path vocab_out = a.out_vocab;
        if (vocab_out.empty()) {
            vocab_out = fs::path(a.out).replace_extension(".vocab");
        }
        write_vocab(*merged.vocab, vocab_out);
        fmt::print(out, "wrote {} ({} tokens)\n", vocab_out.string(), merged.vocab->size());
    }
    return kExitOk;
}

int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
    SweepConfig config;
    fs::path config_dir;
    try {
        if (!a.config.empty()) {
            config = load_sweep_config(a.config);
            config_dir = fs::path(a.config).parent_path();
            if (!a.method.empty() && parse_method(a.method) != config.method) {
                throw UsageError("--method disagrees with the sweep config");
            }
        } else if (!a.method.empty()) {
            config = SweepConfig::defaults(parse_method(a.method));
        } else {
            throw UsageError("one of --config or --method is required");
        }
        generate_grid(config);
    } catch (const UsageError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    fs::path validation = a.validation_set;
    if (validation.empty()) {
        if (config.validation_set.empty()) {
            throw UsageError("no validation set: pass --validation-set or set validation_set in the config");
        }
        validation = config_dir / config.validation_set;
    }
    config.validation_set = validation.string();
    const auto manifest = resolve_manifest_path(a.triple.manifest);
    const unsigned jobs = resolve_jobs(a.jobs);
    const fs::path run_manifest = a.run_manifest.empty() ? fs::path(a.out_dir) / "run.jsonl" : fs::path(a.run_manifest);
    {
        auto j = triple_json(a.triple, manifest);
        j["sweep"] = ordered_json::parse(config.to_json());
        j.update(scorer_json(a.scorer));
        j["out_dir"] = a.out_dir;
        j["run_manifest"] = run_manifest.string();
        j["jobs"] = jobs;
        echo_config(err, "sweep", j);
    }
    auto base = make_base_scorer(a.scorer);
    std::unique_ptr<RecordingScorer> recorder;
    Scorer* scorer = base.get();
    if (!a.scorer.record.empty()) {
        recorder = std::make_unique<RecordingScorer>(*base);
        scorer = recorder.get();
    }
    const auto dataset = read_pairwise_file(validation);
    auto loaded = load_triple(a.triple, manifest, err);
    const auto report = validate_triple(loaded.triple);
    if (!report.ok()) {
        print_report(err, report);
        return kExitFailure;
    }
    SweepRun run;
    run.triple = &loaded.triple;
    run.inputs_key = loaded.inputs_key;
    run.provenance = loaded.provenance;
    run.variant_dir = a.out_dir;
    run.manifest_path = run_manifest;
    run.jobs = jobs;
    run.log = [&err](const std::string& msg) { fmt::print(err, "{}\n", msg); };
    const auto result = run_sweep(config, dataset, run, *scorer);
    if (recorder) {
        recorder->write(a.scorer.record);
    }
    const auto failed = std::count_if(result.entries.begin(), result.entries.end(),
                                      [](const SweepEntry& e) { return e.failed; });
    fmt::print(out, "recipes: {} ({} failed)\n", result.entries.size(), failed);
    fmt::print(out, "run manifest: {}\n", run_manifest.string());
    if (!result.winner) {
        fmt::print(err, "every recipe failed\n");
        return kExitFailure;
    }
    const auto& w = result.winning_entry();
    fmt::print(out, "winner: {}\n", w.recipe.describe());
    fmt::print(out, "primary accuracy: {:.1f}%\n", 100.0 * w.primary_accuracy);
    if (w.tiebreak_accuracy) {
        fmt::print(out, "tie-break accuracy: {:.1f}%\n", 100.0 * *w.tiebreak_accuracy);
    }
    fmt::print(out, "variant: {}\n", w.variant_path);
    return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    if (a.mode != "pairwise" && a.mode != "bon") {
        throw UsageError(fmt::format("--mode must be pairwise or bon, got '{}'", a.mode));
    }
    if (a.n == 0) {
        throw UsageError("--n must be positive");
    }
    const std::string key = a.model_key.empty() ? sha256_file(a.model) : a.model_key;
    {
        ordered_json j;
        j["mode"] = a.mode;
        j["input"] = a.input;
        j["model"] = a.model;
        j["model_key"] = key;
        j.update(scorer_json(a.scorer));
        j["n"] = a.mode == "bon" ? ordered_json(a.n) : ordered_json(nullptr);
        j["json"] = a.json;
        j["out"] = a.out.empty() ? ordered_json(nullptr) : ordered_json(a.out);
        echo_config(err, "eval", j);
    }
    auto base = make_base_scorer(a.scorer);
    std::unique_ptr<RecordingScorer> recorder;
    Scorer* scorer = base.get();
    if (!a.scorer.record.empty()) {
        recorder = std::make_unique<RecordingScorer>(*base);
        scorer = recorder.get();
    }
    const ModelRef model{a.model, key};
    std::string report;
    if (a.mode == "pairwise") {
        const auto records = read_pairwise_file(a.input);
        const auto requests = pairwise_requests(records);
        fmt::print(err, "scoring {} responses\n", requests.size());
        const auto rewards = run_scorer(*scorer, model, requests);
        const auto bench = score_pairwise_bench(pairs_from_rewards(records, rewards));
        report = a.json ? bench.to_json() + "\n" : bench.to_text();
    } else {
        const auto records = read_bon_file(a.input, a.n);
        const auto requests = bon_requests(records);
        fmt::print(err, "scoring {} responses\n", requests.size());
        const auto rewards = run_scorer(*scorer, model, requests);
        const auto instances = bon_from_rewards(records, rewards);
        const double acc = score_best_of_n(instances);
        if (a.json) {
            ordered_json j;
            j["mode"] = "bon";
            j["n"] = a.n;
            j["instances"] = instances.size();
            j["accuracy"] = acc;
            report = j.dump() + "\n";
        } else {
            report = fmt::format("best-of-{} accuracy: {:.1f}% ({} instances)\n", a.n, 100.0 * acc, instances.size());
        }
    }
    if (recorder) {
        recorder->write(a.scorer.record);
    }
    if (a.out.empty()) {
        out << report;
    } else {
        write_file_bytes(a.out, std::as_bytes(std::span(report.data(), report.size())));
        fmt::print(err, "wrote {}\n", a.out);
    }
    return kExitOk;
}

const ModelRules& rules_for(const ManifestConfig& config, const std::string& kind) {
    if (kind == "pre") return config.pre;
    if (kind == "lvlm") return config.lvlm;
    if (kind == "rm") return config.rm;
    if (kind == "merged") return config.merged;
    throw UsageError(fmt::format("--kind must be pre, lvlm, rm or merged, got '{}'", kind));
}

int cmd_inspect(const InspectArgs& a, std::ostream& out, std::ostream& err) {
    const auto manifest = resolve_manifest_path(a.manifest);
    const auto config = load_manifest(manifest);
    const auto& rules = rules_for(config, a.kind);
    {
        ordered_json j;
        j["checkpoint"] = a.checkpoint;
        j["vocab"] = a.vocab.empty() ? ordered_json(nullptr) : ordered_json(a.vocab);
        j["kind"] = a.kind;
        j["manifest"] = manifest.empty() ? ordered_json("<built-in defaults>") : ordered_json(manifest);
        j["lvlm"] = a.lvlm.empty() ? ordered_json(nullptr) : ordered_json(a.lvlm);
        j["json"] = a.json;
        echo_config(err, "inspect", j);
    }
    auto ckpt = read_checkpoint(a.checkpoint);
    if (!a.vocab.empty()) {
        ckpt.vocab = read_vocab(a.vocab);
    }

    std::vector<std::string> unmatched;
    ComponentMap components;
    try {
        components = classify_tensors(ckpt, rules);
    } catch (const ClassificationError& e) {
        unmatched = e.unmatched();
    }
    auto role_of = [&](const std::string& name) -> std::string {
        auto it = components.assignments.find(name);
        return it == components.assignments.end() ? "UNMATCHED" : std::string(role_name(it->second));
    };

    std::vector<std::string> problems;
    for (const auto& name : unmatched) {
        problems.push_back(fmt::format("no rule matches tensor {}", name));
    }
    if (unmatched.empty() && a.kind == "merged") {
        const auto counts = components.counts();
        auto count = [&](ComponentRole r) {
            auto it = counts.find(r);
            return it == counts.end() ? std::size_t{0} : it->second;
        };
        if (count(ComponentRole::RMHead) == 0) problems.emplace_back("reward head missing");
        if (count(ComponentRole::LMHead) != 0) problems.emplace_back("LM head present");
        if (count(ComponentRole::Transformer) == 0) problems.emplace_back("no transformer tensors");
        if (count(ComponentRole::Embedding) == 0) problems.emplace_back("no embedding tensors");
        if (!a.lvlm.empty()) {
            const auto lvlm = read_checkpoint(a.lvlm);
            for (auto role : {ComponentRole::VisionEncoder, ComponentRole::Adapter}) {
                for (const auto& name : components.names_with(role)) {
                    auto it = lvlm.tensors.find(name);
                    if (it == lvlm.tensors.end()) {
                        problems.push_back(fmt::format("{} not found in the LVLM", name));
                    } else if (!(it->second == ckpt.at(name))) {
                        problems.push_back(fmt::format("{} differs from the LVLM", name));
                    }
                }
            }
        }
    }

    std::map<std::string, std::size_t> role_counts;
    for (auto r : kAllRoles) {
        role_counts[std::string(role_name(r))] = 0;
    }
    for (const auto& [name, role] : components.assignments) {
        ++role_counts[std::string(role_name(role))];
    }

    if (a.json) {
        ordered_json j;
        j["path"] = a.checkpoint;
        j["kind"] = a.kind;
        auto tensors = ordered_json::array();
        for (const auto& [name, t] : ckpt.tensors) {
            ordered_json tj;
            tj["name"] = name;
            tj["dtype"] = std::string(dtype_name(t.dtype));
            tj["shape"] = t.shape;
            tj["bytes"] = t.data.size();
            tj["role"] = role_of(name);
            tensors.push_back(tj);
        }
        j["tensors"] = tensors;
        ordered_json roles;
        for (auto r : kAllRoles) {
            roles[std::string(role_name(r))] = role_counts[std::string(role_name(r))];
        }
        j["roles"] = roles;
        j["unmatched"] = unmatched;
        j["metadata"] = ckpt.metadata;
        j["vocab_size"] = ckpt.vocab ? ordered_json(ckpt.vocab->size()) : ordered_json(nullptr);
        j["problems"] = problems;
        j["ok"] = problems.empty();
        out << j.dump(2) << "\n";
    } else {
        std::size_t w_name = 4, w_shape = 5;
        for (const auto& [name, t] : ckpt.tensors) {
            w_name = std::max(w_name, name.size());
            w_shape = std::max(w_shape, shape_to_string(t.shape).size());
        }
        fmt::print(out, "{:<{}}  {:<5}  {:<{}}  {:>10}  {}\n", "name", w_name, "dtype", "shape", w_shape, "bytes",
                   "role");
        std::size_t total = 0;
        for (const auto& [name, t] : ckpt.tensors) {
            fmt::print(out, "{:<{}}  {:<5}  {:<{}}  {:>10}  {}\n", name, w_name, dtype_name(t.dtype),
                       shape_to_string(t.shape), w_shape, t.data.size(), role_of(name));
            total += t.data.size();
        }
        fmt::print(out, "\n{} tensors, {} bytes\n", ckpt.tensors.size(), total);
        fmt::print(out, "\ncomponents ({} rules):\n", a.kind);
        for (auto r : kAllRoles) {
            const auto n = role_counts[std::string(role_name(r))];
            fmt::print(out, "  {:<15} {}\n", role_name(r), n == 0 ? std::string("absent") : std::to_string(n));
        }
        if (ckpt.vocab) {
            fmt::print(out, "\nvocab: {} tokens\n", ckpt.vocab->size());
        }
        if (!ckpt.metadata.empty()) {
            fmt::print(out, "\nmetadata:\n");
            for (const auto& [k, v] : ckpt.metadata) {
                fmt::print(out, "  {} = {}\n", k, v);
            }
        }
        fmt::print(out, "\nstructure: {}\n", problems.empty() ? "ok" : "FAILED");
        for (const auto& p : problems) {
            fmt::print(out, "  - {}\n", p);
        }
    }
    for (const auto& p : problems) {
        fmt::print(err, "inspect: {}\n", p);
    }
    return problems.empty() ? kExitOk : kExitFailure;
}

int cmd_make_toy(const ToyArgs& a, std::ostream& out, std::ostream& err) {
    {
        ordered_json j;
        j["out_dir"] = a.out_dir;
        j["seed"] = a.seed;
        j["eval_pairs"] = a.eval_pairs;
        j["validation_pairs"] = a.validation_pairs;
        j["bon_instances"] = a.bon_instances;
        j["n"] = a.n;
        echo_config(err, "make-toy", j);
    }
    const fs::path dir = a.out_dir;
    fs::create_directories(dir);
    ToyOptions opts;
    opts.seed = a.seed;
    const auto toy = make_toy_triple(opts);
    auto emit = [&](const char* label, const Checkpoint& c) {
        write_checkpoint(c, dir / fmt::format("{}.safetensors", label));
        write_vocab(*c.vocab, dir / fmt::format("{}.vocab", label));
        std::size_t params = 0;
        for (const auto& [name, t] : c.tensors) params += t.numel();
        fmt::print(out, "{}: {} tensors, {} parameters\n", label, c.tensors.size(), params);
    };
    emit("pre", toy.pre);
    emit("lvlm", toy.lvlm);
    emit("rm", toy.rm);
    auto write_text = [&](const char* name, const std::string& text) {
        write_file_bytes(dir / name, std::as_bytes(std::span(text.data(), text.size())));
        fmt::print(out, "wrote {}\n", (dir / name).string());
    };
    write_text("eval_pairwise.jsonl",
               pairwise_to_jsonl(make_toy_pairwise(a.eval_pairs, {"general", "hallucination", "reasoning"},
                                                   a.seed + 1)));
    write_text("validation.jsonl", pairwise_to_jsonl(make_toy_pairwise(a.validation_pairs, {"rlaif-v"}, a.seed + 2)));
    write_text("eval_bon.jsonl", bon_to_jsonl(make_toy_bon(a.bon_instances, a.n, a.seed + 3)));
    write_text("sweep_ties.json", "{\n  \"method\": \"ties\",\n  \"validation_set\": \"validation.jsonl\"\n}\n");
    return kExitOk;
}

int cmd_stub_scorer(const StubArgs& a, std::istream& in, std::ostream& out, std::ostream& err) {
    StubMode mode;
    if (a.mode == "hash") {
        mode = StubMode::Hash;
    } else if (a.mode == "length") {
        mode = StubMode::Length;
    } else {
        throw UsageError(fmt::format("--mode must be hash or length, got '{}'", a.mode));
    }
    const std::uint64_t salt = mode == StubMode::Hash ? stub_model_salt(a.model) : 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        ScoreRequest r;
        try {
            const auto j = nlohmann::json::parse(line);
            r.id = j.at("id").get<std::string>();
            r.instruction = j.value("instruction", std::string{});
            r.response = j.value("response", std::string{});
        } catch (const nlohmann::json::exception& e) {
            fmt::print(err, "stub-scorer: line {}: {}\n", line_no, e.what());
            return kExitFailure;
        }
        nlohmann::json reply = {{"id", r.id}, {"reward", stub_reward(r, salt, mode)}};
        out << reply.dump() << '\n' << std::flush;
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Build vision-language reward models by merging checkpoints", "vlmerge"};
    app.set_version_flag("--version", std::string(VLMERGE_VERSION));
    app.require_subcommand(1);

    MergeArgs merge_args;
    auto* merge = app.add_subcommand("merge", "merge a (base, LVLM, RM) triple into a reward model");
    add_triple_options(merge, merge_args.triple);
    merge->add_option("--method", merge_args.recipe.method, "linear | task-arithmetic | ties | dare-ta | dare-ties")
        ->required();
    merge->add_option("--lambda", merge_args.recipe.lambda, "merge weight")->required();
    merge_args.recipe.density_opt = merge->add_option("--density", merge_args.recipe.density, "kept fraction d");
    merge_args.recipe.seed_opt = merge->add_option("--seed", merge_args.recipe.seed, "DARE seed");
    merge->add_option("--out", merge_args.out, "output checkpoint")->required();
    merge->add_option("--out-vocab", merge_args.out_vocab, "output vocab sidecar");
    merge->add_option("--jobs", merge_args.jobs, "worker threads (0 = all cores)")->capture_default_str();

    SweepArgs sweep_args;
    auto* sweep = app.add_subcommand("sweep", "grid-search a merge method on a validation set");
    add_triple_options(sweep, sweep_args.triple);
    add_scorer_options(sweep, sweep_args.scorer);
    sweep->add_option("--config", sweep_args.config, "sweep config file");
    sweep->add_option("--method", sweep_args.method, "sweep this method with default grids");
    sweep->add_option("--validation-set", sweep_args.validation_set, "pairwise validation file");
    sweep->add_option("--out-dir", sweep_args.out_dir, "directory for merged variants")->capture_default_str();
    sweep->add_option("--run-manifest", sweep_args.run_manifest, "run manifest path (default: <out-dir>/run.jsonl)");
    sweep->add_option("--jobs", sweep_args.jobs, "recipes in flight (0 = all cores)")->capture_default_str();

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "score an eval file with a reward model");
    eval->add_option("--mode", eval_args.mode, "pairwise | bon")->required();
    eval->add_option("--input", eval_args.input, "eval records")->required();
    eval->add_option("--model", eval_args.model, "model checkpoint handed to the scorer")->required();
    eval->add_option("--model-key", eval_args.model_key, "transcript key (default: model file SHA-256)");
    add_scorer_options(eval, eval_args.scorer);
    eval->add_option("--n", eval_args.n, "candidates per best-of-n instance")->capture_default_str();
    eval->add_flag("--json", eval_args.json, "machine-readable report");
    eval->add_option("--out", eval_args.out, "write the report here instead of stdout");

    InspectArgs inspect_args;
    auto* inspect = app.add_subcommand("inspect", "show tensors, components and metadata of a checkpoint");
    inspect->add_option("checkpoint", inspect_args.checkpoint, "checkpoint file")->required();
    inspect->add_option("--vocab", inspect_args.vocab, "vocab sidecar");
    inspect->add_option("--kind", inspect_args.kind, "pre | lvlm | rm | merged")->capture_default_str();
    inspect->add_option("--manifest", inspect_args.manifest, "component manifest config");
    inspect->add_option("--lvlm", inspect_args.lvlm, "LVLM to compare vision/adapter tensors against");
    inspect->add_flag("--json", inspect_args.json, "machine-readable output");

    ToyArgs toy_args;
    auto* toy = app.add_subcommand("make-toy", "write a small synthetic triple and eval files");
    toy->add_option("--out-dir", toy_args.out_dir, "output directory")->capture_default_str();
    toy->add_option("--seed", toy_args.seed, "generator seed")->capture_default_str();
    toy->add_option("--eval-pairs", toy_args.eval_pairs, "pairwise eval records")->capture_default_str();
    toy->add_option("--validation-pairs", toy_args.validation_pairs, "validation records")->capture_default_str();
    toy->add_option("--bon-instances", toy_args.bon_instances, "best-of-n instances")->capture_default_str();
    toy->add_option("--n", toy_args.n, "candidates per best-of-n instance")->capture_default_str();

    StubArgs stub_args;
    auto* stub = app.add_subcommand("stub-scorer", "deterministic scorer speaking the scorer protocol on stdin/stdout");
    stub->add_option("--model", stub_args.model, "model checkpoint (salts the rewards)");
    stub->add_option("--mode", stub_args.mode, "hash | length")->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (merge->parsed()) return cmd_merge(merge_args, out, err);
        if (sweep->parsed()) return cmd_sweep(sweep_args, out, err);
        if (eval->parsed()) return cmd_eval(eval_args, out, err);
        if (inspect->parsed()) return cmd_inspect(inspect_args, out, err);
        if (toy->parsed()) return cmd_make_toy(toy_args, out, err);
        if (stub->parsed()) {
            if (stub_args.mode == "hash" && stub_args.model.empty()) {
                throw UsageError("--model is required in hash mode");
            }
            return cmd_stub_scorer(stub_args, std::cin, out, err);
        }
    } catch (const UsageError& e) {
        fmt::print(err, "usage error: {}\n", e.what());
        return kExitUsage;
    } catch (const AssemblyError& e) {
        fmt::print(err, "error: triple is not mergeable\n{}\n", e.report().to_string());
        return kExitFailure;
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace vlmerge::cli
