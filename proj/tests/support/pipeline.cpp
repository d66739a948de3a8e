#include "pipeline.hpp"

#include "cli.hpp"
#include "test_data.hpp"

#include <sstream>

#include <fmt/format.h>

namespace testdata {

namespace fs = std::filesystem;

CliResult run_cli(const std::vector<std::string>& args) {
    std::ostringstream out;
    std::ostringstream err;
    CliResult r;
    r.code = vlmerge::cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

namespace {

struct Merge {
    std::string method;
    std::vector<std::string> flags;
};

}  // namespace

PipelineResult run_toy_pipeline(const fs::path& dir, const std::string& bin) {
    PipelineResult res;
    const auto toy = dir / "toy";
    const std::string scorer = fmt::format("'{}' stub-scorer --model {{model}} 2>/dev/null", bin);

    auto step = [&](const std::string& label, const std::vector<std::string>& args) {
        if (!res.failure.empty()) return false;
        res.steps.push_back(label);
        auto r = run_cli(args);
        const bool ok = r.code == 0;
        if (!ok) {
            res.failure = fmt::format("{} exited {}: {}", label, r.code, r.err);
        }
        res.outputs[label] = std::move(r);
        return ok;
    };

    step("make-toy", {"make-toy", "--out-dir", toy.string()});

    const std::vector<Merge> merges = {
        {"linear", {"--lambda", "0.5"}},
        {"task-arithmetic", {"--lambda", "0.7"}},
        {"ties", {"--lambda", "0.7", "--density", "0.4"}},
        {"dare-ta", {"--lambda", "0.7", "--density", "0.4", "--seed", "7"}},
        {"dare-ties", {"--lambda", "0.7", "--density", "0.4", "--seed", "7"}},
    };
    for (const auto& m : merges) {
        const auto out = dir / fmt::format("merged-{}.safetensors", m.method);
        std::vector<std::string> args = {"merge",
                                         "--pre", (toy / "pre.safetensors").string(),
                                         "--lvlm", (toy / "lvlm.safetensors").string(),
                                         "--rm", (toy / "rm.safetensors").string(),
                                         "--pre-vocab", (toy / "pre.vocab").string(),
                                         "--lvlm-vocab", (toy / "lvlm.vocab").string(),
                                         "--rm-vocab", (toy / "rm.vocab").string(),
                                         "--method", m.method,
                                         "--out", out.string(),
                                         "--jobs", "2"};
        args.insert(args.end(), m.flags.begin(), m.flags.end());
        step("merge " + m.method, args);
        step("inspect " + m.method, {"inspect", out.string(), "--vocab", fs::path(out).replace_extension(".vocab").string(),
                                     "--lvlm", (toy / "lvlm.safetensors").string(), "--json"});
    }

    step("sweep ties", {"sweep", "--config", (toy / "sweep_ties.json").string(),
                        "--pre", (toy / "pre.safetensors").string(),
                        "--lvlm", (toy / "lvlm.safetensors").string(),
                        "--rm", (toy / "rm.safetensors").string(),
                        "--pre-vocab", (toy / "pre.vocab").string(),
                        "--lvlm-vocab", (toy / "lvlm.vocab").string(),
                        "--rm-vocab", (toy / "rm.vocab").string(),
                        "--scorer", scorer,
                        "--record", (dir / "sweep-transcript.jsonl").string(),
                        "--out-dir", (dir / "sweep").string(),
                        "--jobs", "2"});

    const auto model = (dir / "merged-dare-ties.safetensors").string();
    step("eval pairwise", {"eval", "--mode", "pairwise", "--input", (toy / "eval_pairwise.jsonl").string(),
                           "--model", model, "--scorer", scorer, "--out", (dir / "eval_pairwise.txt").string()});
    step("eval bon", {"eval", "--mode", "bon", "--input", (toy / "eval_bon.jsonl").string(), "--model", model,
                      "--scorer", scorer, "--out", (dir / "eval_bon.txt").string()});
    res.ok = res.failure.empty();
    return res;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            out[fs::relative(e.path(), dir).string()] = read_text(e.path());
        }
    }
    return out;
}

}  // namespace testdata
