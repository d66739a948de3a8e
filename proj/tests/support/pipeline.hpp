#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace testdata {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

// Runs the CLI in-process.
CliResult run_cli(const std::vector<std::string>& args);

struct PipelineResult {
    bool ok = false;
    std::string failure;  // first step that went wrong
    std::vector<std::string> steps;
    std::map<std::string, CliResult> outputs;  // by step label
};

// Toy triple -> five merges -> inspect each -> ties sweep with the stub scorer
// -> pairwise and best-of-n eval, all inside `dir`. `bin` is the vlmerge
// executable, used as the scorer process.
PipelineResult run_toy_pipeline(const std::filesystem::path& dir, const std::string& bin);

// Relative path -> file bytes for every regular file under `dir`.
std::map<std::string, std::string> snapshot(const std::filesystem::path& dir);

}  // namespace testdata
