#pragma once

#include "vlmerge/manifest.hpp"
#include "vlmerge/merge_core.hpp"

#include <map>
#include <stdexcept>
#include <string>

namespace vlmerge {

class AssemblyError : public std::runtime_error {
public:
    explicit AssemblyError(ValidationReport report);
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

struct AssemblyPlan {
    MergeRecipe recipe;
    const ModelTriple* triple = nullptr;
    // Extra "__metadata__" entries, e.g. input content hashes.
    std::map<std::string, std::string> provenance;
    unsigned jobs = 1;
};

// Metadata keys written by assemble_vlrm.
namespace meta {
inline constexpr const char* kMethod = "vlmerge.method";
inline constexpr const char* kLambda = "vlmerge.lambda";
inline constexpr const char* kDensity = "vlmerge.density";
inline constexpr const char* kSeed = "vlmerge.seed";
inline constexpr const char* kVersion = "vlmerge.version";
inline constexpr const char* kVocab = "vlmerge.vocab";
}  // namespace meta

// Builds the reward model: vision encoder and adapter from the LVLM, merged
// embeddings, merged transformer, reward head from the RM. The LM head is not
// carried over. Merged tensors are stored in the LVLM's dtype.
//
// The returned checkpoint's vocab holds the merged token order whenever the
// inputs came with vocab sidecars.
Checkpoint assemble_vlrm(const AssemblyPlan& plan);

// Recipe fields as they are recorded in checkpoint metadata.
std::map<std::string, std::string> recipe_metadata(const MergeRecipe& recipe);

}  // namespace vlmerge
