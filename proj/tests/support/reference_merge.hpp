#pragma once

#include "oracle.hpp"
#include "test_data.hpp"

#include <map>
#include <string>

namespace testdata {

// Scalar-oracle result for a whole merge case. DARE keep decisions come from
// the library's counter stream; all arithmetic is the oracle's.
std::map<std::string, oracle::Vec> reference_merge(const MergeCase& c, const vlmerge::MergeRecipe& recipe);

// Largest |got - want| / max(1, |want|) over every element.
double max_rel_error(const vlmerge::FloatTensorMap& got, const std::map<std::string, oracle::Vec>& want);

// Every value of `got` bit-equals `want` after rounding both through the
// per-tensor dtype.
bool bit_equal_after_roundtrip(const vlmerge::FloatTensorMap& got, const vlmerge::FloatTensorMap& want,
                               const std::map<std::string, vlmerge::DType>& dtypes);

}  // namespace testdata
