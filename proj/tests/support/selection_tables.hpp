#pragma once

// Validation accuracies (percent) of the published merge grids, one table per
// (method, text RM) pair, with the recipe each table marks as the selected one.

#include "vlmerge/merge_core.hpp"

#include <optional>
#include <string>
#include <vector>

namespace testdata {

struct GridPoint {
    double lambda;
    std::optional<double> density;
    bool operator==(const GridPoint&) const = default;
};

struct SelectionTable {
    std::string label;
    vlmerge::MergeMethod method;
    std::vector<GridPoint> points;  // column order of the table
    std::vector<double> accuracy;   // same order
    GridPoint winner;
    std::vector<GridPoint> tied;  // points sharing the top score, empty if unique
};

inline std::vector<GridPoint> lambda_row() {
    std::vector<GridPoint> out;
    for (int i = 0; i <= 10; ++i) out.push_back({i / 10.0, std::nullopt});
    return out;
}

inline std::vector<GridPoint> lambda_density_row() {
    std::vector<GridPoint> out;
    for (double l : {1.0, 0.7, 0.5}) {
        for (double d : {0.8, 0.6, 0.4, 0.2}) out.push_back({l, d});
    }
    return out;
}

inline std::vector<SelectionTable> selection_tables() {
    using M = vlmerge::MergeMethod;
    return {
        {"linear / tulu-2.5", M::Linear, lambda_row(),
         {49.8, 52.3, 50.3, 52.5, 52.0, 49.0, 47.3, 46.5, 46.5, 50.3, 47.0},
         {0.3, std::nullopt}, {}},
        {"task arithmetic / tulu-2.5", M::TaskArithmetic, lambda_row(),
         {55.3, 50.0, 53.3, 54.5, 53.5, 49.3, 52.8, 54.0, 53.8, 54.8, 55.3},
         {1.0, std::nullopt}, {{0.0, std::nullopt}, {1.0, std::nullopt}}},
        {"ties / tulu-2.5", M::Ties, lambda_density_row(),
         {53.5, 53.8, 52.3, 50.0, 53.5, 53.8, 52.3, 50.3, 53.5, 53.8, 52.3, 50.0},
         {1.0, 0.6}, {{0.5, 0.6}, {0.7, 0.6}, {1.0, 0.6}}},
        {"dare-ta / tulu-2.5", M::DareTaskArithmetic, lambda_density_row(),
         {55.3, 56.5, 54.5, 55.3, 54.5, 54.0, 53.5, 55.8, 49.0, 49.3, 51.8, 54.8},
         {1.0, 0.6}, {}},
        {"dare-ties / tulu-2.5", M::DareTies, lambda_density_row(),
         {55.5, 56.0, 56.0, 55.5, 53.3, 54.3, 53.8, 52.3, 51.5, 49.8, 51.5, 51.8},
         {1.0, 0.6}, {{1.0, 0.6}, {1.0, 0.4}}},
        {"linear / tulu-3", M::Linear, lambda_row(),
         {51.5, 46.8, 50.3, 49.3, 52.0, 50.8, 49.3, 47.3, 49.5, 49.3, 51.3},
         {0.4, std::nullopt}, {}},
        {"task arithmetic / tulu-3", M::TaskArithmetic, lambda_row(),
         {49.3, 53.5, 49.8, 49.8, 51.0, 51.0, 53.8, 53.0, 53.0, 50.3, 55.3},
         {1.0, std::nullopt}, {}},
        {"ties / tulu-3", M::Ties, lambda_density_row(),
         {53.5, 53.3, 54.0, 51.0, 53.8, 54.3, 54.3, 51.5, 53.5, 53.3, 54.0, 51.0},
         {0.7, 0.4}, {{0.7, 0.6}, {0.7, 0.4}}},
        {"dare-ta / tulu-3", M::DareTaskArithmetic, lambda_density_row(),
         {54.8, 55.8, 55.3, 58.0, 53.8, 53.8, 52.3, 50.3, 50.0, 50.3, 51.0, 51.5},
         {1.0, 0.2}, {}},
        {"dare-ties / tulu-3", M::DareTies, lambda_density_row(),
         {55.8, 55.8, 56.0, 56.8, 52.8, 52.5, 52.5, 52.3, 55.3, 53.8, 48.0, 54.5},
         {1.0, 0.2}, {}},
    };
}

}  // namespace testdata
