#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"

namespace testing_support {

using namespace prevalshift;

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

inline Schema binary_schema() { return Schema{{FeatureDecl{"X", FeatureKind::Categorical, {"0", "1"}}}}; }

inline Row scored(CategoryId x, std::optional<int> y, double s, double w = 1.0) {
  return Row{FeatureVector({{0, x}}, {}), y, s, w};
}

/// Rows with an exact count of positives per stratum: `n0` rows of X=0 with
/// `pos0` positives scored `s0`, and likewise for X=1.
inline Dataset exact_strata(int n0, int pos0, double s0, int n1, int pos1, double s1) {
  std::vector<Row> rows;
  for (int i = 0; i < n0; ++i) rows.push_back(scored(0, i < pos0 ? 1 : 0, s0));
  for (int i = 0; i < n1; ++i) rows.push_back(scored(1, i < pos1 ? 1 : 0, s1));
  return Dataset(binary_schema(), std::move(rows));
}

}  // namespace testing_support
