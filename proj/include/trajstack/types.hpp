#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

namespace trajstack {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// A location visited at a time; kernels that ignore one coordinate simply
/// read the other.
struct SpaceTimePoint {
  double t = 0.0;
  Point2 s;

  friend bool operator==(const SpaceTimePoint&, const SpaceTimePoint&) = default;
};

/// Observations of one subject along a trajectory. Row i is the i-th time
/// stamp; a NaN response marks a row to be predicted rather than fitted.
struct TrajectoryDataset {
  VectorXd t;
  std::vector<Point2> s;
  VectorXd y;
  MatrixXd x;  // rows × covariates
  std::vector<std::string> covariate_names;

  Index size() const { return t.size(); }
  Index covariates() const { return x.cols(); }
  bool observed(Index i) const { return !std::isnan(y(i)); }
  SpaceTimePoint point(Index i) const { return {t(i), s[static_cast<std::size_t>(i)]}; }

  /// Throws InputValidation if the columns disagree in length.
  void validate() const;

  /// Rows selected in order; covariate names are kept.
  TrajectoryDataset subset(const std::vector<Index>& rows) const;
};

}  // namespace trajstack
