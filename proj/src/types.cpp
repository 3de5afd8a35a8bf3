#include "trajstack/types.hpp"

#include "trajstack/error.hpp"

namespace trajstack {

void TrajectoryDataset::validate() const {
  const auto n = static_cast<std::size_t>(t.size());
  if (s.size() != n || static_cast<std::size_t>(y.size()) != n ||
      static_cast<std::size_t>(x.rows()) != n) {
    throw Error(ErrorKind::InputValidation, "data", "validate",
                "dataset columns have inconsistent lengths");
  }
  if (!covariate_names.empty() && static_cast<Index>(covariate_names.size()) != x.cols()) {
    throw Error(ErrorKind::InputValidation, "data", "validate",
                "covariate names do not match covariate columns");
  }
}

TrajectoryDataset TrajectoryDataset::subset(const std::vector<Index>& rows) const {
  TrajectoryDataset out;
  const auto m = static_cast<Index>(rows.size());
  out.t.resize(m);
  out.y.resize(m);
  out.x.resize(m, x.cols());
  out.s.reserve(rows.size());
  out.covariate_names = covariate_names;
  for (Index k = 0; k < m; ++k) {
    const Index i = rows[static_cast<std::size_t>(k)];
    out.t(k) = t(i);
    out.y(k) = y(i);
    out.x.row(k) = x.row(i);
    out.s.push_back(s[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace trajstack
