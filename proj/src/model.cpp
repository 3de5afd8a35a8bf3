#include "trajstack/model.hpp"

#include "trajstack/error.hpp"
#include "trajstack/traj_continuous.hpp"
#include "trajstack/traj_discrete.hpp"

#include <algorithm>
#include <mutex>
#include <sstream>

namespace trajstack::model {
namespace {

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "model", op, what);
}

bayes::StudentT1 marginal_of(const bayes::StudentT& t, Index i) { return bayes::marginal(t, i); }

class DiscreteModel final : public Fitted {
 public:
  DiscreteModel(const Candidate& c, const TrajectoryDataset& data, const std::vector<bool>& train,
                const Priors& priors)
      : candidate_(c), priors_(priors) {
    discrete::DiscreteTrajSpec spec;
    spec.delta_beta = c.delta_beta;
    spec.delta_z = c.delta_z;
    spec.kernel = kernels::Matern{c.phi, c.nu};
    spec.spatial = c.family == Family::Discrete;
    spec.a_sigma = priors.a_sigma;
    spec.b_sigma = priors.b_sigma;
    spec.nig = priors.nig;

    Index last = -1;
    for (Index i = 0; i < data.size(); ++i) {
      if (data.observed(i) && (train.empty() || train[static_cast<std::size_t>(i)])) last = i;
    }
    if (last < 0) fail(ErrorKind::EmptyData, "fit", "no training rows");
    std::vector<Index> prefix(static_cast<std::size_t>(last + 1));
    for (Index i = 0; i <= last; ++i) prefix[static_cast<std::size_t>(i)] = i;
    data_ = data;
    const TrajectoryDataset head = data.subset(prefix);
    std::vector<bool> mask;
    if (!train.empty()) mask.assign(train.begin(), train.begin() + last + 1);

    built_ = discrete::build_system_discrete(head, spec, mask);
    fit_.posterior = bayes::nig_posterior(built_.system, spec.a_sigma, spec.b_sigma, spec.nig);
    fit_.spec = spec;
    fit_.layout = built_.layout;
    fit_.locations = built_.locations;
    fit_.spatial = built_.spatial;
    fit_.observed_epochs = built_.observed_epochs;
  }

  const Candidate& candidate() const override { return candidate_; }
  const bayes::NigPosterior& posterior() const override { return fit_.posterior; }

  double log_evidence() const override {
    std::call_once(evidence_once_, [&] {
      evidence_ = bayes::log_marginal_likelihood(built_.system, priors_.a_sigma, priors_.b_sigma);
    });
    return evidence_;
  }

  std::vector<RowLaw> predict(const std::vector<Index>& rows) const override {
    std::vector<RowLaw> out;
    out.reserve(rows.size());
    const Index last = fit_.layout.T - 1;
    for (Index r : rows) {
      if (r < 0 || r >= data_.size()) fail(ErrorKind::InputValidation, "predict", "row out of range");
      const VectorXd x = data_.x.row(r).transpose();
      const discrete::EpochPrediction e =
          r <= last ? discrete::predict_epoch(fit_, x, r)
                    : discrete::predict_next_discrete(fit_, x, data_.s[static_cast<std::size_t>(r)], r - last);
      out.push_back({e.y, e.z, e.beta.loc});
    }
    return out;
  }

  const std::vector<Index>& training_rows() const override { return fit_.observed_epochs; }

  bayes::SparseRowMatrix observation_operator() const override {
    return built_.system.X.topRows(built_.system.n_obs);
  }

  VectorXd training_response() const override { return built_.system.Y.head(built_.system.n_obs); }

 private:
  Candidate candidate_;
  Priors priors_;
  TrajectoryDataset data_;
  discrete::DiscreteSystem built_;
  discrete::DiscreteFit fit_;
  mutable std::once_flag evidence_once_;
  mutable double evidence_ = 0.0;
};

class ContinuousModel final : public Fitted {
 public:
  ContinuousModel(const Candidate& c, const TrajectoryDataset& data, const std::vector<bool>& train,
                  const Priors& priors)
      : candidate_(c), data_(data) {
    continuous::ContinuousTrajSpec spec;
    spec.delta_beta = c.delta_beta;
    spec.delta_z = c.delta_z;
    spec.phi1 = c.phi1;
    spec.phi2 = c.phi2;
    spec.xi = c.xi;
    spec.a_sigma = priors.a_sigma;
    spec.b_sigma = priors.b_sigma;
    spec.nig = priors.nig;
    rows_ = continuous::training_rows(data, train);
    fit_ = continuous::fit_continuous(data, spec, train);
  }

  const Candidate& candidate() const override { return candidate_; }
  const bayes::NigPosterior& posterior() const override { return fit_.posterior; }
  double log_evidence() const override { return fit_.log_evidence; }

  std::vector<RowLaw> predict(const std::vector<Index>& rows) const override {
    std::vector<SpaceTimePoint> pts;
    MatrixXd x0(static_cast<Index>(rows.size()), data_.covariates());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const Index r = rows[k];
      if (r < 0 || r >= data_.size()) fail(ErrorKind::InputValidation, "predict", "row out of range");
      pts.push_back(data_.point(r));
      x0.row(static_cast<Index>(k)) = data_.x.row(r);
    }
    const continuous::ContinuousPrediction pr = continuous::predict_points_continuous(fit_, pts, x0);
    std::vector<RowLaw> out;
    out.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto i = static_cast<Index>(k);
      RowLaw law{marginal_of(pr.y, i), marginal_of(pr.z, i), VectorXd(data_.covariates())};
      for (Index j = 0; j < data_.covariates(); ++j) law.beta(j) = pr.beta[static_cast<std::size_t>(j)].loc(i);
      out.push_back(std::move(law));
    }
    return out;
  }

  const std::vector<Index>& training_rows() const override { return rows_; }

  bayes::SparseRowMatrix observation_operator() const override {
    const continuous::ContinuousLayout& lay = fit_.layout;
    bayes::SparseRowMatrix u(lay.n, lay.dim());
    std::vector<Eigen::Triplet<double>> trips;
    for (Index i = 0; i < lay.n; ++i) {
      for (Index j = 0; j < lay.p; ++j) trips.emplace_back(i, lay.beta_col(j, i), fit_.x(i, j));
      trips.emplace_back(i, lay.z_col(i), 1.0);
    }
    u.setFromTriplets(trips.begin(), trips.end());
    return u;
  }

  VectorXd training_response() const override { return fit_.y; }

 private:
  Candidate candidate_;
  TrajectoryDataset data_;
  std::vector<Index> rows_;
  continuous::ContinuousFit fit_;
};

template <class F>
void product(const std::vector<std::vector<double>>& axes, std::vector<double>& cur, F&& emit) {
  if (cur.size() == axes.size()) {
    emit(cur);
    return;
  }
  for (double v : axes[cur.size()]) {
    cur.push_back(v);
    product(axes, cur, emit);
    cur.pop_back();
  }
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::Discrete: return "discrete";
    case Family::Continuous: return "continuous";
    case Family::Nsdlm: return "nsdlm";
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  if (s == "discrete") return Family::Discrete;
  if (s == "continuous") return Family::Continuous;
  if (s == "nsdlm") return Family::Nsdlm;
  throw Error(ErrorKind::Configuration, "model", "family_from_string", "unknown model family '" + s + "'");
}

std::string Candidate::describe() const {
  std::ostringstream os;
  os << to_string(family) << "(delta_beta=" << delta_beta;
  switch (family) {
    case Family::Discrete: os << ", delta_z=" << delta_z << ", phi=" << phi << ", nu=" << nu; break;
    case Family::Continuous:
      os << ", delta_z=" << delta_z << ", phi1=" << phi1 << ", phi2=" << phi2 << ", xi=" << xi;
      break;
    case Family::Nsdlm: break;
  }
  os << ")";
  return os.str();
}

std::vector<Candidate> discrete_grid(const std::vector<double>& phi, const std::vector<double>& nu,
                                     const std::vector<double>& delta_beta, const std::vector<double>& delta_z) {
  std::vector<Candidate> out;
  std::vector<double> cur;
  product({phi, nu, delta_beta, delta_z}, cur, [&](const std::vector<double>& v) {
    Candidate c;
    c.family = Family::Discrete;
    c.phi = v[0];
    c.nu = v[1];
    c.delta_beta = v[2];
    c.delta_z = v[3];
    out.push_back(c);
  });
  return out;
}

std::vector<Candidate> continuous_grid(const std::vector<double>& phi1, const std::vector<double>& phi2,
                                       const std::vector<double>& xi, const std::vector<double>& delta_beta,
                                       const std::vector<double>& delta_z) {
  std::vector<Candidate> out;
  std::vector<double> cur;
  product({phi1, phi2, xi, delta_beta, delta_z}, cur, [&](const std::vector<double>& v) {
    Candidate c;
    c.family = Family::Continuous;
    c.phi1 = v[0];
    c.phi2 = v[1];
    c.xi = v[2];
    c.delta_beta = v[3];
    c.delta_z = v[4];
    out.push_back(c);
  });
  return out;
}

std::vector<Candidate> nsdlm_grid(const std::vector<double>& delta_beta) {
  std::vector<Candidate> out;
  for (double d : delta_beta) {
    Candidate c;
    c.family = Family::Nsdlm;
    c.delta_beta = d;
    out.push_back(c);
  }
  return out;
}

std::shared_ptr<Fitted> fit(const Candidate& candidate, const TrajectoryDataset& data, const std::vector<bool>& train,
                            const Priors& priors) {
  if (!train.empty() && static_cast<Index>(train.size()) != data.size()) {
    fail(ErrorKind::InputValidation, "fit", "training mask length differs from the data");
  }
  switch (candidate.family) {
    case Family::Discrete:
    case Family::Nsdlm: return std::make_shared<DiscreteModel>(candidate, data, train, priors);
    case Family::Continuous: return std::make_shared<ContinuousModel>(candidate, data, train, priors);
  }
  fail(ErrorKind::Configuration, "fit", "unknown model family");
}

}  // namespace trajstack::model
