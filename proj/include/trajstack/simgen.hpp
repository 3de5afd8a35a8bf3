#pragma once

#include "trajstack/types.hpp"

#include <cstdint>
#include <vector>

namespace trajstack::simgen {

/// gamma(t) = gamma(t-1) + N(0, I_2) from the origin; point t is after t increments.
std::vector<Point2> random_walk_trajectory(Index T, std::uint64_t seed);

/// True values behind a simulated dataset, one row per dataset row.
struct Truth {
  MatrixXd beta;   // rows × p
  VectorXd z;      // latent process at each row's point
  VectorXd signal; // x' beta + z
  double sigma = 1.0;
};

struct Simulated {
  TrajectoryDataset data;  // rows in time order, every response observed
  Truth truth;
  std::vector<Index> train;     // rows used for fitting
  std::vector<Index> held_out;  // rows kept back for prediction
  std::vector<std::string> notes;

  std::vector<bool> train_mask() const;
};

/// Points subsampled from one random-walk path of `path_length` unit time
/// steps, with a space-time Gneiting process, squared-exponential coefficient
/// processes and N(0, x_sd^2) covariates drawn over the whole path.
struct ContinuousSimConfig {
  Index path_length = 300;
  Index n_train = 100;
  Index n_held_out = 100;
  Index p = 2;
  double sigma = 1.0;
  double delta_beta = 1.0;
  double delta_z = 1.0;
  double phi1 = 0.5;
  double phi2 = 0.5;
  double xi = 0.5;
  double x_sd = 2.0;
  std::uint64_t seed = 1;
  /// Fixed locations at times 1..path_length; empty draws a random walk.
  std::vector<Point2> path;
};

/// Held-out rows are disjoint from training rows. Draws are made over the
/// full path first, so for a fixed seed a larger n_train only adds rows and
/// the held-out set does not change.
Simulated simulate_continuous(const ContinuousSimConfig& config);

/// One point per epoch on a random walk, with random-walk coefficients and a
/// random-walk Matérn field over the visited locations.
struct DiscreteSimConfig {
  Index T = 50;
  Index p = 2;
  double sigma = 1.0;
  double delta_beta = 1.0;
  double delta_z = 1.0;
  double phi = 1.0 / 7.0;
  double nu = 1.0;
  double init_sd = 2.0;
  double x_sd = 2.0;
  std::uint64_t seed = 1;
};

/// All T epochs are training rows.
Simulated simulate_discrete(const DiscreteSimConfig& config);

/// A spatial panel for the dynamic linear model: n uniform locations on the
/// unit square observed at every epoch, identity evolution scaled by alpha
/// for the latent field. Responses at the new locations need p = 0, since
/// covariates are only drawn for observed locations.
struct DlmSimConfig {
  Index n = 50;
  Index T = 20;
  Index p = 2;
  double sigma = 1.0;
  double delta_beta = 1.0;
  double delta_z = 1.0;
  double phi = 1.0 / 7.0;
  double nu = 1.0;
  double alpha = 1.0;
  double init_sd = 2.0;
  double x_sd = 2.0;
  std::uint64_t seed = 1;
  /// Extra unobserved locations carried through the same field evolution.
  Index n_new = 0;
  /// false: z_0 has iid N(0, init_sd^2) entries; true: z_0 ~ N(0, init_sd^2 K).
  bool correlated_initial = false;
};

struct DlmPanel {
  std::vector<Point2> locations;
  std::vector<Point2> new_locations;
  std::vector<VectorXd> y_new;  // per epoch, n_new; p = 0 only
  std::vector<VectorXd> z_new;
  std::vector<VectorXd> y;     // per epoch, n
  std::vector<MatrixXd> x;     // per epoch, n × p
  std::vector<VectorXd> beta;  // per epoch, p
  std::vector<VectorXd> z;     // per epoch, n
};

DlmPanel simulate_dlm(const DlmSimConfig& config);

/// Uniform points on the unit square from stream `name` of `seed`.
std::vector<Point2> uniform_locations(Index n, std::uint64_t seed, const char* name = "locations");

}  // namespace trajstack::simgen
