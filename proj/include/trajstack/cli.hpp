#pragma once

#include "trajstack/diagnostics.hpp"
#include "trajstack/io.hpp"
#include "trajstack/model.hpp"
#include "trajstack/simgen.hpp"
#include "trajstack/stacking.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace trajstack::cli {

struct SimulateSection {
  std::string process = "continuous";  // continuous | discrete
  simgen::ContinuousSimConfig continuous;
  simgen::DiscreteSimConfig discrete;
};

struct DataSection {
  std::filesystem::path csv;
  std::optional<std::vector<std::string>> covariates;
};

struct StackingSection {
  stacking::Mode mode = stacking::Mode::Distributions;
  stacking::Scheme scheme = stacking::Scheme::RandomKFold;
  Index folds = 20;
};

struct VarianceTermSection {
  std::vector<Index> n_list{50, 200, 800, 1600};
  Index draws = 10;
  double phi = 0.5;
  double nu = 1.0;
  std::vector<Index> epochs{2, 20};
  double alpha = 1.0;
  double delta_z = 1.0;
  double sigma = 1.0;
};

struct DiagnoseSection {
  std::string check = "variance_term";  // variance_term | concentration | stacking_limit
  VarianceTermSection variance;
  diagnostics::ConcentrationConfig concentration;
  diagnostics::StackingLimitConfig stacking_limit;
};

struct MetricsSection {
  std::filesystem::path predictions;
  std::filesystem::path truth;
};

/// The parsed JSON run configuration. Relative paths are resolved against the
/// directory of the configuration file.
struct RunConfig {
  std::uint64_t seed = 1;
  std::optional<SimulateSection> simulate;
  std::optional<DataSection> data;
  std::optional<std::filesystem::path> truth;
  std::vector<model::Candidate> candidates;
  model::Priors priors;
  StackingSection stacking;
  std::optional<std::filesystem::path> weights_from;
  std::optional<MetricsSection> metrics;
  std::optional<DiagnoseSection> diagnose;
};

/// Throws Configuration on unknown keys, wrong types or invalid values, and
/// Parse on malformed JSON.
RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = ".");
RunConfig load_config(const std::filesystem::path& path);

/// Truth table rows for a simulated dataset.
io::Table truth_table(const simgen::Simulated& sim);

/// Per-row predictive summaries from a (possibly single-candidate) stack.
/// When `truth` is given the log density of each row's true response is added.
io::Table prediction_table(const TrajectoryDataset& data, const stacking::StackingRun& run,
                           const io::Table* truth = nullptr);

/// Metrics from emitted prediction and truth tables, matched on t: MSPE,
/// MSE z, MLPD and interval coverage on held-out rows; MSE y and relative
/// coefficient errors on training rows.
io::Table compute_metrics(const io::Table& predictions, const io::Table& truth);

/// Entry point of the command-line tool; returns the process exit status.
int run(int argc, const char* const* argv);

}  // namespace trajstack::cli
