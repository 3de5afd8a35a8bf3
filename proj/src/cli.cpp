#include "trajstack/cli.hpp"

#include "trajstack/error.hpp"
#include "trajstack/metrics.hpp"
#include "trajstack/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <algorithm>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

namespace trajstack::cli {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "cli", op, what);
}

[[noreturn]] void bad_config(const std::string& what) { fail(ErrorKind::Configuration, "parse_config", what); }

/// Typed access to one JSON object; every key must be consumed by a reader
/// or finish() reports it as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad_config(path_ + " must be an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void read(const char* key, T& out) {
    if (!has(key)) return;
    out = convert<T>(at(key), name(key));
  }

  template <class T>
  void read_optional(const char* key, std::optional<T>& out) {
    if (!has(key)) return;
    out = convert<T>(at(key), name(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) bad_config("unknown key '" + name(k.c_str()) + "'");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) bad_config(where + " must be a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, Index> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0 && !v.is_number_unsigned())) {
        bad_config(where + " must be a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) bad_config(where + " must be true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) bad_config(where + " must be a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) bad_config(where + " must be an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

model::Family parse_family(const std::string& s, const std::string& where) {
  try {
    return model::family_from_string(s);
  } catch (const Error&) {
    bad_config(where + ": unknown family '" + s + "' (discrete, continuous, nsdlm)");
  }
}

std::vector<model::Candidate> parse_grid(const json& j, const std::string& where) {
  Section s(j, where);
  std::string fam;
  if (!s.has("family")) bad_config(where + ".family is required");
  fam = Section::convert<std::string>(s.at("family"), s.name("family"));
  const model::Family f = parse_family(fam, s.name("family"));
  const model::Candidate d{};
  auto list = [&](const char* key, double def) {
    std::vector<double> v{def};
    s.read(key, v);
    if (v.empty()) bad_config(s.name(key) + " must not be empty");
    return v;
  };
  std::vector<model::Candidate> out;
  switch (f) {
    case model::Family::Discrete: {
      const auto phi = list("phi", d.phi), nu = list("nu", d.nu), db = list("delta_beta", d.delta_beta),
                 dz = list("delta_z", d.delta_z);
      out = model::discrete_grid(phi, nu, db, dz);
      break;
    }
    case model::Family::Continuous: {
      const auto p1 = list("phi1", d.phi1), p2 = list("phi2", d.phi2), xi = list("xi", d.xi),
                 db = list("delta_beta", d.delta_beta), dz = list("delta_z", d.delta_z);
      out = model::continuous_grid(p1, p2, xi, db, dz);
      break;
    }
    case model::Family::Nsdlm:
      out = model::nsdlm_grid(list("delta_beta", d.delta_beta));
      break;
  }
  s.finish();
  return out;
}

model::Candidate parse_candidate(const json& j, const std::string& where) {
  Section s(j, where);
  model::Candidate c;
  if (!s.has("family")) bad_config(where + ".family is required");
  c.family = parse_family(Section::convert<std::string>(s.at("family"), s.name("family")), s.name("family"));
  s.read("delta_beta", c.delta_beta);
  if (c.family != model::Family::Nsdlm) s.read("delta_z", c.delta_z);
  if (c.family == model::Family::Discrete) {
    s.read("phi", c.phi);
    s.read("nu", c.nu);
  }
  if (c.family == model::Family::Continuous) {
    s.read("phi1", c.phi1);
    s.read("phi2", c.phi2);
    s.read("xi", c.xi);
  }
  s.finish();
  return c;
}

json candidate_json(const model::Candidate& c) {
  json j;
  j["family"] = model::to_string(c.family);
  j["delta_beta"] = c.delta_beta;
  if (c.family != model::Family::Nsdlm) j["delta_z"] = c.delta_z;
  if (c.family == model::Family::Discrete) {
    j["phi"] = c.phi;
    j["nu"] = c.nu;
  }
  if (c.family == model::Family::Continuous) {
    j["phi1"] = c.phi1;
    j["phi2"] = c.phi2;
    j["xi"] = c.xi;
  }
  return j;
}

double num(const json& v) { return v.get<double>(); }

std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Map from t to row index of a table.
std::unordered_map<double, std::size_t> by_t(const io::Table& t) {
  std::unordered_map<double, std::size_t> m;
  const std::size_t c = t.column("t");
  for (std::size_t i = 0; i < t.rows.size(); ++i) m.emplace(t.rows[i][c], i);
  return m;
}

struct Context {
  RunConfig config;
  fs::path out;
  std::vector<std::string> warnings;
};

TrajectoryDataset load_data(Context& ctx) {
  if (!ctx.config.data) bad_config("this command needs a 'data' section");
  io::Ingested in = io::ingest_csv(ctx.config.data->csv, ctx.config.data->covariates);
  for (auto& w : in.warnings) ctx.warnings.push_back(std::move(w));
  return std::move(in.data);
}

std::optional<io::Table> load_truth(const Context& ctx) {
  if (!ctx.config.truth) return std::nullopt;
  return io::read_table(*ctx.config.truth);
}

json sigma2_json(const stacking::StackingRun& run) {
  json j;
  j["mean"] = run.sigma2_mean();
  j["q025"] = run.sigma2_quantile(0.025);
  j["q975"] = run.sigma2_quantile(0.975);
  return j;
}

json run_summary(const std::string& command, const Context& ctx, const stacking::StackingRun& run,
                 const TrajectoryDataset& data) {
  json j;
  j["command"] = command;
  j["seed"] = ctx.config.seed;
  j["rows"] = data.size();
  Index observed = 0;
  for (Index i = 0; i < data.size(); ++i) observed += data.observed(i);
  j["observed_rows"] = observed;
  const VectorXd bma = run.bma();
  json cands = json::array();
  for (std::size_t g = 0; g < run.candidates.size(); ++g) {
    json c = candidate_json(run.candidates[g]);
    c["weight"] = run.weights(static_cast<Index>(g));
    c["bma_weight"] = bma(static_cast<Index>(g));
    if (run.fits[g]) {
      const auto& post = run.fits[g]->posterior();
      c["log_evidence"] = run.fits[g]->log_evidence();
      c["sigma2_mean"] = post.a_star > 1.0 ? json(post.sigma2_mean()) : json(nullptr);
      c["applied_jitter"] = post.jitter;
      c["warnings"] = post.warnings;
    } else {
      c["dropped"] = true;
    }
    cands.push_back(std::move(c));
  }
  j["candidates"] = std::move(cands);
  j["weights"] = std::vector<double>(run.weights.data(), run.weights.data() + run.weights.size());
  j["dropped"] = run.dropped;
  j["objective"] = run.objective;
  j["kkt_residual"] = run.kkt_residual;
  j["sigma2"] = sigma2_json(run);
  std::vector<std::string> warnings = ctx.warnings;
  warnings.insert(warnings.end(), run.warnings.begin(), run.warnings.end());
  j["warnings"] = warnings;
  return j;
}

io::Table weights_table(const stacking::StackingRun& run) {
  io::Table t;
  t.header = {"candidate", "weight", "bma_weight"};
  const VectorXd bma = run.bma();
  for (Index g = 0; g < run.weights.size(); ++g) t.rows.push_back({static_cast<double>(g), run.weights(g), bma(g)});
  return t;
}

void emit_run(const std::string& command, Context& ctx, const stacking::StackingRun& run,
              const TrajectoryDataset& data) {
  const auto truth = load_truth(ctx);
  const std::string pred_csv = io::to_csv(prediction_table(data, run, truth ? &*truth : nullptr));
  io::write_atomic(ctx.out / "predictions.csv", pred_csv);
  const io::Table pred = io::parse_csv(pred_csv, "predictions.csv");
  io::write_table(ctx.out / "weights.csv", weights_table(run));
  json summary = run_summary(command, ctx, run, data);
  if (command == "stack") summary["mode"] = stacking::to_string(ctx.config.stacking.mode);
  if (truth) {
    const io::Table m = compute_metrics(pred, *truth);
    io::write_table(ctx.out / "metrics.csv", m);
    json mj;
    for (std::size_t c = 0; c < m.header.size(); ++c) mj[m.header[c]] = m.rows.front()[c];
    summary["metrics"] = std::move(mj);
  }
  io::write_atomic(ctx.out / "fit_summary.json", dump(summary));
}


std::uint64_t derived_seed(std::uint64_t seed, const char* what, std::uint64_t a, std::uint64_t b = 0) {
  auto rng = CounterRng::stream(seed, what, a * 1000003ULL + b);
  return rng();
}

void cmd_simulate(Context& ctx) {
  if (!ctx.config.simulate) bad_config("simulate needs a 'simulate' section");
  SimulateSection sim = *ctx.config.simulate;
  simgen::Simulated out;
  if (sim.process == "continuous") {
    sim.continuous.seed = ctx.config.seed;
    out = simgen::simulate_continuous(sim.continuous);
  } else {
    sim.discrete.seed = ctx.config.seed;
    out = simgen::simulate_discrete(sim.discrete);
  }
  TrajectoryDataset observed = out.data;
  for (Index r : out.held_out) observed.y(r) = std::numeric_limits<double>::quiet_NaN();
  io::write_dataset(ctx.out / "data.csv", observed);
  io::write_table(ctx.out / "truth.csv", truth_table(out));
  json j;
  j["command"] = "simulate";
  j["process"] = sim.process;
  j["seed"] = ctx.config.seed;
  j["rows"] = out.data.size();
  j["train_rows"] = out.train.size();
  j["held_out_rows"] = out.held_out.size();
  j["notes"] = out.notes;
  io::write_atomic(ctx.out / "simulate_summary.json", dump(j));
}

std::vector<bool> observed_mask(const TrajectoryDataset& data) {
  std::vector<bool> m(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) m[static_cast<std::size_t>(i)] = data.observed(i);
  return m;
}

stacking::StackingRun refit(const std::vector<model::Candidate>& cands, const VectorXd& weights,
                            const TrajectoryDataset& data, const model::Priors& priors) {
  stacking::StackingRun run;
  run.candidates = cands;
  run.weights = weights;
  run.fits.resize(cands.size());
  const auto mask = observed_mask(data);
  for (std::size_t g = 0; g < cands.size(); ++g) {
    if (weights(static_cast<Index>(g)) > 0.0) run.fits[g] = model::fit(cands[g], data, mask, priors);
  }
  return run;
}

void cmd_fit(Context& ctx) {
  if (ctx.config.candidates.size() != 1) {
    bad_config("fit needs exactly one candidate; use stack for a grid (got " +
               std::to_string(ctx.config.candidates.size()) + ")");
  }
  const TrajectoryDataset data = load_data(ctx);
  emit_run("fit", ctx, refit(ctx.config.candidates, VectorXd::Ones(1), data, ctx.config.priors), data);
}

void cmd_stack(Context& ctx) {
  if (ctx.config.candidates.empty()) bad_config("stack needs a 'grid' or 'candidates' section");
  const TrajectoryDataset data = load_data(ctx);
  stacking::FoldPlan plan;
  plan.scheme = ctx.config.stacking.scheme;
  plan.k = ctx.config.stacking.folds;
  plan.seed = ctx.config.seed;
  stacking::StackingOptions opt;
  opt.mode = ctx.config.stacking.mode;
  opt.priors = ctx.config.priors;
  emit_run("stack", ctx, stacking::run_stacking(data, ctx.config.candidates, plan, opt), data);
}

void cmd_predict(Context& ctx) {
  if (!ctx.config.weights_from) bad_config("predict needs 'predict.weights' naming a stack fit_summary.json");
  json summary;
  try {
    summary = json::parse(io::read_file(*ctx.config.weights_from));
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, "predict", ctx.config.weights_from->string() + ": " + e.what());
  }
  if (!summary.contains("candidates") || !summary["candidates"].is_array() || summary["candidates"].empty()) {
    bad_config(ctx.config.weights_from->string() + " has no candidates");
  }
  std::vector<model::Candidate> cands;
  std::vector<double> w;
  for (const auto& c : summary["candidates"]) {
    json keys;
    for (const char* k : {"family", "delta_beta", "delta_z", "phi", "nu", "phi1", "phi2", "xi"}) {
      if (c.contains(k)) keys[k] = c[k];
    }
    cands.push_back(parse_candidate(keys, "predict.weights candidate"));
    if (!c.contains("weight") || !c["weight"].is_number()) bad_config("candidate without a numeric weight");
    w.push_back(num(c["weight"]));
  }
  const TrajectoryDataset data = load_data(ctx);
  const VectorXd weights = Eigen::Map<VectorXd>(w.data(), static_cast<Index>(w.size()));
  if (!(weights.minCoeff() >= 0.0) || !(weights.sum() > 0.0)) bad_config("weights must be non-negative with a positive sum");
  emit_run("predict", ctx, refit(cands, weights / weights.sum(), data, ctx.config.priors), data);
}

void cmd_metrics(Context& ctx) {
  if (!ctx.config.metrics) bad_config("metrics needs a 'metrics' section");
  const io::Table m = compute_metrics(io::read_table(ctx.config.metrics->predictions), io::read_table(ctx.config.metrics->truth));
  io::write_table(ctx.out / "metrics.csv", m);
  json j;
  j["command"] = "metrics";
  for (std::size_t c = 0; c < m.header.size(); ++c) j["metrics"][m.header[c]] = m.rows.front()[c];
  io::write_atomic(ctx.out / "metrics_summary.json", dump(j));
}

double median_of(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

void cmd_diagnose(Context& ctx) {
  if (!ctx.config.diagnose) bad_config("diagnose needs a 'diagnose' section");
  const DiagnoseSection& d = *ctx.config.diagnose;
  json j;
  j["command"] = "diagnose";
  j["check"] = d.check;
  j["seed"] = ctx.config.seed;
  io::Table t;
  if (d.check == "variance_term") {
    const VarianceTermSection& v = d.variance;
    t.header = {"n", "epoch", "median_value", "median_h", "median_g"};
    std::map<Index, std::vector<double>> last_by_epoch;
    for (Index n : v.n_list) {
      std::vector<std::vector<diagnostics::VarianceTerm>> per_draw;
      for (Index r = 0; r < v.draws; ++r) {
        const std::uint64_t s = derived_seed(ctx.config.seed, "variance_term", static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(r));
        diagnostics::VarianceTermInput in;
        in.locations = simgen::uniform_locations(n, s);
        in.kernel = kernels::Matern{v.phi, v.nu};
        in.alpha = v.alpha;
        in.delta_z = v.delta_z;
        in.sigma = v.sigma;
        const diagnostics::VarianceTermSolver solver(in);
        per_draw.push_back(solver.evaluate(simgen::uniform_locations(1, s, "target")[0], v.epochs));
      }
      for (std::size_t e = 0; e < v.epochs.size(); ++e) {
        std::vector<double> val, h, g;
        for (const auto& p : per_draw) {
          val.push_back(p[e].value);
          h.push_back(p[e].h);
          g.push_back(p[e].g);
        }
        const double mv = median_of(val);
        t.rows.push_back({static_cast<double>(n), static_cast<double>(v.epochs[e]), mv, median_of(h), median_of(g)});
        last_by_epoch[v.epochs[e]].push_back(mv);
      }
    }
    bool decreasing = true;
    for (const auto& [epoch, meds] : last_by_epoch) {
      for (std::size_t i = 1; i < meds.size(); ++i) decreasing = decreasing && meds[i] < meds[i - 1];
    }
    j["strictly_decreasing"] = decreasing;
  } else if (d.check == "concentration") {
    diagnostics::ConcentrationConfig c = d.concentration;
    c.seed = ctx.config.seed;
    const auto r = diagnostics::sigma_concentration_check(c);
    t.header = {"n", "median_sigma2_mean", "median_interval_width"};
    for (const auto& row : r.rows) t.rows.push_back({static_cast<double>(row.n), row.median_mean, row.median_width});
    j["shrinking"] = r.shrinking ? json(*r.shrinking) : json(nullptr);
    j["notes"] = r.notes;
  } else {
    diagnostics::StackingLimitConfig c = d.stacking_limit;
    c.seed = ctx.config.seed;
    const auto r = diagnostics::stacking_limit_check(c);
    t.header = {"n", "mean_squared_error"};
    for (std::size_t i = 0; i < r.n.size(); ++i) t.rows.push_back({static_cast<double>(r.n[i]), r.mean_squared_error[i]});
    j["intercept"] = r.intercept;
    j["slope"] = r.slope;
    j["target"] = r.target;
  }
  io::write_table(ctx.out / "diagnose.csv", t);
  io::write_atomic(ctx.out / "diagnose_summary.json", dump(j));
}

json error_json(const std::string& kind, const std::string& module, const std::string& op, const std::string& msg) {
  json j;
  j["error"]["kind"] = kind;
  j["error"]["module"] = module;
  j["error"]["operation"] = op;
  j["error"]["message"] = msg;
  return j;
}

void report_error(const json& j, const fs::path& out) {
  std::cerr << j.dump() << "\n";
  try {
    io::write_atomic(out / "error.json", dump(j));
  } catch (...) {
    // stderr already carries the error
  }
}

}  // namespace

RunConfig parse_config(const std::string& text, const fs::path& base) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, "parse_config", std::string("malformed JSON: ") + e.what());
  }
  Section top(root, "");
  RunConfig c;
  top.read("seed", c.seed);

  if (top.has("simulate")) {
    Section s(top.at("simulate"), "simulate");
    SimulateSection sim;
    s.read("process", sim.process);
    if (sim.process == "continuous") {
      auto& k = sim.continuous;
      s.read("path_length", k.path_length);
      s.read("n_train", k.n_train);
      s.read("n_held_out", k.n_held_out);
      s.read("p", k.p);
      s.read("sigma", k.sigma);
      s.read("delta_beta", k.delta_beta);
      s.read("delta_z", k.delta_z);
      s.read("phi1", k.phi1);
      s.read("phi2", k.phi2);
      s.read("xi", k.xi);
      s.read("x_sd", k.x_sd);
    } else if (sim.process == "discrete") {
      auto& k = sim.discrete;
      s.read("T", k.T);
      s.read("p", k.p);
      s.read("sigma", k.sigma);
      s.read("delta_beta", k.delta_beta);
      s.read("delta_z", k.delta_z);
      s.read("phi", k.phi);
      s.read("nu", k.nu);
      s.read("init_sd", k.init_sd);
      s.read("x_sd", k.x_sd);
    } else {
      bad_config("simulate.process must be 'continuous' or 'discrete'");
    }
    s.finish();
    c.simulate = sim;
  }

  if (top.has("data")) {
    Section s(top.at("data"), "data");
    DataSection d;
    std::string csv;
    if (!s.has("csv")) bad_config("data.csv is required");
    csv = Section::convert<std::string>(s.at("csv"), "data.csv");
    d.csv = resolve(base, csv);
    s.read_optional("covariates", d.covariates);
    s.finish();
    c.data = d;
  }

  if (top.has("truth")) c.truth = resolve(base, Section::convert<std::string>(top.at("truth"), "truth"));

  if (top.has("grid")) {
    const json& g = top.at("grid");
    if (g.is_array()) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const auto part = parse_grid(g[i], "grid[" + std::to_string(i) + "]");
        c.candidates.insert(c.candidates.end(), part.begin(), part.end());
      }
    } else {
      c.candidates = parse_grid(g, "grid");
    }
  }
  if (top.has("candidates")) {
    const json& a = top.at("candidates");
    if (!a.is_array()) bad_config("candidates must be an array");
    for (std::size_t i = 0; i < a.size(); ++i) c.candidates.push_back(parse_candidate(a[i], "candidates[" + std::to_string(i) + "]"));
  }

  if (top.has("priors")) {
    Section s(top.at("priors"), "priors");
    s.read("a_sigma", c.priors.a_sigma);
    s.read("b_sigma", c.priors.b_sigma);
    s.read("half_quadratic", c.priors.nig.half_quadratic);
    s.finish();
    if (!(c.priors.a_sigma > 0.0) || !(c.priors.b_sigma > 0.0)) bad_config("priors.a_sigma and priors.b_sigma must be positive");
  }

  if (top.has("stacking")) {
    Section s(top.at("stacking"), "stacking");
    std::string mode = "distributions", scheme = "random";
    s.read("mode", mode);
    s.read("scheme", scheme);
    s.read("folds", c.stacking.folds);
    s.finish();
    if (mode == "means") c.stacking.mode = stacking::Mode::Means;
    else if (mode == "distributions") c.stacking.mode = stacking::Mode::Distributions;
    else bad_config("stacking.mode must be 'means' or 'distributions'");
    if (scheme == "random") c.stacking.scheme = stacking::Scheme::RandomKFold;
    else if (scheme == "expanding") c.stacking.scheme = stacking::Scheme::ExpandingWindow;
    else bad_config("stacking.scheme must be 'random' or 'expanding'");
    if (c.stacking.folds < 2) bad_config("stacking.folds must be at least 2");
  }

  if (top.has("predict")) {
    Section s(top.at("predict"), "predict");
    if (!s.has("weights")) bad_config("predict.weights is required");
    c.weights_from = resolve(base, Section::convert<std::string>(s.at("weights"), "predict.weights"));
    s.finish();
  }

  if (top.has("metrics")) {
    Section s(top.at("metrics"), "metrics");
    MetricsSection m;
    for (const char* k : {"predictions", "truth"}) {
      if (!s.has(k)) bad_config(s.name(k) + " is required");
    }
    m.predictions = resolve(base, Section::convert<std::string>(s.at("predictions"), "metrics.predictions"));
    m.truth = resolve(base, Section::convert<std::string>(s.at("truth"), "metrics.truth"));
    s.finish();
    c.metrics = m;
  }

  if (top.has("diagnose")) {
    Section s(top.at("diagnose"), "diagnose");
    DiagnoseSection d;
    s.read("check", d.check);
    if (d.check == "variance_term") {
      auto& v = d.variance;
      s.read("n_list", v.n_list);
      s.read("draws", v.draws);
      s.read("phi", v.phi);
      s.read("nu", v.nu);
      s.read("epochs", v.epochs);
      s.read("alpha", v.alpha);
      s.read("delta_z", v.delta_z);
      s.read("sigma", v.sigma);
      if (v.n_list.empty() || v.epochs.empty() || v.draws < 1) bad_config("diagnose needs sizes, epochs and draws");
    } else if (d.check == "concentration") {
      auto& k = d.concentration;
      s.read("n_list", k.n_list);
      s.read("replicates", k.replicates);
      s.read("T", k.T);
      s.read("sigma", k.sigma);
      s.read("delta_z", k.delta_z);
      s.read("phi", k.phi);
      s.read("nu", k.nu);
      s.read_optional("fit_phi", k.fit_phi);
      s.read_optional("fit_delta_z", k.fit_delta_z);
    } else if (d.check == "stacking_limit") {
      auto& k = d.stacking_limit;
      s.read("n_list", k.n_list);
      s.read("replicates", k.replicates);
      s.read("n_new", k.n_new);
      s.read("T", k.T);
      s.read("sigma", k.sigma);
      s.read("delta_z", k.delta_z);
      s.read("phi", k.phi);
      s.read("nu", k.nu);
      s.read("candidate_phi", k.candidate_phi);
    } else {
      bad_config("diagnose.check must be 'variance_term', 'concentration' or 'stacking_limit'");
    }
    s.finish();
    c.diagnose = d;
  }
  top.finish();
  return c;
}

RunConfig load_config(const fs::path& path) {
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return parse_config(io::read_file(path), base);
}

io::Table truth_table(const simgen::Simulated& sim) {
  io::Table t;
  t.header = {"t", "response", "signal", "z"};
  const Index p = sim.truth.beta.cols();
  for (Index j = 0; j < p; ++j) t.header.push_back("beta" + std::to_string(j + 1));
  t.header.push_back("held_out");
  std::vector<bool> held(static_cast<std::size_t>(sim.data.size()), false);
  for (Index r : sim.held_out) held[static_cast<std::size_t>(r)] = true;
  for (Index i = 0; i < sim.data.size(); ++i) {
    std::vector<double> row{sim.data.t(i), sim.data.y(i), sim.truth.signal(i), sim.truth.z(i)};
    for (Index j = 0; j < p; ++j) row.push_back(sim.truth.beta(i, j));
    row.push_back(held[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
    t.rows.push_back(std::move(row));
  }
  return t;
}

io::Table prediction_table(const TrajectoryDataset& data, const stacking::StackingRun& run, const io::Table* truth) {
  std::vector<Index> rows(static_cast<std::size_t>(data.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  const auto y = run.predict_y(rows);
  const auto z = run.predict_z(rows);
  const auto beta = run.predict_beta(rows);
  const Index p = data.covariates();
  io::Table t;
  t.header = {"t", "x", "y", "observed", "y_mean", "y_q025", "y_q975", "z_mean", "z_q025", "z_q975"};
  for (Index j = 0; j < p; ++j) t.header.push_back("beta" + std::to_string(j + 1) + "_mean");
  std::unordered_map<double, std::size_t> truth_rows;
  std::size_t truth_col = 0;
  if (truth) {
    t.header.push_back("y_log_density");
    truth_rows = by_t(*truth);
    truth_col = truth->column("response");
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index i = rows[r];
    std::vector<double> row{data.t(i),
                            data.s[r].x,
                            data.s[r].y,
                            data.observed(i) ? 1.0 : 0.0,
                            y[r].mean(),
                            y[r].quantile(0.025),
                            y[r].quantile(0.975),
                            z[r].mean(),
                            z[r].quantile(0.025),
                            z[r].quantile(0.975)};
    for (Index j = 0; j < p; ++j) row.push_back(beta[r](j));
    if (truth) {
      const auto it = truth_rows.find(data.t(i));
      row.push_back(it == truth_rows.end() ? std::numeric_limits<double>::quiet_NaN()
                                           : y[r].log_pdf(truth->rows[it->second][truth_col]));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

io::Table compute_metrics(const io::Table& pred, const io::Table& truth) {
  const auto rows = by_t(pred);
  const std::size_t ym = pred.column("y_mean"), zm = pred.column("z_mean"), lo = pred.column("y_q025"),
                    hi = pred.column("y_q975");
  const std::size_t tr = truth.column("response"), ts = truth.column("signal"), tz = truth.column("z"),
                    th = truth.column("held_out"), tt = truth.column("t");
  std::vector<std::size_t> beta_truth, beta_pred;
  for (Index j = 1; truth.has("beta" + std::to_string(j)); ++j) {
    beta_truth.push_back(truth.column("beta" + std::to_string(j)));
    beta_pred.push_back(pred.column("beta" + std::to_string(j) + "_mean"));
  }
  const bool has_ld = pred.has("y_log_density");
  const std::size_t ld = has_ld ? pred.column("y_log_density") : 0;

  std::vector<double> hy_p, hy_t, hz_p, hz_t, hld, ty_p, ty_t, tz_p, tz_t;
  std::vector<std::vector<double>> b_p(beta_truth.size()), b_t(beta_truth.size());
  double covered = 0.0;
  for (const auto& trow : truth.rows) {
    const auto it = rows.find(trow[tt]);
    if (it == rows.end()) fail(ErrorKind::InputValidation, "compute_metrics", "no prediction for t = " + io::format_number(trow[tt]));
    const auto& prow = pred.rows[it->second];
    if (trow[th] > 0.5) {
      hy_p.push_back(prow[ym]);
      hy_t.push_back(trow[tr]);
      hz_p.push_back(prow[zm]);
      hz_t.push_back(trow[tz]);
      if (has_ld) hld.push_back(prow[ld]);
      covered += (trow[tr] >= prow[lo] && trow[tr] <= prow[hi]) ? 1.0 : 0.0;
    } else {
      ty_p.push_back(prow[ym]);
      ty_t.push_back(trow[ts]);
      tz_p.push_back(prow[zm]);
      tz_t.push_back(trow[tz]);
      for (std::size_t j = 0; j < beta_truth.size(); ++j) {
        b_p[j].push_back(prow[beta_pred[j]]);
        b_t[j].push_back(trow[beta_truth[j]]);
      }
    }
  }
  auto vec = [](const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size())); };
  io::Table m;
  std::vector<double> row;
  auto add = [&](const std::string& name, double v) {
    m.header.push_back(name);
    row.push_back(v);
  };
  add("n_train", static_cast<double>(ty_p.size()));
  add("n_held_out", static_cast<double>(hy_p.size()));
  if (!ty_p.empty()) {
    add("mse_y", metrics::mspe(vec(ty_p), vec(ty_t)));
    add("mse_z_train", metrics::mse_z(vec(tz_p), vec(tz_t)));
    for (std::size_t j = 0; j < beta_truth.size(); ++j) {
      add("rmse_beta" + std::to_string(j + 1), metrics::rmse_relative(vec(b_p[j]), vec(b_t[j])));
    }
  }
  if (!hy_p.empty()) {
    add("mspe", metrics::mspe(vec(hy_p), vec(hy_t)));
    add("mse_z", metrics::mse_z(vec(hz_p), vec(hz_t)));
    add("coverage95", covered / static_cast<double>(hy_p.size()));
    if (has_ld) {
      const metrics::Mlpd ml = metrics::mlpd(vec(hld));
      add("mlpd", ml.value);
      add("mlpd_excluded", static_cast<double>(ml.excluded));
    }
  }
  m.rows.push_back(std::move(row));
  return m;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Bayesian trajectory models with predictive stacking"};
  app.require_subcommand(1);
  fs::path config_path;
  std::optional<std::uint64_t> seed;
  fs::path out = "out";
  int threads = 0;
  for (const char* name : {"simulate", "fit", "stack", "predict", "metrics", "diagnose"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "overrides the configuration seed");
    sub->add_option("--out", out, "output directory")->capture_default_str();
    sub->add_option("--threads", threads, "OpenMP threads (0 keeps the default)")->check(CLI::NonNegativeNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (threads > 0) omp_set_num_threads(threads);
    Context ctx;
    ctx.config = load_config(config_path);
    if (seed) ctx.config.seed = *seed;
    ctx.out = out;
    fs::create_directories(out);
    if (command == "simulate") cmd_simulate(ctx);
    else if (command == "fit") cmd_fit(ctx);
    else if (command == "stack") cmd_stack(ctx);
    else if (command == "predict") cmd_predict(ctx);
    else if (command == "metrics") cmd_metrics(ctx);
    else cmd_diagnose(ctx);
    for (const auto& w : ctx.warnings) std::cerr << "warning: " << w << "\n";
  } catch (const Error& e) {
    report_error(error_json(std::string(to_string(e.kind())), e.module(), e.operation(), e.what()), out);
    const bool usage = e.kind() == ErrorKind::Configuration || e.kind() == ErrorKind::Parse;
    return usage ? 2 : 1;
  } catch (const std::exception& e) {
    report_error(error_json("Internal", "cli", command, e.what()), out);
    return 1;
  }
  return 0;
}

}  // namespace trajstack::cli
