#include "trajstack/kernels.hpp"
#include "trajstack/model.hpp"
#include "trajstack/simgen.hpp"
#include "trajstack/stacking.hpp"

#include "CLI11.hpp"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>

using namespace trajstack;

namespace {

double seconds(const std::function<void()>& f, int repeats) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return best;
}

void report(const char* what, double serial, double parallel, bool identical) {
  std::printf("%-40s serial %8.3fs  parallel %8.3fs  speedup %5.2fx  %s\n", what, serial, parallel,
              serial / parallel, identical ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial versus OpenMP timings"};
  Index n_gram = 1500, n_stack = 120;
  int repeats = 3;
  app.add_option("--gram-size", n_gram, "Points in the Gram benchmark");
  app.add_option("--stack-size", n_stack, "Training rows in the stacking benchmark");
  app.add_option("--repeats", repeats, "Timing repeats (best is reported)");
  CLI11_PARSE(app, argc, argv);

  std::printf("threads: %d\n", omp_get_max_threads());

  std::vector<SpaceTimePoint> pts;
  const auto path = simgen::random_walk_trajectory(n_gram, 1);
  for (Index i = 0; i < n_gram; ++i) pts.push_back({static_cast<double>(i + 1), path[static_cast<std::size_t>(i)]});
  for (const kernels::KernelSpec spec : {kernels::KernelSpec(kernels::Matern{0.5, 1.5}),
                                         kernels::KernelSpec(kernels::Gneiting{0.5, 0.5})}) {
    MatrixXd a, b;
    const double ts = seconds([&] { a = kernels::gram_matrix_serial(pts, spec); }, repeats);
    const double tp = seconds([&] { b = kernels::gram_matrix(pts, spec); }, repeats);
    report(("gram " + spec.describe()).c_str(), ts, tp, a == b);
  }

  simgen::ContinuousSimConfig c;
  c.n_train = n_stack;
  c.n_held_out = 0;
  const simgen::Simulated sim = simgen::simulate_continuous(c);
  const auto grid = model::continuous_grid({1.0, 0.2}, {1.0, 0.2}, {1.0, 0.2}, {3.0, 1.0 / 3.0}, {1.0});
  const stacking::FoldPlan plan{stacking::Scheme::RandomKFold, 10, 1};
  stacking::StackingOptions ser, par;
  ser.parallel = false;
  stacking::StackingRun rs, rp;
  const double ts = seconds([&] { rs = stacking::run_stacking(sim.data, grid, plan, ser); }, 1);
  const double tp = seconds([&] { rp = stacking::run_stacking(sim.data, grid, plan, par); }, 1);
  report("run_stacking (16 candidates, 10 folds)", ts, tp, rs.weights == rp.weights);
  return 0;
}
