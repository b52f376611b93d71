#include <algorithm>
#include <chrono>
#include <cstring>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lagr/analysis.hpp"
#include "lagr/gfm.hpp"
#include "lagr/gradcheck_suite.hpp"
#include "lagr/io.hpp"
#include "lagr/pipeline.hpp"
#include "lagr/rcl.hpp"
#include "lagr/sheaf.hpp"
#include "lagr/svg.hpp"

using namespace lagr;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::size_t jobs() { return std::max<std::size_t>(1, std::thread::hardware_concurrency()); }

Tensor uniform_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = d(rng);
  return t;
}

Outcome exact_equivariance() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Tensor f = random_smooth_field({1, 4, 64, 64}, 10 + s);
    const OrbitConfig cfg = OrbitConfig::random(4, 4, 0.05, 64, 64, 20 + s);
    for (int dx : {-7, -1, 0, 2, 5})
      for (int dy : {-3, 0, 4})
        worst = std::max(worst, orbit_equivariance_error(cfg, ProjectiveTransform::translation(dx, dy), f, 2));
  }
  return {worst < 1e-9, "max EE " + io::fmt(worst) + " < 1e-9"};
}

Outcome interpolation_equivariance() {
  double worst = 0.0;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pick(0.01, 0.1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const double sigma = pick(rng);
    const Tensor f = random_smooth_field({1, 4, 64, 64}, 100 + s);
    const OrbitConfig cfg = OrbitConfig::random(4, 4, 0.05, 64, 64, 200 + s);
    const auto g = random_pixel_perturbation(sigma, 300 + s, 64, 64);
    worst = std::max(worst, orbit_equivariance_error(cfg, g, f, default_margin(sigma, 64, 64)));
  }
  EeSweepConfig c;
  c.jobs = jobs();
  const EeSweep sweep = run_ee_sweep(c);
  std::string curve;
  for (std::size_t i = 0; i < sweep.sigmas.size(); ++i)
    curve += " " + io::fmt_fixed(sweep.sigmas[i], 1) + ":" + io::fmt_fixed(sweep.mean_gfm[i], 4) + "/" +
             io::fmt_fixed(sweep.mean_baseline[i], 4);
  const bool ok = worst < 0.05 && sweep.gfm_monotone() && sweep.gfm_below_baseline();
  return {ok, "max EE(sigma<=0.1) " + io::fmt_fixed(worst, 4) + " < 0.05; monotone=" +
                  (sweep.gfm_monotone() ? "yes" : "no") + " below_baseline=" +
                  (sweep.gfm_below_baseline() ? "yes" : "no") + "; gfm/baseline" + curve};
}

ScalePyramid pyramid(std::size_t levels, std::size_t c, std::size_t h0, std::uint64_t seed) {
  ScalePyramid p;
  for (std::size_t d = 0; d < levels; ++d) p.levels.push_back(uniform_tensor({2, c, h0 >> d, h0 >> d}, seed + d));
  return p;
}

Outcome grading() {
  std::size_t bad_masks = 0, bad_probes = 0, probes = 0;
  for (std::size_t c = 1; c <= 24; ++c)
    for (std::size_t d = 0; d + 1 <= c && d <= 6; ++d) {
      const auto m = build_masks(c, d);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double total = 0.0;
        for (const auto& mk : m) {
          if (mk[ch] != 0.0 && mk[ch] != 1.0) ++bad_masks;
          total += mk[ch];
        }
        if (total != 1.0) ++bad_masks;
      }
    }
  for (std::size_t dmax = 0; dmax <= 3; ++dmax) {
    const std::vector<std::size_t> chans(dmax + 1, 3);
    const GradedKernelBank bank = GradedKernelBank::init(2 * (dmax + 1), 3, 3, dmax, chans, 10 + dmax);
    const ScalePyramid pyr = pyramid(dmax + 1, 3, 16, 20);
    for (std::size_t d = 0; d <= dmax; ++d) {
      const Tensor base = rcl_pre_activation(pyr, bank, d);
      for (std::size_t dp = 0; dp <= dmax; ++dp) {
        ScalePyramid probe = pyr;
        probe.levels[dp] += uniform_tensor(probe.levels[dp].shape(), 99, 0.5, 1.0);
        const double change = max_abs_diff(rcl_pre_activation(probe, bank, d), base);
        ++probes;
        if (dp <= d ? !(change > 1e-6) : change != 0.0) ++bad_probes;
      }
    }
  }
  GradedKernelBank bank = GradedKernelBank::init(2, 2, 1, 1, {2, 2}, 7);
  bank.w = Tensor({2, 2, 1, 1}, {0.5, -1.25, 2.0, 0.75});
  ScalePyramid pyr;
  pyr.levels = {Tensor({1, 2, 2, 2}, {1, 2, 3, 4, -1, 0.5, 2, 3}), Tensor({1, 2, 1, 1}, {0.3, -0.7})};
  const Tensor pre = rcl_pre_activation(pyr, bank, 1);
  const double oracle = std::max(std::abs(pre[0] - (0.5 * 0.3 + -1.25 * -0.7)), std::abs(pre[1] - (2.0 - 0.75)));
  const bool ok = bad_masks == 0 && bad_probes == 0 && oracle <= 1e-12;
  return {ok, "mask violations " + std::to_string(bad_masks) + "; probe failures " + std::to_string(bad_probes) +
                  "/" + std::to_string(probes) + "; hand oracle err " + io::fmt(oracle) + " <= 1e-12"};
}

Outcome slopes() {
  const Vec2 d{0.4, 0.0};
  const auto grid = default_omega_grid();
  const double id = spectral_error_slope(identity_kernel(3), d, grid).slope;
  const double mm = spectral_error_slope(moment_match_kernel(d, 3), d, grid).slope;
  const bool ok = std::abs(id - 1.0) <= 0.1 && std::abs(mm - 2.0) <= 0.2;
  return {ok, "identity slope " + io::fmt_fixed(id, 4) + " (1.0 +- 0.1); matched slope " + io::fmt_fixed(mm, 4) +
                  " (2.0 +- 0.2)"};
}

Outcome fusion() {
  FusionConfig c;
  c.jobs = jobs();
  const FusionResult r = run_fusion_experiment(c);
  const bool ok = r.wins >= 90 && r.counted == 100;
  return {ok, "matched wins " + std::to_string(r.wins) + "/" + std::to_string(r.counted) + " (>= 90 of 100)"};
}

Tensor adjacency(std::size_t n, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  Tensor a({1, 1, n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(rng)) a(0, 0, i, j) = a(0, 0, j, i) = 1.0;
  return a;
}

Outcome sheaf_identities() {
  double pair_gap = 0.0, shift_gap = 0.0;
  std::size_t zero_fail = 0, pos_fail = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const std::size_t n = 2 + s % 15, b = 1 + s % 3, c = 1 + s % 4;
    const Tensor adj = adjacency(n, 0.3, s);
    const PatchGraph g = graph_from_adjacency(adj);
    const Tensor h = uniform_tensor({b, 1, n, c}, 1000 + s, -3, 3);
    const double pair = sheaf_energy_pairwise(h, g), trace = sheaf_energy_trace(h, g);
    pair_gap = std::max(pair_gap, std::abs(pair - trace) / std::max(1.0, pair));

    Tensor shifted = h;
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) shifted(bi, 0, i, k) += 2.5 * static_cast<double>(k + 1) - 1.5 * bi;
    shift_gap = std::max(shift_gap, std::abs(sheaf_energy(shifted, g) - sheaf_energy(h, g)));

    const Tensor per_comp = uniform_tensor({b, 1, n, c}, 5000 + s, -3, 3);
    Tensor sec({b, 1, n, c});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) sec(bi, 0, i, k) = per_comp(bi, 0, g.component[i], k);
    if (sheaf_energy(sec, g) != 0.0) ++zero_fail;
    for (std::size_t i = 0; i < n; ++i) {
      bool linked = false;
      for (std::size_t j = 0; j < n; ++j) linked = linked || adj(0, 0, i, j) > 0.0;
      if (!linked) continue;
      Tensor p = sec;
      p(0, 0, i, 0) += 1e-3;
      if (!(sheaf_energy(p, g) > 0.0)) ++pos_fail;
    }
  }
  const bool ok = pair_gap <= 1e-9 && shift_gap <= 1e-9 && zero_fail == 0 && pos_fail == 0;
  return {ok, "pairwise-trace gap " + io::fmt(pair_gap) + "; shift gap " + io::fmt(shift_gap) +
                  "; nonzero sections " + std::to_string(zero_fail) + "; zero non-sections " +
                  std::to_string(pos_fail)};
}

Outcome consistency() {
  InconsistencyConfig c;
  c.samples = 300;
  c.jobs = jobs();
  const InconsistencyResult r = run_inconsistency_harness(c);
  return {r.r_magnitude_energy > 0.9, "Pearson r " + io::fmt_fixed(r.r_magnitude_energy, 4) + " > 0.9"};
}

Outcome gradients() {
  const GradSuiteResult r = run_gradient_suite(0, jobs());
  std::size_t failed = 0;
  for (const auto& c : r.cases) failed += c.passed() ? 0 : 1;
  return {r.passed(), std::to_string(r.cases.size() - failed) + "/" + std::to_string(r.cases.size()) +
                          " cases pass; worst rel err " + io::fmt(r.worst()) + " < 1e-4"};
}

Outcome training() {
  ModelConfig cfg;
  const TrainState reg = train(cfg, 200);
  const double ratio = reg.final_loss.total / reg.history.front().total;
  cfg.weights.lambda_sheaf = 0.0;
  const TrainState plain = train(cfg, 200);
  const bool ok = ratio <= 0.5 && reg.final_loss.sheaf < plain.final_loss.sheaf;
  return {ok, "loss " + io::fmt(reg.history.front().total) + " -> " + io::fmt(reg.final_loss.total) + " ratio " +
                  io::fmt_fixed(ratio, 4) + " <= 0.5; sheaf energy " + io::fmt(reg.final_loss.sheaf) +
                  " (lambda 0.1) < " + io::fmt(plain.final_loss.sheaf) + " (lambda 0)"};
}

std::string stable_outputs(std::size_t j) {
  EeSweepConfig ee;
  ee.sigmas = {0.1, 0.3};
  ee.seeds = 4;
  ee.size = 32;
  ee.seed = 3;
  ee.jobs = j;
  const EeSweep sweep = run_ee_sweep(ee);
  FusionConfig fc;
  fc.trials = 3;
  fc.seed = 3;
  fc.jobs = j;
  const FusionResult fr = run_fusion_experiment(fc);
  InconsistencyConfig ic;
  ic.samples = 12;
  ic.seed = 3;
  ic.jobs = j;
  const InconsistencyResult ir = run_inconsistency_harness(ic);
  std::vector<double> mag, energy;
  for (const auto& row : ir.rows) {
    mag.push_back(row.magnitude);
    energy.push_back(row.energy);
  }
  const svg::Series gfm{"gfm", sweep.sigmas, sweep.mean_gfm}, base{"baseline", sweep.sigmas, sweep.mean_baseline};
  return sweep.csv() + fusion_aas_csv(fr) + fusion_trials_csv(fr) + consistency_csv(ir) +
         run_gradient_suite(3, j).csv() + svg::line_chart({gfm, base}) + svg::scatter(mag, energy);
}

Outcome round_trips() {
  std::size_t mismatched = 0;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  std::uniform_int_distribution<std::uint64_t> bits;
  for (std::size_t i = 0; i < 100; ++i) {
    Tensor t({dim(rng), dim(rng), dim(rng), dim(rng)});
    for (double& v : t.data()) {
      std::uint64_t u = bits(rng);
      if ((u >> 52 & 0x7ff) == 0x7ff) u &= ~(std::uint64_t{1} << 62);
      std::memcpy(&v, &u, sizeof v);
    }
    std::stringstream ss;
    io::write_lagt1(ss, t);
    const Tensor back = io::read_lagt1(ss);
    if (!(back.shape() == t.shape()) ||
        std::memcmp(back.data().data(), t.data().data(), t.size() * sizeof(double)) != 0)
      ++mismatched;
  }
  const std::string a = stable_outputs(1), b = stable_outputs(1), c = stable_outputs(3);
  const bool stable = a == b && a == c;
  return {mismatched == 0 && stable, "LAGT1 mismatches " + std::to_string(mismatched) + "/100; CSV/SVG " +
                                         std::to_string(a.size()) + " bytes " +
                                         (stable ? "identical across runs and job counts" : "differ")};
}

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "equivariance exact regime", 10, exact_equivariance},
      {2, "equivariance interpolation regime", 300, interpolation_equivariance},
      {3, "grading algebra", 30, grading},
      {4, "spectral error slopes", 10, slopes},
      {5, "spectral gap of matched fusion", 120, fusion},
      {6, "sheaf energy identities", 30, sheaf_identities},
      {7, "consistency correlation", 60, consistency},
      {8, "gradient suite", 120, gradients},
      {9, "toy training", 600, training},
      {10, "format round trips", 10, round_trips},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.ok && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s %2d %-34s %7.2fs/%4.0fs%s  %s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs,
                c.budget_s, in_time ? "" : " (over budget)", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
