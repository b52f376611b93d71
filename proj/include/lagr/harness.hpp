#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lagr/analysis.hpp"
#include "lagr/gfm.hpp"
#include "lagr/gradcheck_suite.hpp"
#include "lagr/io.hpp"
#include "lagr/pipeline.hpp"
#include "lagr/sheaf.hpp"
#include "lagr/svg.hpp"

namespace lagr::harness {

enum ExitCode : int {
  kExitPass = 0,
  kExitFail = 1,        // the command's invariant does not hold
  kExitUsage = 2,       // bad flags, config keys or values
  kExitDegenerate = 3,  // the data admits no verdict (zero variance, all trials degenerate)
  kExitError = 4,       // any other runtime failure
};

struct ParamSpec {
  std::string key, def, help;
};

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"equivariance", "spectral", "sheaf-stats", "gradcheck", "train-toy"};
  return names;
}

inline std::string command_summary(const std::string& cmd) {
  if (cmd == "equivariance") return "EE sweep of the orbit configuration against a plain conv baseline";
  if (cmd == "spectral") return "high-frequency retention of moment-matched vs identity fusion";
  if (cmd == "sheaf-stats") return "sheaf energy against injected inconsistency";
  if (cmd == "gradcheck") return "finite-difference check of every registered differentiable op";
  if (cmd == "train-toy") return "gradient-descent training of the toy depth model";
  throw ConfigError("unknown command '" + cmd + "'");
}

/// Keys accepted by a command, common ones first.
inline std::vector<ParamSpec> command_params(const std::string& cmd) {
  std::vector<ParamSpec> p{{"seed", "0", "base random seed"},
                           {"jobs", "1", "worker threads"},
                           {"out", "lagr_out", "output directory"}};
  auto add = [&](std::vector<ParamSpec> more) { p.insert(p.end(), more.begin(), more.end()); };
  if (cmd == "equivariance") {
    add({{"sigma_grid", "0.1,0.2,0.3,0.4,0.5", "comma-separated perturbation strengths in (0, 1)"},
         {"seeds", "50", "trials per sigma"},
         {"size", "64", "field height and width"},
         {"channels", "4", "field channels"},
         {"k", "4", "orbit samples"},
         {"theta_sigma", "0.05", "strength of the sampled orbit transforms"}});
  } else if (cmd == "spectral") {
    add({{"trials", "100", "fusion trials"},
         {"size", "64", "field height and width"},
         {"kernel", "5", "odd fusion kernel size"},
         {"min_shift", "0.5", "smallest |delta| component"},
         {"max_shift", "2", "largest |delta| component"},
         {"texture", "noise", "noise or constant"},
         {"rate", "0.9", "required fraction of winning trials"}});
  } else if (cmd == "sheaf-stats") {
    add({{"samples", "300", "synthetic fields"},
         {"size", "32", "field height and width"},
         {"tile", "8", "block size of injected offsets"},
         {"threshold", "0.9", "pass iff Pearson r exceeds this"}});
  } else if (cmd == "gradcheck") {
  } else if (cmd == "train-toy") {
    const LossWeights w;
    const ModelConfig m;
    add({{"steps", "200", "gradient-descent steps"},
         {"lr", io::fmt(m.lr), "learning rate"},
         {"size", std::to_string(m.size), "scene height and width (multiple of 16)"},
         {"scenes", std::to_string(m.scenes), "training scenes"},
         {"lambda_pho", io::fmt(w.lambda_pho), "photometric weight"},
         {"lambda_grp", io::fmt(w.lambda_grp), "group-consistency weight"},
         {"lambda_sheaf", io::fmt(w.lambda_sheaf), "sheaf-energy weight"},
         {"lambda_sm", io::fmt(w.lambda_sm), "smoothness weight"},
         {"target_ratio", "0.5", "pass iff final total <= ratio * initial total"}});
  } else {
    throw ConfigError("unknown command '" + cmd + "'");
  }
  return p;
}

/// Flat key = value settings for one command. Every key must be declared by
/// the command; values are range-checked when read.
class RunConfig {
 public:
  explicit RunConfig(std::string cmd) : cmd_(std::move(cmd)) {
    for (const auto& p : command_params(cmd_)) values_[p.key] = p.def;
  }

  const std::string& command() const { return cmd_; }

  void set(std::string key, const std::string& value) {
    std::replace(key.begin(), key.end(), '-', '_');
    if (!values_.count(key)) throw ConfigError("unknown key '" + key + "' for command " + cmd_);
    values_[key] = value;
  }

  /// `key = value` lines; '#' starts a comment.
  void load_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::string line;
    for (int n = 1; std::getline(is, line); ++n) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty())
        throw ConfigError(path.string() + ":" + std::to_string(n) + ": empty key or value");
      set(key, value);
    }
  }

  const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("command " + cmd_ + " has no key '" + key + "'");
    return it->second;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t lo, std::uint64_t hi) const {
    const std::string& s = raw(key);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
    if (v < lo || v > hi)
      throw ConfigError(key + " = " + s + " is outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return v;
  }

  double get_double(const std::string& key, double lo, double hi) const { return parse_double(key, raw(key), lo, hi); }

  std::vector<double> get_list(const std::string& key, double lo, double hi) const {
    std::vector<double> out;
    std::stringstream ss(raw(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(key, item, lo, hi));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
  }

  std::filesystem::path out_dir() const { return raw("out"); }
  std::uint64_t seed() const { return get_uint("seed", 0, std::numeric_limits<std::uint64_t>::max()); }
  std::size_t jobs() const { return get_uint("jobs", 1, 256); }

 private:
  static double parse_double(const std::string& key, const std::string& s, double lo, double hi) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
    if (used != s.size() || !std::isfinite(v)) throw ConfigError(key + ": expected a number, got '" + s + "'");
    if (v < lo || v > hi)
      throw ConfigError(key + " = " + s + " is outside [" + io::fmt(lo) + ", " + io::fmt(hi) + "]");
    return v;
  }

  std::string cmd_;
  std::map<std::string, std::string> values_;
};

/// result.txt: one key=value per line, in insertion order.
class Result {
 public:
  void add(const std::string& key, const std::string& value) { lines_.push_back({key, value}); }
  void add(const std::string& key, double value) { add(key, io::fmt(value)); }
  void add(const std::string& key, bool value) { add(key, std::string(value ? "pass" : "fail")); }

  std::string str() const {
    std::string s;
    for (const auto& [k, v] : lines_) s += k + "=" + v + "\n";
    return s;
  }
  void write(const std::filesystem::path& dir) const { io::write_text(dir / "result.txt", str()); }

 private:
  std::vector<std::pair<std::string, std::string>> lines_;
};

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + io::fmt(v[i], 6);
  return s;
}

// ---------------------------------------------------------------------------
// Commands. Each writes its artifacts and result.txt into cfg.out_dir() and
// returns an exit code; `log` receives a human-readable summary.

inline int cmd_equivariance(const RunConfig& cfg, std::ostream& log) {
  EeSweepConfig c;
  c.sigmas = cfg.get_list("sigma_grid", 1e-9, 0.99);
  c.seeds = cfg.get_uint("seeds", 1, 100000);
  c.size = cfg.get_uint("size", 16, 1024);
  c.channels = cfg.get_uint("channels", 1, 64);
  c.k = cfg.get_uint("k", 1, 32);
  c.theta_sigma = cfg.get_double("theta_sigma", 0.0, 0.5);
  c.seed = cfg.seed();
  c.jobs = cfg.jobs();
  const auto dir = cfg.out_dir();
  std::filesystem::create_directories(dir);

  const EeSweep sweep = run_ee_sweep(c);
  io::write_text(dir / "ee.csv", sweep.csv());
  io::write_text(dir / "ee.svg", svg::line_chart({{"gfm", sweep.sigmas, sweep.mean_gfm},
                                                  {"baseline", sweep.sigmas, sweep.mean_baseline}}));
  Result r;
  r.add("command", std::string("equivariance"));
  r.add("seed", std::to_string(c.seed));
  r.add("sigmas", join(sweep.sigmas));
  r.add("mean_ee_gfm", join(sweep.mean_gfm));
  r.add("mean_ee_baseline", join(sweep.mean_baseline));
  r.add("gfm_monotone", sweep.gfm_monotone());
  r.add("baseline_monotone", sweep.baseline_monotone());
  r.add("gfm_below_baseline", sweep.gfm_below_baseline());
  r.add("pass", sweep.passed());
  r.write(dir);

  log << "sigma      gfm        baseline\n";
  for (std::size_t i = 0; i < sweep.sigmas.size(); ++i) {
    log << io::fmt_fixed(sweep.sigmas[i], 3) << "      " << io::fmt_fixed(sweep.mean_gfm[i], 5) << "    "
        << io::fmt_fixed(sweep.mean_baseline[i], 5);
    if (!(sweep.mean_gfm[i] < sweep.mean_baseline[i])) log << "    <- gfm not below baseline";
    if (i > 0 && sweep.mean_gfm[i] < sweep.mean_gfm[i - 1]) log << "    <- gfm decreases";
    if (i > 0 && sweep.mean_baseline[i] < sweep.mean_baseline[i - 1]) log << "    <- baseline decreases";
    log << '\n';
  }
  log << (sweep.passed() ? "PASS" : "FAIL") << ": monotone curves with gfm below baseline\n";
  return sweep.passed() ? kExitPass : kExitFail;
}

inline int cmd_spectral(const RunConfig& cfg, std::ostream& log) {
  FusionConfig c;
  c.trials = cfg.get_uint("trials", 1, 100000);
  c.size = cfg.get_uint("size", 8, 1024);
  c.kernel = cfg.get_uint("kernel", 1, 31);
  if (c.kernel % 2 == 0) throw ConfigError("kernel must be odd");
  const double half = (static_cast<double>(c.kernel) - 1.0) / 2.0;
  c.min_shift = cfg.get_double("min_shift", 0.0, half);
  c.max_shift = cfg.get_double("max_shift", c.min_shift, half);
  const std::string tex = cfg.raw("texture");
  if (tex == "noise") c.texture = Texture::WhiteNoise;
  else if (tex == "constant") c.texture = Texture::Constant;
  else throw ConfigError("texture must be 'noise' or 'constant', got '" + tex + "'");
  c.required_rate = cfg.get_double("rate", 0.0, 1.0);
  c.seed = cfg.seed();
  c.jobs = cfg.jobs();
  const auto dir = cfg.out_dir();
  std::filesystem::create_directories(dir);

  const FusionResult res = run_fusion_experiment(c);
  io::write_text(dir / "aas.csv", fusion_aas_csv(res));
  io::write_text(dir / "trials.csv", fusion_trials_csv(res));
  const bool degenerate = res.counted == 0;
  if (!degenerate) {
    std::vector<double> radii(res.mean_identity.radii.begin(), res.mean_identity.radii.end());
    io::write_text(dir / "aas.svg", svg::line_chart({{"identity", radii, res.mean_identity.values},
                                                     {"matched", radii, res.mean_matched.values}}));
  }
  const bool pass = !degenerate && res.win_rate() >= c.required_rate;
  Result r;
  r.add("command", std::string("spectral"));
  r.add("seed", std::to_string(c.seed));
  r.add("trials", std::to_string(c.trials));
  r.add("counted", std::to_string(res.counted));
  r.add("degenerate", std::to_string(res.degenerate));
  r.add("wins", std::to_string(res.wins));
  r.add("win_rate", res.win_rate());
  r.add("required_rate", c.required_rate);
  r.add("pass", pass);
  r.write(dir);

  log << "matched fusion wins " << res.wins << " of " << res.counted << " counted trials (" << res.degenerate
      << " degenerate excluded)\n";
  if (degenerate) {
    log << "DEGENERATE: every trial had a zero-variance texture\n";
    return kExitDegenerate;
  }
  log << (pass ? "PASS" : "FAIL") << ": win rate " << io::fmt_fixed(res.win_rate(), 3) << " vs required "
      << io::fmt_fixed(c.required_rate, 3) << '\n';
  return pass ? kExitPass : kExitFail;
}

inline int cmd_sheaf_stats(const RunConfig& cfg, std::ostream& log) {
  InconsistencyConfig c;
  c.samples = cfg.get_uint("samples", 3, 1000000);
  c.size = cfg.get_uint("size", 8, 1024);
  c.tile = cfg.get_uint("tile", 1, c.size);
  const double threshold = cfg.get_double("threshold", -1.0, 1.0);
  c.seed = cfg.seed();
  c.jobs = cfg.jobs();
  const auto dir = cfg.out_dir();
  std::filesystem::create_directories(dir);

  InconsistencyResult res;
  try {
    res = run_inconsistency_harness(c);
  } catch (const UndefinedCorrelation& e) {
    Result r;
    r.add("command", std::string("sheaf-stats"));
    r.add("degenerate", std::string(e.what()));
    r.add("pass", false);
    r.write(dir);
    log << "DEGENERATE: " << e.what() << '\n';
    return kExitDegenerate;
  }
  io::write_text(dir / "consistency.csv", consistency_csv(res));
  io::CsvWriter inj({"sample_id", "magnitude", "energy", "depth_error"});
  std::vector<double> mags, energies;
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    const auto& row = res.rows[i];
    inj.row({std::to_string(i), io::fmt(row.magnitude), io::fmt(row.energy), io::fmt(row.depth_error)});
    mags.push_back(row.magnitude);
    energies.push_back(row.energy);
  }
  io::write_text(dir / "injected.csv", inj.str());
  io::write_text(dir / "scatter.svg", svg::scatter(mags, energies));
  std::vector<svg::BoxStats> boxes;
  for (const auto& q : res.energy_vs_error.by_quartile)
    if (q.count > 0) boxes.push_back({q.min, q.q1, q.median, q.q3, q.max});
  io::write_text(dir / "boxplot.svg", svg::box_plot(boxes));

  const double r_me = res.r_magnitude_energy;
  const bool pass = threshold <= -1.0 || r_me > threshold;
  Result r;
  r.add("command", std::string("sheaf-stats"));
  r.add("seed", std::to_string(c.seed));
  r.add("samples", std::to_string(c.samples));
  r.add("r_magnitude_energy", r_me);
  r.add("r_energy_depth_error", res.energy_vs_error.r);
  r.add("threshold", threshold);
  r.add("pass", pass);
  r.write(dir);

  log << "Pearson r(magnitude, energy) = " << io::fmt_fixed(r_me, 4)
      << ", r(energy, depth error) = " << io::fmt_fixed(res.energy_vs_error.r, 4) << '\n';
  log << (pass ? "PASS" : "FAIL") << ": r > " << io::fmt(threshold) << '\n';
  return pass ? kExitPass : kExitFail;
}

inline int cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  const auto dir = cfg.out_dir();
  std::filesystem::create_directories(dir);
  const GradSuiteResult res = run_gradient_suite(cfg.seed(), cfg.jobs());
  io::write_text(dir / "gradcheck.csv", res.csv());
  Result r;
  r.add("command", std::string("gradcheck"));
  r.add("seed", std::to_string(cfg.seed()));
  r.add("cases", std::to_string(res.cases.size()));
  r.add("worst_rel_err", res.worst());
  r.add("tolerance", kGradTolerance);
  for (const auto& c : res.cases) r.add("case." + c.name, c.passed());
  r.add("pass", res.passed());
  r.write(dir);
  for (const auto& c : res.cases)
    if (!c.passed())
      log << "failed: " << c.name << " max_rel_err=" << io::fmt(c.max_rel_err) << (c.kink_free ? "" : " (no kink-free draw)")
          << '\n';
  log << (res.passed() ? "PASS" : "FAIL") << ": " << res.cases.size() << " cases, worst relative error "
      << io::fmt(res.worst(), 3) << '\n';
  return res.passed() ? kExitPass : kExitFail;
}

inline int cmd_train_toy(const RunConfig& cfg, std::ostream& log) {
  ModelConfig m;
  const std::size_t steps = cfg.get_uint("steps", 1, 1000000);
  m.lr = cfg.get_double("lr", 0.0, 10.0);
  m.size = cfg.get_uint("size", 32, 512);
  if (m.size % 16 != 0) throw ConfigError("size must be a multiple of 16");
  m.scenes = cfg.get_uint("scenes", 1, 64);
  m.weights.lambda_pho = cfg.get_double("lambda_pho", 0.0, 1e6);
  m.weights.lambda_grp = cfg.get_double("lambda_grp", 0.0, 1e6);
  m.weights.lambda_sheaf = cfg.get_double("lambda_sheaf", 0.0, 1e6);
  m.weights.lambda_sm = cfg.get_double("lambda_sm", 0.0, 1e6);
  const double target = cfg.get_double("target_ratio", 1e-12, 1.0);
  m.seed = cfg.seed();
  const auto dir = cfg.out_dir();
  std::filesystem::create_directories(dir);

  TrainState st = train(m, steps);
  std::vector<LossRecord> log_rows = st.history;
  log_rows.push_back(st.final_loss);
  io::write_text(dir / "loss.csv", loss_log_csv(log_rows));
  save_checkpoint(dir / "checkpoint", st.params);
  std::vector<double> x, total, pho, grp, sheaf, sm;
  for (const auto& r : log_rows) {
    x.push_back(static_cast<double>(r.step));
    total.push_back(r.total);
    pho.push_back(r.pho);
    grp.push_back(r.grp);
    sheaf.push_back(r.sheaf);
    sm.push_back(r.sm);
  }
  bool positive = true;
  for (const auto* s : {&total, &pho, &grp, &sheaf, &sm})
    for (double v : *s) positive = positive && v > 0.0;
  io::write_text(dir / "loss.svg", svg::line_chart({{"total", x, total}, {"pho", x, pho}, {"grp", x, grp},
                                                    {"sheaf", x, sheaf}, {"sm", x, sm}},
                                                   positive));
  const double initial = st.history.front().total, final = st.final_loss.total;
  const bool pass = final <= target * initial;
  Result r;
  r.add("command", std::string("train-toy"));
  r.add("seed", std::to_string(m.seed));
  r.add("steps", std::to_string(steps));
  r.add("initial_total", initial);
  r.add("final_total", final);
  r.add("ratio", final / initial);
  r.add("final_sheaf", st.final_loss.sheaf);
  r.add("target_ratio", target);
  r.add("pass", pass);
  r.write(dir);
  log << "total loss " << io::fmt(initial, 6) << " -> " << io::fmt(final, 6) << " (ratio " << io::fmt_fixed(final / initial, 3)
      << ") after " << steps << " steps\n";
  log << (pass ? "PASS" : "FAIL") << ": ratio <= " << io::fmt(target) << '\n';
  return pass ? kExitPass : kExitFail;
}

/// Dispatches a command and maps library errors onto exit codes.
inline int run_command(const RunConfig& cfg, std::ostream& log, std::ostream& err) {
  try {
    const std::string& c = cfg.command();
    if (c == "equivariance") return cmd_equivariance(cfg, log);
    if (c == "spectral") return cmd_spectral(cfg, log);
    if (c == "sheaf-stats") return cmd_sheaf_stats(cfg, log);
    if (c == "gradcheck") return cmd_gradcheck(cfg, log);
    if (c == "train-toy") return cmd_train_toy(cfg, log);
    throw ConfigError("unknown command '" + c + "'");
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UndefinedCorrelation& e) {
    err << "degenerate data: " << e.what() << '\n';
    return kExitDegenerate;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

} // namespace lagr::harness
