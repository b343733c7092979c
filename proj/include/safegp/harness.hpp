#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "safegp/config.hpp"
#include "safegp/report.hpp"

namespace safegp {

// Experiment runner: seeds and executes runs from config files, writes
// episodes.csv / summary.json / learning_curve.svg, and aggregates
// multi-seed statistics (mean +- std across seeds, following the usual
// "Con. Viol. / Best return / Blocked Ep." reporting rows).

struct RunSummary {
  std::string run_id;
  uint64_t seed = 0;
  std::string env;
  std::string config_path;
  bool constrained = false;
  double epsilon = 0.0;
  int episodes_total = 0;  // csv rows: executed episodes + blocked markers
  int violations = 0;      // training stream only
  int blocked = 0;
  double best_safe_return = kNegInf;  // over non-violating executed training
                                      // episodes; -inf if there were none
  bool goal_reached = false;          // any executed episode hit terminal
  double random_return_mean = 0.0;    // over the initial random rollouts
  double xi_final = 0.0;
  std::vector<IterationStats> iterations;
  std::string error;  // nonempty: the run failed, artifacts are partial
};

namespace detail {

inline std::string output_root(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("SAFEGP_OUT_DIR"))
    if (*env) return env;
  return "out";
}

inline bool wall_clock_enabled() {
  const char* env = std::getenv("SAFEGP_WALL_CLOCK");
  return env != nullptr && *env != '\0' && std::string(env) != "0";
}

inline json summary_to_json(const RunSummary& s,
                            const std::vector<json>& per_episode) {
  json j;
  j["version"] = 1;
  j["run_id"] = s.run_id;
  j["config"] = s.config_path;
  j["env"] = s.env;
  j["seed"] = s.seed;
  j["constrained"] = s.constrained;
  j["epsilon"] = s.epsilon;
  j["episodes_total"] = s.episodes_total;
  j["violations"] = s.violations;
  j["blocked_episodes"] = s.blocked;
  if (std::isfinite(s.best_safe_return))
    j["best_safe_return"] = s.best_safe_return;
  else
    j["best_safe_return"] = nullptr;
  j["goal_reached"] = s.goal_reached;
  j["random_return_mean"] = s.random_return_mean;
  j["xi_final"] = s.xi_final;
  json iters = json::array();
  for (size_t i = 0; i < s.iterations.size(); ++i) {
    const IterationStats& it = s.iterations[i];
    json row;
    row["iteration"] = i + 1;
    row["deployed"] = it.deployed;
    row["blocked"] = it.blocked;
    row["train_return"] = it.train_return;
    row["train_violated"] = it.train_violated;
    row["eval_return_mean"] = it.eval_return_mean;
    row["J_pred"] = std::isfinite(it.J_pred) ? json(it.J_pred) : json(nullptr);
    row["R_pred"] = it.R_pred;
    row["Q_pred"] = it.Q_pred;
    row["predicted_risk"] = it.predicted_risk;
    row["xi"] = it.xi_used;
    iters.push_back(std::move(row));
  }
  j["iterations"] = std::move(iters);
  j["per_episode"] = per_episode;
  if (!s.error.empty()) j["error"] = s.error;
  return j;
}

}  // namespace detail

// Runs one experiment from a config file.  Artifacts land in
// <out>/<config-stem>-s<seed>/.  A runtime failure still writes episodes.csv
// up to the failure point and a summary.json carrying the error.
inline RunSummary run_from_config(const std::string& path,
                                  std::optional<uint64_t> seed_override = {},
                                  const std::string& out_dir = "") {
  LoadedConfig loaded = load_config(path);
  RunConfig& c = loaded.run;
  if (seed_override) c.seed = *seed_override;

  RunSummary s;
  s.run_id = loaded.name + "-s" + std::to_string(c.seed);
  s.seed = c.seed;
  s.env = c.env_name;
  s.config_path = path;
  s.constrained = c.has_safety;
  s.epsilon = c.has_safety ? c.epsilon : 0.0;

  namespace fs = std::filesystem;
  const fs::path dir = fs::path(detail::output_root(out_dir)) / s.run_id;
  fs::create_directories(dir);

  EpisodeCsvWriter csv((dir / "episodes.csv").string());
  std::vector<json> per_episode;
  const bool timing = detail::wall_clock_enabled();
  auto episode_start = std::chrono::steady_clock::now();
  int index = 0;
  auto sink = [&](const EpisodeRecord& rec) {
    double wall_ms = 0.0;
    if (timing) {
      const auto now = std::chrono::steady_clock::now();
      wall_ms = std::chrono::duration<double, std::milli>(now - episode_start)
                    .count();
      episode_start = now;
    }
    csv.write(s.run_id, s.seed, index, rec, wall_ms);
    json row;
    row["episode"] = index;
    row["kind"] = to_string(rec.kind);
    row["native_return"] = rec.native_return();
    row["violated"] = rec.violated;
    row["blocked"] = rec.kind == EpisodeKind::blocked;
    row["wall_ms"] = wall_ms;
    per_episode.push_back(std::move(row));
    ++index;
  };

  RunResult res;
  try {
    res = run_experiment(c, sink);
  } catch (const std::exception& e) {
    s.error = e.what();
    s.episodes_total = index;
    write_text_file((dir / "summary.json").string(),
                    detail::summary_to_json(s, per_episode).dump(2) + "\n");
    return s;
  }

  s.episodes_total = index;
  s.violations = res.violations_total;
  s.blocked = res.blocked_total;
  s.xi_final = res.xi_final;
  s.iterations = res.iterations;

  int randoms = 0;
  for (const EpisodeRecord& e : res.episodes) {
    if (e.kind == EpisodeKind::random) {
      s.random_return_mean += e.native_return();
      ++randoms;
    }
    if (e.kind != EpisodeKind::blocked && !e.violated)
      s.best_safe_return = std::max(s.best_safe_return, e.native_return());
    if (e.reached_terminal) s.goal_reached = true;
  }
  if (randoms > 0) s.random_return_mean /= randoms;
  for (const auto& evals : res.evals)
    for (const EpisodeRecord& e : evals)
      if (e.reached_terminal) s.goal_reached = true;

  write_text_file((dir / "summary.json").string(),
                  detail::summary_to_json(s, per_episode).dump(2) + "\n");

  SvgSeries eval_series;
  eval_series.label = "evaluation mean";
  SvgSeries train_series;
  train_series.color = "#c0622b";
  train_series.label = "training episode";
  train_series.dashed = true;
  for (size_t i = 0; i < s.iterations.size(); ++i) {
    eval_series.x.push_back(static_cast<double>(i + 1));
    eval_series.y.push_back(s.iterations[i].eval_return_mean);
    if (s.iterations[i].deployed) {
      train_series.x.push_back(static_cast<double>(i + 1));
      train_series.y.push_back(s.iterations[i].train_return);
    }
  }
  write_text_file(
      (dir / "learning_curve.svg").string(),
      svg_line_chart(s.run_id, "training iteration", "native return",
                     {eval_series, train_series}));
  return s;
}

struct MultiSeedReport {
  std::string name;
  std::vector<uint64_t> seeds;
  std::vector<RunSummary> runs;       // one per seed, failed ones included
  std::vector<uint64_t> survivors;
  // Aggregates over survivors.
  double violations_mean = 0.0, violations_std = 0.0;
  double best_return_mean = 0.0, best_return_std = 0.0;
  double blocked_mean = 0.0, blocked_std = 0.0;
  std::vector<double> return_mean_per_iteration;
  std::vector<double> return_std_per_iteration;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
  return {mean, std::sqrt(var)};
}

}  // namespace detail

// Runs every seed independently, then aggregates over the seeds that
// finished.  A failed seed is recorded and warned about, not fatal.
inline MultiSeedReport run_multi_seed(const std::string& path,
                                      const std::vector<uint64_t>& seeds,
                                      const std::string& out_dir = "") {
  if (seeds.empty()) throw ConfigError("multi-seed run needs at least 1 seed");
  MultiSeedReport rep;
  {
    LoadedConfig probe = load_config(path);  // fail fast on a bad config
    rep.name = probe.name;
  }
  rep.seeds = seeds;

  namespace fs = std::filesystem;
  const fs::path root = fs::path(detail::output_root(out_dir));
  const fs::path dir = root / (rep.name + "-multi");
  fs::create_directories(dir);

  for (uint64_t seed : seeds) {
    RunSummary s = run_from_config(path, seed, root.string());
    if (!s.error.empty())
      std::cerr << "warning: seed " << seed << " failed: " << s.error
                << "; continuing with the remaining seeds\n";
    else
      rep.survivors.push_back(seed);
    rep.runs.push_back(std::move(s));
  }

  std::vector<double> viol, best, blocked;
  size_t iters = 0;
  for (const RunSummary& s : rep.runs) {
    if (!s.error.empty()) continue;
    viol.push_back(s.violations);
    blocked.push_back(s.blocked);
    if (std::isfinite(s.best_safe_return)) best.push_back(s.best_safe_return);
    iters = std::max(iters, s.iterations.size());
  }
  std::tie(rep.violations_mean, rep.violations_std) = detail::mean_std(viol);
  std::tie(rep.best_return_mean, rep.best_return_std) = detail::mean_std(best);
  std::tie(rep.blocked_mean, rep.blocked_std) = detail::mean_std(blocked);
  for (size_t i = 0; i < iters; ++i) {
    std::vector<double> r;
    for (const RunSummary& s : rep.runs)
      if (s.error.empty() && i < s.iterations.size())
        r.push_back(s.iterations[i].eval_return_mean);
    auto [m, sd] = detail::mean_std(r);
    rep.return_mean_per_iteration.push_back(m);
    rep.return_std_per_iteration.push_back(sd);
  }

  // Combined csv across seeds: concatenate the per-seed files byte for byte
  // (one header), then the aggregate report and the band plot.
  {
    std::ofstream all(dir / "episodes.csv", std::ios::out | std::ios::trunc);
    if (!all) throw ConfigError("cannot write combined episodes.csv");
    all << kEpisodeCsvHeader << "\n";
    for (const RunSummary& s : rep.runs) {
      if (!s.error.empty()) continue;
      std::ifstream in(root / s.run_id / "episodes.csv");
      std::string line;
      std::getline(in, line);  // skip the per-seed header
      while (std::getline(in, line))
        if (!line.empty()) all << line << "\n";
    }
  }

  json j;
  j["version"] = 1;
  j["config"] = path;
  j["name"] = rep.name;
  j["seeds"] = rep.seeds;
  j["survivors"] = rep.survivors;
  json failed = json::array();
  for (const RunSummary& s : rep.runs)
    if (!s.error.empty()) failed.push_back({{"seed", s.seed}, {"error", s.error}});
  j["failed"] = std::move(failed);
  j["table"] = {
      {"Con. Viol.",
       {{"mean", rep.violations_mean}, {"std", rep.violations_std}}},
      {"Best return",
       {{"mean", rep.best_return_mean}, {"std", rep.best_return_std}}},
      {"Blocked Ep.", {{"mean", rep.blocked_mean}, {"std", rep.blocked_std}}}};
  json per_iter = json::array();
  for (size_t i = 0; i < rep.return_mean_per_iteration.size(); ++i)
    per_iter.push_back({{"iteration", i + 1},
                        {"return_mean", rep.return_mean_per_iteration[i]},
                        {"return_std", rep.return_std_per_iteration[i]}});
  j["per_iteration"] = std::move(per_iter);
  json best_so_far = json::object();
  for (const RunSummary& s : rep.runs) {
    if (!s.error.empty()) continue;
    json curve = json::array();
    double best_yet = kNegInf;
    for (const IterationStats& it : s.iterations) {
      best_yet = std::max(best_yet, it.eval_return_mean);
      curve.push_back(best_yet);
    }
    best_so_far[std::to_string(s.seed)] = std::move(curve);
  }
  j["best_so_far"] = std::move(best_so_far);
  write_text_file((dir / "aggregate.json").string(), j.dump(2) + "\n");

  SvgSeries mean_series;
  mean_series.label = "mean over seeds";
  SvgBand band;
  for (size_t i = 0; i < rep.return_mean_per_iteration.size(); ++i) {
    const double x = static_cast<double>(i + 1);
    mean_series.x.push_back(x);
    mean_series.y.push_back(rep.return_mean_per_iteration[i]);
    band.x.push_back(x);
    band.lo.push_back(rep.return_mean_per_iteration[i] -
                      2.0 * rep.return_std_per_iteration[i]);
    band.hi.push_back(rep.return_mean_per_iteration[i] +
                      2.0 * rep.return_std_per_iteration[i]);
  }
  write_text_file((dir / "learning_curve.svg").string(),
                  svg_line_chart(rep.name + " (" +
                                     std::to_string(rep.survivors.size()) +
                                     " seeds, band = 2 std)",
                                 "training iteration", "native return",
                                 {mean_series}, {band}));
  return rep;
}

struct BaselineReport {
  double mean_return = 0.0;           // across all episodes of all seeds
  std::vector<double> per_seed_mean;  // aligned with the seed list
  int episodes_per_seed = 0;
};

// Uniform-random policies on the same episode budget (J + N episodes per
// seed), the standard comparison baseline for the learning curves.
inline BaselineReport baseline_random(const std::string& path,
                                      const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("baseline needs at least 1 seed");
  LoadedConfig loaded = load_config(path);
  const RunConfig& c = loaded.run;

  BaselineReport rep;
  rep.episodes_per_seed = c.J_init_rollouts + c.N_episodes;
  double total = 0.0;
  int count = 0;
  for (uint64_t seed : seeds) {
    auto env = make_environment(c.env_name);
    if (c.obs_noise_std.size()) env->set_obs_noise(c.obs_noise_std);
    SafetySpec spec;
    if (c.has_safety) {
      spec.root = c.constraint;
      spec.epsilon = c.epsilon;
      spec.xi = c.xi_init;
      spec.compile(env->spec().state_dim);
      env->attach_safety(&spec);
    }
    RunConfig cc = c;
    cc.seed = seed;
    cc.J_init_rollouts = rep.episodes_per_seed;
    Rng rng(seed);
    double seed_total = 0.0;
    int seed_count = 0;
    for (const EpisodeRecord& e : collect_random_rollouts(*env, cc, rng)) {
      seed_total += e.native_return();
      ++seed_count;
    }
    rep.per_seed_mean.push_back(seed_total / std::max(1, seed_count));
    total += seed_total;
    count += seed_count;
  }
  rep.mean_return = total / std::max(1, count);
  return rep;
}

// Rebuilds a learning-curve style chart from an episodes.csv alone: executed
// training episodes (random + learned) per run in order, aggregated across
// runs positionally with a 2-std band.
inline void plot_csv(const std::string& csv_path,
                     const std::string& out_svg = "") {
  const std::vector<CsvRow> rows = parse_episode_csv(csv_path);
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> curves;
  for (const CsvRow& r : rows) {
    if (r.kind != "random" && r.kind != "learned") continue;
    if (!curves.count(r.run_id)) order.push_back(r.run_id);
    curves[r.run_id].push_back(r.native_return);
  }
  if (curves.empty())
    throw ConfigError(csv_path + ": no executed training episodes to plot");

  size_t len = 0;
  for (const auto& [id, c] : curves) len = std::max(len, c.size());
  SvgSeries mean_series;
  mean_series.label = curves.size() > 1 ? "mean over runs" : order[0];
  SvgBand band;
  for (size_t i = 0; i < len; ++i) {
    std::vector<double> vals;
    for (const auto& [id, c] : curves)
      if (i < c.size()) vals.push_back(c[i]);
    const auto [m, sd] = detail::mean_std(vals);
    const double x = static_cast<double>(i + 1);
    mean_series.x.push_back(x);
    mean_series.y.push_back(m);
    if (curves.size() > 1) {
      band.x.push_back(x);
      band.lo.push_back(m - 2.0 * sd);
      band.hi.push_back(m + 2.0 * sd);
    }
  }
  std::vector<SvgBand> bands;
  if (!band.x.empty()) bands.push_back(band);

  std::string out = out_svg;
  if (out.empty()) {
    out = csv_path;
    const size_t dot = out.find_last_of('.');
    if (dot != std::string::npos) out = out.substr(0, dot);
    out += "_curve.svg";
  }
  write_text_file(out, svg_line_chart("episode returns", "executed episode",
                                      "native return", {mean_series}, bands));
}

}  // namespace safegp
