// Release gate for the library and the bundled experiments.  Each numbered
// check prints exactly one line, [PASS] or [FAIL] plus measured numbers, and
// the process exits 0 only if every selected check passed.
//
//   safegp_acceptance                 run all checks (1-7)
//   safegp_acceptance 1 5 6           run a subset
//   safegp_acceptance --configs DIR   where the bundled .cfg files live
//   safegp_acceptance --out DIR       artifact directory (default out/)
//
// Checks 2-4 train real policies and take minutes; 1 and 5-7 are fast.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "safegp/gp_fit.hpp"
#include "safegp/harness.hpp"
#include "safegp/objective.hpp"

using namespace safegp;
namespace fs = std::filesystem;

namespace {

struct CheckResult {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string secs(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.0fs", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Check 1: numerical core against independent oracles.

GpModel random_gp(Rng& rng, int n_points, int d, int outputs) {
  GpModel gp;
  gp.X = rng.normal_matrix(n_points, d);
  gp.Y = 0.8 * rng.normal_matrix(n_points, outputs);
  gp.hyper.resize(outputs);
  for (int a = 0; a < outputs; ++a) {
    gp.hyper[a].lengthscale = VectorXd(d);
    for (int j = 0; j < d; ++j)
      gp.hyper[a].lengthscale[j] = std::exp(rng.uniform(-0.3, 0.6));
    gp.hyper[a].signal_var = std::exp(rng.uniform(-0.5, 0.5));
    gp.hyper[a].noise_var = 0.01 * gp.hyper[a].signal_var;
  }
  gp.refresh();
  return gp;
}

MatrixXd random_spd(Rng& rng, int d, double scale) {
  const MatrixXd a = rng.normal_matrix(d, d);
  MatrixXd s = scale * (a * a.transpose()) / d;
  s.diagonal().array() += 0.05 * scale;
  return s;
}

struct McMoments {
  VectorXd mean;
  MatrixXd cov;
};

// Samples the input belief, evaluates the exact GP posterior at every sample,
// and accumulates output moments.  The diagonal picks up the expected
// predictive variance including noise, matching the analytic convention.
McMoments mc_moments(const GpModel& gp, const VectorXd& m, const MatrixXd& S,
                     long samples, Rng& rng) {
  const int d = gp.input_dim();
  const int n = gp.output_dim();
  const MatrixXd l = robust_cholesky(symmetrize(S));
  McMoments out;
  out.mean = VectorXd::Zero(n);
  MatrixXd second = MatrixXd::Zero(n, n);
  VectorXd var_acc = VectorXd::Zero(n);

  const long chunk = 50000;
  for (long done = 0; done < samples; done += chunk) {
    const long c = std::min(chunk, samples - done);
    MatrixXd zs = l * rng.normal_matrix(d, static_cast<int>(c));
    zs.colwise() += m;
    MatrixXd f(c, n);
    for (int a = 0; a < n; ++a) {
      const VectorXd inv_l = gp.hyper[a].lengthscale.cwiseInverse();
      const MatrixXd zl = zs.transpose() * inv_l.asDiagonal();
      const MatrixXd xl = gp.X * inv_l.asDiagonal();
      const VectorXd zsq = zl.rowwise().squaredNorm();
      const VectorXd xsq = xl.rowwise().squaredNorm();
      MatrixXd d2 = -2.0 * zl * xl.transpose();
      d2.colwise() += zsq;
      d2.rowwise() += xsq.transpose();
      const MatrixXd ks = gp.hyper[a].signal_var *
                          (-0.5 * d2.array().max(0.0)).exp().matrix();
      f.col(a) = ks * gp.alpha[a];
      var_acc[a] +=
          (double)c * (gp.hyper[a].signal_var + gp.hyper[a].noise_var);
      var_acc[a] -= ((ks * gp.w_inv[a]).cwiseProduct(ks)).sum();
    }
    out.mean += f.colwise().sum().transpose();
    second.noalias() += f.transpose() * f;
  }
  out.mean /= static_cast<double>(samples);
  second /= static_cast<double>(samples);
  out.cov = second - out.mean * out.mean.transpose();
  out.cov.diagonal() += var_acc / static_cast<double>(samples);
  return out;
}

double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

CheckResult check_numerical_core() {
  const long kSamples = 10000000;

  // Propagation moments vs brute force on 20 random GP families.
  Stopwatch mm_watch;
  double worst_mean = 0.0, worst_cov = 0.0;
  {
    Rng rng(20250801);
    for (int trial = 0; trial < 20; ++trial) {
      const int d = 2 + (trial % 2);
      const int outputs = 2 + (trial % 2);
      const int points = 8 + (trial % 3) * 4;
      const GpModel gp = random_gp(rng, points, d, outputs);
      const VectorXd m = 0.4 * rng.normal_vector(d);
      const MatrixXd S = random_spd(rng, d, 0.3);

      const SeSystem sys = se_system_from_gp(gp);
      const MomentMatch mm = se_moment_match(sys, m, S);
      Rng mc_rng(777000 + trial);
      const McMoments mc = mc_moments(gp, m, S, kSamples, mc_rng);

      worst_mean =
          std::max(worst_mean, (mm.mean - mc.mean).cwiseAbs().maxCoeff());
      worst_cov =
          std::max(worst_cov, (mm.cov - mc.cov).norm() / mc.cov.norm());
    }
  }
  const double mm_secs = mm_watch.seconds();
  const bool mm_ok = worst_mean <= 1e-2 && worst_cov <= 5e-2 && mm_secs < 120;

  // Expected exponential reward vs brute force on 20 random cases.
  double worst_reward = 0.0;
  {
    Rng rng(20250802);
    for (int trial = 0; trial < 20; ++trial) {
      const int d = 2 + (trial % 3);
      const VectorXd mu = rng.normal_vector(d);
      const MatrixXd S = random_spd(rng, d, 0.5);
      const VectorXd target = 0.5 * rng.normal_vector(d);
      VectorXd w(d);
      for (int j = 0; j < d; ++j) w[j] = std::exp(rng.uniform(-1.0, 1.0));
      const MatrixXd W = w.asDiagonal();

      const double analytic =
          expected_exponential_reward(mu, S, target, W).value;
      const MatrixXd l = robust_cholesky(symmetrize(S));
      double acc = 0.0;
      const long n_mc = 4000000, chunk = 100000;
      for (long done = 0; done < n_mc; done += chunk) {
        MatrixXd xs = l * rng.normal_matrix(d, static_cast<int>(chunk));
        xs.colwise() += mu - target;
        acc += (-0.5 * (w.asDiagonal() * xs.cwiseProduct(xs)).colwise().sum())
                   .array()
                   .exp()
                   .sum();
      }
      worst_reward = std::max(worst_reward,
                              std::abs(analytic - acc / (double)n_mc));
    }
  }
  const bool reward_ok = worst_reward <= 1e-3;

  // Containment probabilities: 1d vs the error function, correlated 2d vs
  // brute-force counting.
  double worst_1d = 0.0, worst_2d = 0.0;
  {
    Rng rng(20250803);
    for (int trial = 0; trial < 10; ++trial) {
      const double mu = rng.uniform(-1.0, 1.0);
      const double sd = std::exp(rng.uniform(-1.0, 0.7));
      const double a = mu - std::exp(rng.uniform(-1.0, 1.0));
      const double b = mu + std::exp(rng.uniform(-1.0, 1.0));
      const bool outside = trial % 2 == 1;
      SafetySpec spec;
      spec.root = SafetyNode::box(0, a, b, outside);
      spec.compile(1);
      const double exact = phi((b - mu) / sd) - phi((a - mu) / sd);
      const double want = outside ? 1.0 - exact : exact;
      const double got = safe_probability(
          spec, VectorXd::Constant(1, mu),
          MatrixXd::Constant(1, 1, sd * sd));
      worst_1d = std::max(worst_1d, std::abs(got - want));
    }
    for (int trial = 0; trial < 6; ++trial) {
      const VectorXd mu = 0.5 * rng.normal_vector(2);
      const MatrixXd S = random_spd(rng, 2, 0.8);
      VectorXd lo(2), hi(2);
      for (int j = 0; j < 2; ++j) {
        lo[j] = mu[j] - std::exp(rng.uniform(-0.7, 0.7));
        hi[j] = mu[j] + std::exp(rng.uniform(-0.7, 0.7));
      }
      SafetySpec spec;
      if (trial % 3 == 2)
        spec.root = SafetyNode::any_of({SafetyNode::box(0, lo[0], hi[0]),
                                        SafetyNode::box(1, lo[1], hi[1])});
      else
        spec.root = SafetyNode::all_of({SafetyNode::box(0, lo[0], hi[0]),
                                        SafetyNode::box(1, lo[1], hi[1])});
      spec.compile(2);
      const double got = safe_probability(spec, mu, S);

      const MatrixXd l = robust_cholesky(symmetrize(S));
      long hits = 0;
      const long chunk = 100000;
      for (long done = 0; done < kSamples; done += chunk) {
        MatrixXd xs = l * rng.normal_matrix(2, static_cast<int>(chunk));
        xs.colwise() += mu;
        const auto in0 = xs.row(0).array() >= lo[0] &&
                         xs.row(0).array() <= hi[0];
        const auto in1 = xs.row(1).array() >= lo[1] &&
                         xs.row(1).array() <= hi[1];
        hits += trial % 3 == 2 ? (in0 || in1).count() : (in0 && in1).count();
      }
      worst_2d = std::max(
          worst_2d, std::abs(got - (double)hits / (double)kSamples));
    }
  }
  const bool prob_ok = worst_1d <= 1e-3 && worst_2d <= 5e-3;

  // Policy gradient of the composite objective vs central differences at 5
  // random parameter vectors on a 2-state toy model.
  double worst_grad = 0.0;
  {
    Rng rng(20250804);
    GpModel gp;
    gp.X = rng.normal_matrix(12, 3);
    gp.Y.resize(12, 2);
    for (int i = 0; i < 12; ++i)
      for (int a = 0; a < 2; ++a)
        gp.Y(i, a) = 0.3 * std::sin(1.3 * gp.X(i, a) + 0.4 * a) +
                     0.2 * gp.X(i, (a + 1) % 3);
    gp.hyper.resize(2);
    for (int a = 0; a < 2; ++a) {
      gp.hyper[a].lengthscale = VectorXd::Constant(3, 1.2 + 0.1 * a);
      gp.hyper[a].signal_var = 1.0;
      gp.hyper[a].noise_var = 1e-4;
    }
    gp.refresh();
    const SeSystem sys = se_system_from_gp(gp);

    ObjectiveContext ctx;
    ctx.dynamics = &sys;
    ctx.reward.type = RewardType::exponential;
    ctx.reward.target = (VectorXd(2) << 0.5, 0.0).finished();
    ctx.reward.weight = MatrixXd::Identity(2, 2);
    SafetySpec spec;
    spec.root = SafetyNode::all_of(
        {SafetyNode::box(0, -2.0, 2.0), SafetyNode::box(1, -2.0, 2.0)});
    spec.xi = 3.0;
    spec.compile(2);
    ctx.safety = &spec;
    ctx.init.mean = VectorXd::Zero(2);
    ctx.init.cov = 0.05 * MatrixXd::Identity(2, 2);
    ctx.horizon = 6;

    Policy shape = make_linear_policy(2, 1, VectorXd::Constant(1, 1.5), rng);
    for (int trial = 0; trial < 5; ++trial) {
      VectorXd theta = shape.flatten();
      theta += 0.3 * rng.normal_vector(theta.size());
      const ObjectiveGradEval g = objective_and_gradient(ctx, shape, theta);
      for (int i = 0; i < theta.size(); ++i) {
        const double h = 1e-6 * (1.0 + std::abs(theta[i]));
        VectorXd tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        const double fd = (evaluate_objective(ctx, shape, tp).J -
                           evaluate_objective(ctx, shape, tm).J) /
                          (2 * h);
        worst_grad = std::max(
            worst_grad, std::abs(g.grad[i] - fd) / std::max(1.0, std::abs(fd)));
      }
    }
  }
  const bool grad_ok = worst_grad <= 1e-4;

  CheckResult r;
  r.pass = mm_ok && reward_ok && prob_ok && grad_ok;
  r.detail = "propagation mean err " + num(worst_mean) +
             " (<=0.01) cov err " + num(worst_cov) + " (<=0.05) in " +
             secs(mm_secs) + " (<120s), reward err " + num(worst_reward) +
             " (<=0.001), containment err 1d " + num(worst_1d) + " 2d " +
             num(worst_2d) + " (<=0.001/0.005), gradient rel err " +
             num(worst_grad) + " (<=0.0001)";
  return r;
}

// ---------------------------------------------------------------------------
// Checks 2-4: the bundled experiments.

CheckResult check_safe_cars(const std::string& cfg_dir,
                            const std::string& out_dir) {
  const std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
  Stopwatch watch;
  MultiSeedReport rep =
      run_multi_seed(cfg_dir + "/linear_cars_safe.cfg", seeds, out_dir);
  const double elapsed = watch.seconds();

  int zero_viol = 0, seeds_with_block = 0, total_block = 0;
  for (const RunSummary& s : rep.runs) {
    if (s.error.empty() && s.violations == 0) ++zero_viol;
    if (s.error.empty() && s.blocked > 0) ++seeds_with_block;
    total_block += s.blocked;
  }
  CheckResult r;
  r.pass = zero_viol >= 4 && seeds_with_block >= 1 && elapsed < 900 &&
           rep.survivors.size() == seeds.size();
  r.detail = std::to_string(zero_viol) + "/5 seeds zero violations (need 4), " +
             std::to_string(total_block) + " blocked episodes over " +
             std::to_string(seeds_with_block) + " seeds (need >=1), " +
             secs(elapsed) + " (<900s); returns " + num(rep.best_return_mean) +
             " +- " + num(rep.best_return_std) + " (report only)";
  return r;
}

CheckResult check_mountain_car(const std::string& cfg_dir,
                               const std::string& out_dir) {
  const std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
  const std::string cfg = cfg_dir + "/mountain_car.cfg";
  Stopwatch watch;
  MultiSeedReport rep = run_multi_seed(cfg, seeds, out_dir);
  const BaselineReport base = baseline_random(cfg, seeds);
  const double elapsed = watch.seconds();

  int beats_random = 0, reached = 0;
  for (const RunSummary& s : rep.runs) {
    if (!s.error.empty() || s.iterations.empty()) continue;
    if (s.iterations.back().eval_return_mean > base.mean_return)
      ++beats_random;
    if (s.goal_reached) ++reached;
  }
  CheckResult r;
  r.pass = beats_random >= 4 && reached >= 3 && elapsed < 1200 &&
           rep.survivors.size() == seeds.size();
  r.detail = std::to_string(beats_random) +
             "/5 seeds beat the random baseline of " + num(base.mean_return) +
             " (need 4), goal reached in " + std::to_string(reached) +
             "/5 (need 3), " + secs(elapsed) + " (<1200s)";
  return r;
}

CheckResult check_pendulum(const std::string& cfg_dir,
                           const std::string& out_dir) {
  const std::vector<uint64_t> seeds{0, 1, 2};
  Stopwatch watch;
  MultiSeedReport rep =
      run_multi_seed(cfg_dir + "/pendulum_swingup.cfg", seeds, out_dir);
  const double elapsed = watch.seconds();

  CheckResult r;
  if (rep.survivors.size() != seeds.size() ||
      rep.return_mean_per_iteration.empty()) {
    r.detail = "only " + std::to_string(rep.survivors.size()) + "/" +
               std::to_string(seeds.size()) + " seeds finished";
    return r;
  }
  // The untrained policy's performance is the random-rollout phase of the
  // same runs; the bar is covering half the gap from there to the best
  // mean-curve point.
  double random_mean = 0.0;
  for (const RunSummary& s : rep.runs) random_mean += s.random_return_mean;
  random_mean /= static_cast<double>(rep.runs.size());
  double best = kNegInf;
  for (double v : rep.return_mean_per_iteration) best = std::max(best, v);
  const double final_mean = rep.return_mean_per_iteration.back();
  const double bar = random_mean + 0.5 * (best - random_mean);

  r.pass = best > random_mean && final_mean >= bar && elapsed < 1800;
  r.detail = "mean curve: random " + num(random_mean) + " -> best " +
             num(best) + ", final " + num(final_mean) + " needs >= " +
             num(bar) + ", " + secs(elapsed) + " (<1800s)";
  return r;
}

// ---------------------------------------------------------------------------
// Check 5: gate semantics, pure and instant.

CheckResult check_gate() {
  RunConfig c;
  c.epsilon = 0.05;  // risk budget under test

  bool never_executed = true;
  for (double xi : {1e-2, 1.0, 30.0, 1000.0})
    never_executed = never_executed && !safety_gate(0.90, c, xi).deploy;

  bool strictly_up = true;
  double xi = 1.0;
  std::vector<double> trace{xi};
  for (int round = 0; round < 8; ++round) {
    const GateOutcome g = safety_gate(0.90, c, xi);
    strictly_up = strictly_up && !g.deploy && g.xi_after > xi;
    xi = g.xi_after;
    trace.push_back(xi);
  }

  // Replaying the same decision sequence gives identical outcomes.
  auto script = [&](std::vector<double>& decisions) {
    double w = 2.0;
    for (double q : {0.90, 0.93, 0.999, 0.90, 0.96, 0.9999}) {
      const GateOutcome g = safety_gate(q, c, w);
      decisions.push_back(g.deploy ? 1.0 : 0.0);
      decisions.push_back(g.risk);
      decisions.push_back(g.xi_after);
      w = g.xi_after;
    }
  };
  std::vector<double> run1, run2;
  script(run1);
  script(run2);
  const bool replay_ok = run1 == run2;

  CheckResult r;
  r.pass = never_executed && strictly_up && replay_ok;
  r.detail = std::string("q=0.90 at eps=0.05 ") +
             (never_executed ? "never deploys" : "DEPLOYED") +
             ", xi strictly increases over 8 blocks (" + num(trace.front()) +
             " -> " + num(trace.back()) + "), replay " +
             (replay_ok ? "identical" : "DIVERGED");
  return r;
}

// ---------------------------------------------------------------------------
// Check 6: byte-level determinism of run artifacts.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CheckResult check_determinism(const std::string& cfg_dir,
                              const std::string& out_dir) {
  const std::string cfg = cfg_dir + "/smoke_test.cfg";
  Stopwatch watch;
  const RunSummary a =
      run_from_config(cfg, 0, out_dir + "/determinism_a");
  const RunSummary b =
      run_from_config(cfg, 0, out_dir + "/determinism_b");
  const double elapsed = watch.seconds();

  CheckResult r;
  if (!a.error.empty() || !b.error.empty()) {
    r.detail = "run failed: " + (a.error.empty() ? b.error : a.error);
    return r;
  }
  const fs::path da = fs::path(out_dir) / "determinism_a" / a.run_id;
  const fs::path db = fs::path(out_dir) / "determinism_b" / b.run_id;
  const std::string csv_a = slurp(da / "episodes.csv");
  const bool csv_same = !csv_a.empty() && csv_a == slurp(db / "episodes.csv");
  const std::string sum_a = slurp(da / "summary.json");
  const bool sum_same = !sum_a.empty() && sum_a == slurp(db / "summary.json");

  r.pass = csv_same && sum_same;
  r.detail = std::string("episodes.csv ") +
             (csv_same ? "byte-identical" : "DIFFERS") + " (" +
             std::to_string(csv_a.size()) + " bytes), summary.json " +
             (sum_same ? "byte-identical" : "DIFFERS") + " across two runs of " +
             cfg + " seed 0, " + secs(elapsed);
  return r;
}

CheckResult check_exclusions() {
  CheckResult r;
  r.pass = true;
  r.detail =
      "swimmer and building-automation results depend on external physics "
      "and building simulators and are excluded by design; their numerical "
      "and safety machinery is covered by checks 1-5 (see README)";
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  std::string cfg_dir = "configs";
  std::string out_root;
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--configs" && i + 1 < argc) {
      cfg_dir = argv[++i];
    } else if (arg == "--out" && i + 1 < argc) {
      out_root = argv[++i];
    } else if (arg.size() == 1 && arg[0] >= '1' && arg[0] <= '7') {
      selected.insert(arg[0] - '0');
    } else {
      std::cerr << "usage: safegp_acceptance [--configs DIR] [--out DIR] "
                   "[criteria 1-7...]\n";
      return 2;
    }
  }
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7};

  if (!fs::exists(cfg_dir + "/mountain_car.cfg")) {
    std::cerr << "error: cannot find bundled configs under '" << cfg_dir
              << "'; run from the repository root or pass --configs\n";
    return 2;
  }
  const std::string out =
      (fs::path(detail::output_root(out_root)) / "acceptance").string();
  fs::create_directories(out);

  struct Entry {
    int id;
    const char* name;
    std::function<CheckResult()> run;
  };
  const std::vector<Entry> entries{
      {1, "numerical core", [&] { return check_numerical_core(); }},
      {2, "safe linear cars", [&] { return check_safe_cars(cfg_dir, out); }},
      {3, "mountain car", [&] { return check_mountain_car(cfg_dir, out); }},
      {4, "pendulum swing-up", [&] { return check_pendulum(cfg_dir, out); }},
      {5, "safety gate", [&] { return check_gate(); }},
      {6, "determinism", [&] { return check_determinism(cfg_dir, out); }},
      {7, "external-simulator exclusions", [&] { return check_exclusions(); }},
  };

  bool all_pass = true;
  for (const Entry& e : entries) {
    if (!selected.count(e.id)) continue;
    CheckResult r;
    try {
      r = e.run();
    } catch (const std::exception& ex) {
      r.pass = false;
      r.detail = std::string("exception: ") + ex.what();
    }
    all_pass = all_pass && r.pass;
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << e.id << ". " << e.name
              << ": " << r.detail << std::endl;
  }
  return all_pass ? 0 : 1;
}
