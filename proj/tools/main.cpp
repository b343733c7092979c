#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "safegp/harness.hpp"

namespace {

int usage() {
  std::cerr
      << "usage:\n"
         "  safegp run <config.cfg> [--seed K] [--out-dir DIR]\n"
         "  safegp multi <config.cfg> --seeds A,B,C [--out-dir DIR]\n"
         "  safegp baseline <config.cfg> --seeds A,B,C\n"
         "  safegp plot <episodes.csv> [--out FILE.svg]\n"
         "\n"
         "Artifacts are written under --out-dir, the SAFEGP_OUT_DIR\n"
         "environment variable, or ./out, in that order of preference.\n";
  return 2;
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
  std::vector<uint64_t> seeds;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t comma = s.find(',', start);
    const std::string tok = s.substr(start, comma - start);
    if (tok.empty()) throw safegp::ConfigError("empty seed in '" + s + "'");
    try {
      size_t pos = 0;
      seeds.push_back(std::stoull(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw safegp::ConfigError("bad seed '" + tok + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (seeds.empty()) throw safegp::ConfigError("no seeds given");
  return seeds;
}

struct Args {
  std::vector<std::string> positional;
  std::optional<uint64_t> seed;
  std::vector<uint64_t> seeds;
  std::string out_dir;
  std::string out_file;
};

Args parse_args(int argc, char** argv) {
  Args a;
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    auto value = [&](const char* flag) -> std::string {
      if (i + 1 >= argc)
        throw safegp::ConfigError(std::string(flag) + " needs a value");
      return argv[++i];
    };
    if (arg == "--seed") {
      a.seed = std::stoull(value("--seed"));
    } else if (arg == "--seeds") {
      a.seeds = parse_seeds(value("--seeds"));
    } else if (arg == "--out-dir") {
      a.out_dir = value("--out-dir");
    } else if (arg == "--out") {
      a.out_file = value("--out");
    } else if (!arg.empty() && arg[0] == '-') {
      throw safegp::ConfigError("unknown flag '" + arg + "'");
    } else {
      a.positional.push_back(arg);
    }
  }
  return a;
}

int cmd_run(const Args& a) {
  if (a.positional.size() != 1) return usage();
  const safegp::RunSummary s =
      safegp::run_from_config(a.positional[0], a.seed, a.out_dir);
  if (!s.error.empty()) {
    std::cerr << "run " << s.run_id << " failed: " << s.error << "\n";
    return 1;
  }
  std::cout << s.run_id << ": " << s.episodes_total << " episodes, "
            << s.violations << " violations, " << s.blocked
            << " blocked";
  if (std::isfinite(s.best_safe_return))
    std::cout << ", best safe return " << s.best_safe_return;
  std::cout << "\n";
  return 0;
}

int cmd_multi(const Args& a) {
  if (a.positional.size() != 1 || a.seeds.empty()) return usage();
  const safegp::MultiSeedReport rep =
      safegp::run_multi_seed(a.positional[0], a.seeds, a.out_dir);
  std::printf("%-12s %.2f +- %.2f\n", "Con. Viol.", rep.violations_mean,
              rep.violations_std);
  std::printf("%-12s %.2f +- %.2f\n", "Best return", rep.best_return_mean,
              rep.best_return_std);
  std::printf("%-12s %.2f +- %.2f\n", "Blocked Ep.", rep.blocked_mean,
              rep.blocked_std);
  return rep.survivors.size() == rep.seeds.size() ? 0 : 1;
}

int cmd_baseline(const Args& a) {
  if (a.positional.size() != 1 || a.seeds.empty()) return usage();
  const safegp::BaselineReport rep =
      safegp::baseline_random(a.positional[0], a.seeds);
  std::cout << "random baseline mean return: " << rep.mean_return << " ("
            << rep.episodes_per_seed << " episodes per seed)\n";
  for (size_t i = 0; i < a.seeds.size(); ++i)
    std::cout << "  seed " << a.seeds[i] << ": " << rep.per_seed_mean[i]
              << "\n";
  return 0;
}

int cmd_plot(const Args& a) {
  if (a.positional.size() != 1) return usage();
  safegp::plot_csv(a.positional[0], a.out_file);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) return usage();
  const std::string cmd = argv[1];
  try {
    const Args a = parse_args(argc, argv);
    if (cmd == "run") return cmd_run(a);
    if (cmd == "multi") return cmd_multi(a);
    if (cmd == "baseline") return cmd_baseline(a);
    if (cmd == "plot") return cmd_plot(a);
    return usage();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
