#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "safegp/env.hpp"
#include "safegp/learning.hpp"

namespace safegp {

// Experiment config files: flat INI-style text with [env], [loop], [reward],
// [constraints], and [optimizer] sections.  Keys use the common shorthand
// (J, N, H, SUBS, m_init, S_init, maxiter, th) with descriptive aliases.
// Every diagnostic carries file, line, section, and key.

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

class IniFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;
    mutable bool used = false;
  };

  static IniFile parse(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    IniFile f;
    f.path_ = path;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const size_t hash = line.find_first_of("#;");
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          f.fail(lineno, "unterminated section header '" + line + "'");
        section = detail::trim(line.substr(1, line.size() - 2));
        if (section.empty()) f.fail(lineno, "empty section name");
        f.sections_[section];
        continue;
      }
      const size_t eq = line.find('=');
      if (eq == std::string::npos)
        f.fail(lineno, "expected 'key = value', got '" + line + "'");
      if (section.empty())
        f.fail(lineno, "key outside any [section]");
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (key.empty()) f.fail(lineno, "empty key");
      auto& sec = f.sections_[section];
      if (sec.count(key))
        f.fail(lineno, "duplicate key '" + key + "' in [" + section + "]");
      sec[key] = Entry{value, lineno};
    }
    return f;
  }

  const std::string& path() const { return path_; }

  bool has_section(const std::string& s) const { return sections_.count(s); }

  bool has(const std::string& sec, const std::string& key) const {
    auto it = sections_.find(sec);
    return it != sections_.end() && it->second.count(key);
  }

  // First present alias wins; returns nullptr if none present.
  const Entry* find(const std::string& sec,
                    const std::vector<std::string>& aliases) const {
    auto it = sections_.find(sec);
    if (it == sections_.end()) return nullptr;
    for (const std::string& k : aliases) {
      auto e = it->second.find(k);
      if (e != it->second.end()) {
        e->second.used = true;
        return &e->second;
      }
    }
    return nullptr;
  }

  std::string get_string(const std::string& sec,
                         const std::vector<std::string>& aliases) const {
    const Entry* e = find(sec, aliases);
    if (!e) miss(sec, aliases);
    return e->value;
  }

  std::string get_string(const std::string& sec,
                         const std::vector<std::string>& aliases,
                         const std::string& dflt) const {
    const Entry* e = find(sec, aliases);
    return e ? e->value : dflt;
  }

  long get_int(const std::string& sec,
               const std::vector<std::string>& aliases) const {
    const Entry* e = find(sec, aliases);
    if (!e) miss(sec, aliases);
    return to_int(sec, aliases[0], *e);
  }

  long get_int(const std::string& sec, const std::vector<std::string>& aliases,
               long dflt) const {
    const Entry* e = find(sec, aliases);
    return e ? to_int(sec, aliases[0], *e) : dflt;
  }

  double get_double(const std::string& sec,
                    const std::vector<std::string>& aliases) const {
    const Entry* e = find(sec, aliases);
    if (!e) miss(sec, aliases);
    return to_double(sec, aliases[0], *e);
  }

  double get_double(const std::string& sec,
                    const std::vector<std::string>& aliases,
                    double dflt) const {
    const Entry* e = find(sec, aliases);
    return e ? to_double(sec, aliases[0], *e) : dflt;
  }

  bool get_bool(const std::string& sec, const std::vector<std::string>& aliases,
                bool dflt) const {
    const Entry* e = find(sec, aliases);
    if (!e) return dflt;
    std::string v = e->value;
    for (char& c : v) c = static_cast<char>(std::tolower(c));
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    fail(e->line, "[" + sec + "] " + aliases[0] + ": expected a boolean, got '" +
                      e->value + "'");
    return dflt;
  }

  VectorXd get_vector(const std::string& sec,
                      const std::vector<std::string>& aliases) const {
    const Entry* e = find(sec, aliases);
    if (!e) miss(sec, aliases);
    return to_vector(sec, aliases[0], *e);
  }

  // Scalar broadcasts to dim entries; a comma list must have exactly dim.
  VectorXd get_vector_dim(const std::string& sec,
                          const std::vector<std::string>& aliases,
                          int dim) const {
    const Entry* e = find(sec, aliases);
    if (!e) miss(sec, aliases);
    VectorXd v = to_vector(sec, aliases[0], *e);
    if (v.size() == 1 && dim != 1) return VectorXd::Constant(dim, v[0]);
    if (v.size() != dim)
      fail(e->line, "[" + sec + "] " + aliases[0] + ": expected " +
                        std::to_string(dim) + " entries, got " +
                        std::to_string(v.size()));
    return v;
  }

  // Complains about the first key that no reader consumed (typo guard).
  void check_all_used() const {
    for (const auto& [sec, entries] : sections_)
      for (const auto& [key, e] : entries)
        if (!e.used)
          fail(e.line, "unknown key '" + key + "' in [" + sec + "]");
  }

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ConfigError(path_ + ":" + std::to_string(line) + ": " + msg);
  }

 private:
  [[noreturn]] void miss(const std::string& sec,
                         const std::vector<std::string>& aliases) const {
    std::string names = aliases[0];
    for (size_t i = 1; i < aliases.size(); ++i) names += "' or '" + aliases[i];
    throw ConfigError(path_ + ": missing required key '" + names + "' in [" +
                      sec + "]");
  }

  long to_int(const std::string& sec, const std::string& key,
              const Entry& e) const {
    try {
      size_t pos = 0;
      const long v = std::stol(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      fail(e.line, "[" + sec + "] " + key + ": expected an integer, got '" +
                       e.value + "'");
    }
  }

  double to_double(const std::string& sec, const std::string& key,
                   const Entry& e) const {
    try {
      size_t pos = 0;
      const double v = std::stod(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      fail(e.line, "[" + sec + "] " + key + ": expected a number, got '" +
                       e.value + "'");
    }
  }

  VectorXd to_vector(const std::string& sec, const std::string& key,
                     const Entry& e) const {
    std::vector<double> vals;
    std::stringstream ss(e.value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = detail::trim(tok);
      if (tok.empty())
        fail(e.line, "[" + sec + "] " + key + ": empty list entry");
      try {
        size_t pos = 0;
        vals.push_back(std::stod(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        fail(e.line,
             "[" + sec + "] " + key + ": expected a number, got '" + tok + "'");
      }
    }
    if (vals.empty())
      fail(e.line, "[" + sec + "] " + key + ": expected at least one number");
    return Eigen::Map<VectorXd>(vals.data(), vals.size());
  }

  std::string path_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

// Constraint expressions: inside(dim, lo, hi) / outside(dim, lo, hi) composed
// with 'and' / 'or' and parentheses; 'and' binds tighter.  Bounds accept
// inf / -inf.  Example: outside(0, -1, 1) or outside(2, -1, 1).
namespace detail {

class ConstraintParser {
 public:
  ConstraintParser(const std::string& text, const IniFile& file, int line,
                   int state_dim)
      : text_(text), file_(file), line_(line), dim_(state_dim) {}

  SafetyNode parse() {
    SafetyNode n = parse_or();
    skip_ws();
    if (pos_ != text_.size())
      fail("unexpected trailing text '" + text_.substr(pos_) + "'");
    return n;
  }

 private:
  SafetyNode parse_or() {
    std::vector<SafetyNode> terms{parse_and()};
    while (eat_word("or")) terms.push_back(parse_and());
    if (terms.size() == 1) return terms[0];
    return SafetyNode::any_of(terms);
  }

  SafetyNode parse_and() {
    std::vector<SafetyNode> factors{parse_factor()};
    while (eat_word("and")) factors.push_back(parse_factor());
    if (factors.size() == 1) return factors[0];
    return SafetyNode::all_of(factors);
  }

  SafetyNode parse_factor() {
    skip_ws();
    if (eat_char('(')) {
      SafetyNode n = parse_or();
      expect_char(')');
      return n;
    }
    bool outside = false;
    if (eat_word("outside")) {
      outside = true;
    } else if (!eat_word("inside")) {
      fail("expected inside(...), outside(...), or '('");
    }
    expect_char('(');
    const int d = parse_dim();
    expect_char(',');
    const double lo = parse_bound();
    expect_char(',');
    const double hi = parse_bound();
    expect_char(')');
    if (!(lo < hi))
      fail("lower bound " + std::to_string(lo) + " must be below upper bound " +
           std::to_string(hi));
    return SafetyNode::box(d, lo, hi, outside);
  }

  int parse_dim() {
    skip_ws();
    size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(text_[pos_])) ++pos_;
    if (pos_ == start) fail("expected a state dimension index");
    const int d = std::stoi(text_.substr(start, pos_ - start));
    if (d < 0 || d >= dim_)
      fail("dimension " + std::to_string(d) + " out of range [0, " +
           std::to_string(dim_ - 1) + "]");
    return d;
  }

  double parse_bound() {
    skip_ws();
    if (eat_word("inf")) return kPosInf;
    size_t start = pos_;
    if (pos_ < text_.size() && (text_[pos_] == '-' || text_[pos_] == '+'))
      ++pos_;
    if (eat_word("inf")) return text_[start] == '-' ? kNegInf : kPosInf;
    while (pos_ < text_.size() &&
           (std::isdigit(text_[pos_]) || text_[pos_] == '.' ||
            text_[pos_] == 'e' || text_[pos_] == 'E' ||
            ((text_[pos_] == '-' || text_[pos_] == '+') &&
             (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E'))))
      ++pos_;
    if (pos_ == start) fail("expected a bound (number or inf)");
    try {
      return std::stod(text_.substr(start, pos_ - start));
    } catch (const std::exception&) {
      fail("bad number '" + text_.substr(start, pos_ - start) + "'");
    }
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(text_[pos_])) ++pos_;
  }

  bool eat_char(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect_char(char c) {
    if (!eat_char(c)) fail(std::string("expected '") + c + "'");
  }

  bool eat_word(const std::string& w) {
    skip_ws();
    if (text_.compare(pos_, w.size(), w) == 0) {
      const size_t after = pos_ + w.size();
      if (after == text_.size() || !std::isalnum(text_[after])) {
        pos_ = after;
        return true;
      }
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) {
    file_.fail(line_, "[constraints] expr: " + msg);
  }

  const std::string text_;
  const IniFile& file_;
  const int line_;
  const int dim_;
  size_t pos_ = 0;
};

}  // namespace detail

inline SafetyNode parse_constraint_expr(const std::string& text,
                                        const IniFile& file, int line,
                                        int state_dim) {
  return detail::ConstraintParser(text, file, line, state_dim).parse();
}

struct LoadedConfig {
  RunConfig run;
  std::string name;  // config file stem, used for run ids
};

inline LoadedConfig load_config(const std::string& path) {
  const IniFile f = IniFile::parse(path);
  LoadedConfig out;
  RunConfig& c = out.run;

  {
    size_t slash = path.find_last_of("/\\");
    std::string stem = slash == std::string::npos ? path : path.substr(slash + 1);
    size_t dot = stem.find_last_of('.');
    if (dot != std::string::npos) stem = stem.substr(0, dot);
    out.name = stem;
  }

  c.env_name = f.get_string("env", {"name"});
  auto env = make_environment(c.env_name);  // also validates the name
  const int n = env->spec().state_dim;
  const int noise_dims = static_cast<int>(env->spec().obs_noise_std.size());
  if (f.has("env", "obs_noise_std"))
    c.obs_noise_std = f.get_vector_dim("env", {"obs_noise_std"}, noise_dims);

  c.J_init_rollouts = static_cast<int>(f.get_int("loop", {"J", "init_rollouts"}));
  c.N_episodes = static_cast<int>(f.get_int("loop", {"N", "episodes"}));
  c.H = static_cast<int>(f.get_int("loop", {"H", "horizon"}));
  c.SUBS = static_cast<int>(f.get_int("loop", {"SUBS", "subsample"}, 1));
  c.mu0 = f.get_vector_dim("loop", {"m_init", "mu0"}, n);
  c.Sigma0 = f.get_vector_dim("loop", {"S_init", "Sigma0"}, n).asDiagonal();
  c.seed = static_cast<uint64_t>(f.get_int("loop", {"seed"}, 0));
  c.eval_repeats = static_cast<int>(f.get_int("loop", {"eval_repeats"}, 5));
  c.normalize_data = f.get_bool("loop", {"normalize_data"}, true);
  c.max_points = static_cast<int>(f.get_int("loop", {"max_points"}, 0));

  const std::string rtype = f.get_string("reward", {"type"});
  if (rtype == "linear") {
    c.reward.type = RewardType::linear;
    c.reward.direction = f.get_vector_dim("reward", {"direction"}, n);
  } else if (rtype == "exponential") {
    c.reward.type = RewardType::exponential;
    c.reward.target = f.get_vector_dim("reward", {"target"}, n);
    c.reward.weight = f.get_vector_dim("reward", {"weight"}, n).asDiagonal();
  } else {
    const auto* e = f.find("reward", {"type"});
    f.fail(e->line, "[reward] type: expected linear or exponential, got '" +
                        rtype + "'");
  }

  if (f.has_section("constraints")) {
    c.has_safety = true;
    const auto* expr = f.find("constraints", {"expr"});
    if (!expr)
      throw ConfigError(path + ": [constraints] requires an expr key");
    c.constraint = parse_constraint_expr(expr->value, f, expr->line, n);
    c.epsilon = f.get_double("constraints", {"th", "epsilon"}, 0.05);
    c.xi_init = f.get_double("constraints", {"xi_init"}, 30.0);
    c.xi_up = f.get_double("constraints", {"xi_up"}, 2.0);
    c.xi_down = f.get_double("constraints", {"xi_down"}, 0.7);
    c.xi_min = f.get_double("constraints", {"xi_min"}, 1e-2);
    c.conservative_fraction =
        f.get_double("constraints", {"conservative_fraction"}, 0.25);
    c.max_gate_retries =
        static_cast<int>(f.get_int("constraints", {"max_gate_retries"}, 5));
  }

  c.maxiter = static_cast<int>(f.get_int("optimizer", {"maxiter"}, 50));
  c.restarts = static_cast<int>(f.get_int("optimizer", {"restarts"}, 3));
  c.policy_kind = f.get_string("optimizer", {"policy", "controller"}, "rbf");
  c.n_basis = static_cast<int>(f.get_int("optimizer", {"n_basis", "basis"}, 25));
  c.fit_restarts = static_cast<int>(f.get_int("optimizer", {"fit_restarts"}, 3));
  c.fit_maxiter = static_cast<int>(f.get_int("optimizer", {"fit_maxiter"}, 100));
  c.fixed_noise = f.get_bool("optimizer", {"fixed_noise"}, false);
  c.fixed_noise_var = f.get_double("optimizer", {"fixed_noise_var"}, 1e-4);

  f.check_all_used();
  c.validate(n, env->spec().control_dim);

  // Compiling the constraint up front surfaces structural problems (depth,
  // branch count) with the config path attached.
  if (c.has_safety) {
    SafetySpec probe;
    probe.root = c.constraint;
    probe.epsilon = c.epsilon;
    probe.xi = c.xi_init;
    try {
      probe.compile(n);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": [constraints] " + e.what());
    }
  }
  return out;
}

}  // namespace safegp
