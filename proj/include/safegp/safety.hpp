#pragma once

#include <map>
#include <string>
#include <vector>

#include "safegp/mvn_rect.hpp"

namespace safegp {

// Safe-set descriptions: axis-aligned interval predicates on single state
// dimensions, composed by AND/OR up to depth two with at most three OR
// branches.  Expressions are lowered once into a signed sum of rectangle
// probabilities (inclusion-exclusion), which makes both evaluation under a
// Gaussian belief and its gradients exact sums over rect_prob terms.

struct SafetyNode {
  enum class Type { box, and_node, or_node };
  Type type = Type::box;
  // Leaf payload: the predicate "x[dim] inside [lower, upper]", or its
  // complement when outside is set.
  int dim = 0;
  double lower = kNegInf;
  double upper = kPosInf;
  bool outside = false;
  std::vector<SafetyNode> children;

  static SafetyNode box(int dim, double lo, double hi, bool outside = false) {
    SafetyNode n;
    n.type = Type::box;
    n.dim = dim;
    n.lower = lo;
    n.upper = hi;
    n.outside = outside;
    return n;
  }
  static SafetyNode all_of(std::vector<SafetyNode> cs) {
    SafetyNode n;
    n.type = Type::and_node;
    n.children = std::move(cs);
    return n;
  }
  static SafetyNode any_of(std::vector<SafetyNode> cs) {
    SafetyNode n;
    n.type = Type::or_node;
    n.children = std::move(cs);
    return n;
  }
};

namespace detail {

struct Interval {
  double lo = kNegInf;
  double hi = kPosInf;
};

struct Atom {
  double sign = 1.0;
  std::map<int, Interval> box;  // dim -> interval, conjunction
};

using AtomList = std::vector<Atom>;

inline AtomList atom_and(const AtomList& a, const AtomList& b) {
  AtomList out;
  for (const Atom& x : a) {
    for (const Atom& y : b) {
      Atom z;
      z.sign = x.sign * y.sign;
      z.box = x.box;
      bool empty = false;
      for (const auto& [dim, iv] : y.box) {
        auto it = z.box.find(dim);
        if (it == z.box.end()) {
          z.box[dim] = iv;
        } else {
          it->second.lo = std::max(it->second.lo, iv.lo);
          it->second.hi = std::min(it->second.hi, iv.hi);
          if (it->second.lo >= it->second.hi) empty = true;
        }
      }
      if (!empty) out.push_back(std::move(z));
    }
  }
  return out;
}

inline AtomList atom_complement(const AtomList& a) {
  AtomList out;
  Atom one;
  out.push_back(one);
  for (const Atom& x : a) {
    Atom neg = x;
    neg.sign = -x.sign;
    out.push_back(std::move(neg));
  }
  return out;
}

inline AtomList lower_node(const SafetyNode& n) {
  switch (n.type) {
    case SafetyNode::Type::box: {
      AtomList inside;
      Atom a;
      a.box[n.dim] = {n.lower, n.upper};
      inside.push_back(std::move(a));
      return n.outside ? atom_complement(inside) : inside;
    }
    case SafetyNode::Type::and_node: {
      AtomList acc;
      acc.push_back(Atom{});
      for (const SafetyNode& c : n.children)
        acc = atom_and(acc, lower_node(c));
      return acc;
    }
    case SafetyNode::Type::or_node: {
      // OR via De Morgan: complement of the AND of complements.
      AtomList acc;
      acc.push_back(Atom{});
      for (const SafetyNode& c : n.children)
        acc = atom_and(acc, atom_complement(lower_node(c)));
      return atom_complement(acc);
    }
  }
  return {};
}

inline void merge_atoms(AtomList& atoms) {
  AtomList out;
  for (Atom& a : atoms) {
    bool merged = false;
    for (Atom& b : out) {
      if (b.box.size() == a.box.size()) {
        bool same = true;
        auto it = b.box.begin();
        for (const auto& [dim, iv] : a.box) {
          if (it->first != dim || it->second.lo != iv.lo ||
              it->second.hi != iv.hi) {
            same = false;
            break;
          }
          ++it;
        }
        if (same) {
          b.sign += a.sign;
          merged = true;
          break;
        }
      }
    }
    if (!merged) out.push_back(std::move(a));
  }
  atoms.clear();
  for (Atom& a : out)
    if (a.sign != 0.0) atoms.push_back(std::move(a));
}

inline int node_depth(const SafetyNode& n) {
  if (n.type == SafetyNode::Type::box) return 0;
  int d = 0;
  for (const SafetyNode& c : n.children) d = std::max(d, node_depth(c));
  return d + 1;
}

inline int count_boxes(const SafetyNode& n) {
  if (n.type == SafetyNode::Type::box) return 1;
  int c = 0;
  for (const SafetyNode& ch : n.children) c += count_boxes(ch);
  return c;
}

inline void check_or_breadth(const SafetyNode& n) {
  if (n.type == SafetyNode::Type::or_node && n.children.size() > 3)
    throw ConfigError("safety expression: OR nodes allow at most 3 branches");
  for (const SafetyNode& c : n.children) check_or_breadth(c);
}

inline void check_dims(const SafetyNode& n, int state_dim) {
  if (n.type == SafetyNode::Type::box) {
    if (n.dim < 0 || n.dim >= state_dim)
      throw ConfigError("safety expression: dimension index " +
                        std::to_string(n.dim) + " out of range for state of " +
                        std::to_string(state_dim) + " dims");
    if (!(n.lower < n.upper))
      throw ConfigError("safety expression: empty interval on dim " +
                        std::to_string(n.dim));
  }
  for (const SafetyNode& c : n.children) check_dims(c, state_dim);
}

}  // namespace detail

// A lowered safe-set: q(belief) = sum_k sign_k P(x_dims in rect_k), plus the
// gate parameters (risk threshold epsilon, current safety weight xi).
struct SafetySpec {
  SafetyNode root;
  double epsilon = 0.05;  // accepted risk of an unsafe episode, in (0, 1)
  double xi = 1.0;        // weight of the safety term in the objective
  std::vector<detail::Atom> atoms;
  int state_dim = 0;

  void compile(int n_dims) {
    state_dim = n_dims;
    if (!(epsilon > 0.0 && epsilon < 1.0))
      throw ConfigError("safety epsilon must lie in (0, 1)");
    if (!(xi > 0.0)) throw ConfigError("safety weight xi must be positive");
    if (detail::count_boxes(root) < 1)
      throw ConfigError("safety expression needs at least one box");
    if (detail::node_depth(root) > 2)
      throw ConfigError("safety expression: nesting deeper than 2 levels");
    detail::check_or_breadth(root);
    detail::check_dims(root, n_dims);
    atoms = detail::lower_node(root);
    detail::merge_atoms(atoms);
  }

  bool compiled() const { return !atoms.empty() || state_dim > 0; }

  // Ground-truth indicator on a concrete state.
  bool is_safe(const VectorXd& x) const { return eval_node(root, x); }

 private:
  static bool eval_node(const SafetyNode& n, const VectorXd& x) {
    switch (n.type) {
      case SafetyNode::Type::box: {
        const bool in = x[n.dim] >= n.lower && x[n.dim] <= n.upper;
        return n.outside ? !in : in;
      }
      case SafetyNode::Type::and_node: {
        for (const SafetyNode& c : n.children)
          if (!eval_node(c, x)) return false;
        return true;
      }
      case SafetyNode::Type::or_node: {
        for (const SafetyNode& c : n.children)
          if (eval_node(c, x)) return true;
        return false;
      }
    }
    return false;
  }
};

// P(x safe) for x ~ N(mu, Sigma).
inline double safe_probability(const SafetySpec& spec, const VectorXd& mu,
                               const MatrixXd& sigma,
                               const RectOptions& opt = {}) {
  double q = 0.0;
  for (const detail::Atom& a : spec.atoms) {
    if (a.box.empty()) {
      q += a.sign;
      continue;
    }
    const int d = static_cast<int>(a.box.size());
    VectorXd m(d), l(d), u(d);
    MatrixXd s(d, d);
    int i = 0;
    std::vector<int> dims(d);
    for (const auto& [dim, iv] : a.box) {
      dims[i] = dim;
      m[i] = mu[dim];
      l[i] = iv.lo;
      u[i] = iv.hi;
      ++i;
    }
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) s(r, c) = sigma(dims[r], dims[c]);
    q += a.sign * rect_prob(m, s, l, u, opt);
  }
  return std::min(1.0, std::max(0.0, q));
}

struct SafeProbGrad {
  double q = 0.0;
  VectorXd d_mu;
  MatrixXd d_sigma;
};

inline SafeProbGrad safe_probability_grad(const SafetySpec& spec,
                                          const VectorXd& mu,
                                          const MatrixXd& sigma,
                                          const RectOptions& opt = {}) {
  const int n = static_cast<int>(mu.size());
  SafeProbGrad out;
  out.d_mu = VectorXd::Zero(n);
  out.d_sigma = MatrixXd::Zero(n, n);
  double q = 0.0;
  for (const detail::Atom& a : spec.atoms) {
    if (a.box.empty()) {
      q += a.sign;
      continue;
    }
    const int d = static_cast<int>(a.box.size());
    VectorXd m(d), l(d), u(d);
    MatrixXd s(d, d);
    std::vector<int> dims(d);
    int i = 0;
    for (const auto& [dim, iv] : a.box) {
      dims[i] = dim;
      m[i] = mu[dim];
      l[i] = iv.lo;
      u[i] = iv.hi;
      ++i;
    }
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) s(r, c) = sigma(dims[r], dims[c]);
    const RectGrad g = rect_prob_grad(m, s, l, u, opt);
    q += a.sign * g.p;
    for (int r = 0; r < d; ++r) {
      out.d_mu[dims[r]] += a.sign * g.d_mu[r];
      for (int c = 0; c < d; ++c)
        out.d_sigma(dims[r], dims[c]) += a.sign * g.d_sigma(r, c);
    }
  }
  // Clamping for the value only; the gradient keeps the unclamped
  // sensitivities, which is what optimization needs in the interior.
  out.q = std::min(1.0, std::max(0.0, q));
  return out;
}

}  // namespace safegp
