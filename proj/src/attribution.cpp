#include "refxplain/attribution.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "refxplain/rng.hpp"

namespace refxplain {

LrpRule LrpRule::Gamma(double g) {
  if (g < 0.0) throw std::invalid_argument("LRP: gamma must be >= 0");
  LrpRule r;
  r.kind = Kind::Gamma;
  r.gamma = g;
  return r;
}

LrpRule LrpRule::Epsilon(double e) {
  if (e < 0.0) throw std::invalid_argument("LRP: epsilon must be >= 0");
  LrpRule r;
  r.kind = Kind::Epsilon;
  r.epsilon = e;
  return r;
}

LrpRule LrpRule::AlphaBeta(double a, double b) {
  if (std::abs(a - b - 1.0) > 1e-12)
    throw std::invalid_argument("LRP: alpha-beta rule requires alpha - beta = 1");
  LrpRule r;
  r.kind = Kind::AlphaBeta;
  r.alpha = a;
  r.beta = b;
  return r;
}

LrpConfig LrpConfig::uniform(const DenseNetwork& net, const LrpRule& rule) {
  LrpConfig cfg;
  cfg.rules.assign(net.layers.size(), rule);
  return cfg;
}

namespace {

inline double sign_or_one(double v) { return v < 0.0 ? -1.0 : 1.0; }

// One propagation step through a weighted layer. Bias shares are never
// propagated further; they are absorbed and surface in the conservation gap.
Eigen::VectorXd lrp_layer(const Eigen::VectorXd& a_in, const DenseLayer& layer,
                          const Eigen::VectorXd& relevance, const LrpRule& rule,
                          bool ignore_biases) {
  const Eigen::Index n_out = layer.weights.rows();
  const Eigen::Index n_in = layer.weights.cols();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_in);

  for (Eigen::Index o = 0; o < n_out; ++o) {
    const double r = relevance(o);
    if (r == 0.0) continue;

    if (rule.kind == LrpRule::Kind::AlphaBeta) {
      Eigen::VectorXd z = a_in.cwiseProduct(layer.weights.row(o).transpose());
      double bias = ignore_biases ? 0.0 : layer.biases(o);
      Eigen::VectorXd zp = z.cwiseMax(0.0), zn = z.cwiseMin(0.0);
      double sp = zp.sum() + std::max(bias, 0.0);
      double sn = zn.sum() + std::min(bias, 0.0);
      if (sp != 0.0 && sn != 0.0) {
        out += (rule.alpha * r / sp) * zp;
        out -= (rule.beta * r / sn) * zn;
      } else if (sp != 0.0) {
        // single-sign neuron: degenerate to the z-rule so relevance conserves
        out += (r / sp) * zp;
      } else if (sn != 0.0) {
        out += (r / sn) * zn;
      }
      continue;
    }

    // Gamma (gamma = 0 gives the basic z-rule) and Epsilon
    Eigen::VectorXd w = layer.weights.row(o).transpose();
    if (rule.kind == LrpRule::Kind::Gamma && rule.gamma > 0.0) {
      // emphasize activation-reinforcing contributions: w+ for positive
      // inputs, w- for negative ones; keeps active-neuron denominators
      // bounded away from zero
      for (Eigen::Index i = 0; i < w.size(); ++i)
        w(i) += rule.gamma *
                (a_in(i) >= 0.0 ? std::max(w(i), 0.0) : std::min(w(i), 0.0));
    }
    Eigen::VectorXd z = a_in.cwiseProduct(w);
    double bias = layer.biases(o);
    if (rule.kind == LrpRule::Kind::Gamma && rule.gamma > 0.0)
      bias += rule.gamma * std::max(layer.biases(o), 0.0);
    if (ignore_biases) bias = 0.0;

    double denom = z.sum() + bias;
    if (rule.kind == LrpRule::Kind::Epsilon && rule.epsilon > 0.0)
      denom += rule.epsilon * sign_or_one(denom);
    if (denom == 0.0) continue;  // relevance of this neuron is dropped
    out += (r / denom) * z;
  }
  return out;
}

}  // namespace

Explanation lrp(const DenseNetwork& net, const Eigen::VectorXd& x,
                const LrpConfig& cfg, double reference_value) {
  if (cfg.rules.size() != net.layers.size())
    throw std::invalid_argument("lrp: one rule per weighted layer required");
  ActivationTrace trace = forward(net, x);

  Eigen::VectorXd relevance = Eigen::VectorXd::Constant(1, trace.y);
  for (int k = static_cast<int>(net.layers.size()) - 1; k >= 0; --k) {
    const Eigen::VectorXd& a_in = k == 0 ? x : trace.post[k - 1];
    relevance =
        lrp_layer(a_in, net.layers[k], relevance, cfg.rules[k], cfg.ignore_biases);
  }

  Explanation e;
  e.attributions = relevance;
  e.reference_value = reference_value;
  e.prediction = trace.y + reference_value;
  e.unit = net.output_unit;
  e.method = "lrp";
  e.conservation_gap = e.prediction - e.reference_value - e.sum();
  return e;
}

Explanation gradient_x_input(const DenseNetwork& net, const Eigen::VectorXd& x) {
  Explanation e;
  e.attributions = backprop_gradient(net, x).cwiseProduct(x);
  e.prediction = forward(net, x).y;
  e.unit = net.output_unit;
  e.method = "gradient_x_input";
  e.conservation_gap = e.prediction - e.sum();
  return e;
}

Explanation integrated_gradients(const ScalarFn& f, const GradientFn& grad,
                                 const Eigen::VectorXd& x, const Baseline& baseline,
                                 int steps) {
  if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  if (baseline.point.size() != x.size())
    throw std::invalid_argument("integrated_gradients: baseline dimension mismatch");

  const Eigen::VectorXd delta = x - baseline.point;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.size());
  for (int s = 0; s < steps; ++s) {
    double t = (s + 0.5) / steps;
    acc += grad(baseline.point + t * delta);
  }
  Explanation e;
  e.attributions = (acc / steps).cwiseProduct(delta);
  e.prediction = f(x);
  e.method = "integrated_gradients";
  // gap relative to f(x) - f(baseline)
  e.conservation_gap = e.prediction - f(baseline.point) - e.sum();
  return e;
}

Explanation integrated_gradients(const DenseNetwork& net, const Eigen::VectorXd& x,
                                 const Baseline& baseline, int steps) {
  Explanation e = integrated_gradients(
      net_function(net),
      [&net](const Eigen::VectorXd& p) { return backprop_gradient(net, p); }, x,
      baseline, steps);
  e.unit = net.output_unit;
  return e;
}

Explanation shapley_exact(const ScalarFn& f, const Eigen::VectorXd& x,
                          const Baseline& baseline) {
  const int d = static_cast<int>(x.size());
  if (baseline.point.size() != d)
    throw std::invalid_argument("shapley_exact: baseline dimension mismatch");
  if (d > 20)
    throw std::invalid_argument(
        "shapley_exact: d > 20 is infeasible by enumeration; use shapley_sampled");

  // value of every subset, indexed by bitmask
  const std::size_t n_subsets = std::size_t(1) << d;
  std::vector<double> value(n_subsets);
  Eigen::VectorXd point(d);
  for (std::size_t mask = 0; mask < n_subsets; ++mask) {
    for (int i = 0; i < d; ++i)
      point(i) = (mask >> i) & 1 ? x(i) : baseline.point(i);
    value[mask] = f(point);
  }

  // alpha(s) = s!(d-s-1)!/d! = 1 / (d * C(d-1, s))
  std::vector<long double> fact(d + 1, 1.0L);
  for (int i = 1; i <= d; ++i) fact[i] = fact[i - 1] * i;
  std::vector<double> alpha(d);
  for (int s = 0; s < d; ++s)
    alpha[s] = static_cast<double>(fact[s] * fact[d - s - 1] / fact[d]);

  Eigen::VectorXd R = Eigen::VectorXd::Zero(d);
  for (std::size_t mask = 0; mask < n_subsets; ++mask) {
    int s = std::popcount(mask);
    for (int i = 0; i < d; ++i) {
      if ((mask >> i) & 1) continue;
      R(i) += alpha[s] * (value[mask | (std::size_t(1) << i)] - value[mask]);
    }
  }

  Explanation e;
  e.attributions = R;
  e.prediction = value[n_subsets - 1];
  e.method = "shapley_exact";
  e.conservation_gap = e.prediction - value[0] - e.sum();
  return e;
}

Explanation shapley_sampled(const ScalarFn& f, const Eigen::VectorXd& x,
                            const Baseline& baseline, int n_permutations,
                            std::uint64_t seed) {
  const int d = static_cast<int>(x.size());
  if (baseline.point.size() != d)
    throw std::invalid_argument("shapley_sampled: baseline dimension mismatch");
  if (n_permutations < 1)
    throw std::invalid_argument("shapley_sampled: n_permutations must be >= 1");

  long long d_factorial = 1;
  if (d <= 8)
    for (int i = 2; i <= d; ++i) d_factorial *= i;
  const bool enumerate_all = d <= 8 && n_permutations == d_factorial;

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(d);
  std::vector<int> perm(d);
  std::iota(perm.begin(), perm.end(), 0);

  Eigen::VectorXd point = baseline.point;
  auto walk_permutation = [&](const std::vector<int>& p) {
    point = baseline.point;
    double prev = f(point);
    for (int i : p) {
      point(i) = x(i);
      double cur = f(point);
      double contrib = cur - prev;
      sum(i) += contrib;
      sumsq(i) += contrib * contrib;
      prev = cur;
    }
  };

  if (enumerate_all) {
    std::sort(perm.begin(), perm.end());
    do {
      walk_permutation(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    for (int m = 0; m < n_permutations; ++m) {
      // independent sub-seed per permutation block; parallel and serial agree
      Rng rng(seed_combine(seed, static_cast<std::uint64_t>(m)));
      std::shuffle(perm.begin(), perm.end(), rng);
      walk_permutation(perm);
    }
  }

  const double M = static_cast<double>(n_permutations);
  Explanation e;
  e.attributions = sum / M;
  e.standard_error.resize(d);
  for (int i = 0; i < d; ++i) {
    double var = M > 1 ? (sumsq(i) - sum(i) * sum(i) / M) / (M - 1) : 0.0;
    e.standard_error(i) = std::sqrt(std::max(0.0, var) / M);
  }
  e.prediction = f(x);
  e.method = "shapley_sampled";
  e.conservation_gap = e.prediction - f(baseline.point) - e.sum();
  return e;
}

ScalarFn clip_positive(ScalarFn f, double y_ref) {
  return [f = std::move(f), y_ref](const Eigen::VectorXd& x) {
    return std::max(0.0, f(x) - y_ref);
  };
}

ScalarFn clip_negative(ScalarFn f, double y_ref) {
  return [f = std::move(f), y_ref](const Eigen::VectorXd& x) {
    return std::min(0.0, f(x) - y_ref);
  };
}

ScalarFn net_function(const DenseNetwork& net) {
  return [net](const Eigen::VectorXd& x) { return forward(net, x).y; };
}

std::string explanation_to_json(const Explanation& e, const Baseline* baseline) {
  nlohmann::ordered_json j;
  j["method"] = e.method;
  j["params"] = nlohmann::ordered_json::object();
  j["prediction"] = e.prediction;
  j["reference_value"] = e.reference_value;
  j["unit"] = e.unit;
  if (baseline)
    j["baseline"] = std::vector<double>(baseline->point.data(),
                                        baseline->point.data() + baseline->point.size());
  else
    j["baseline"] = nullptr;
  j["attributions"] = std::vector<double>(
      e.attributions.data(), e.attributions.data() + e.attributions.size());
  j["conservation_gap"] = e.conservation_gap;
  if (e.standard_error.size() > 0)
    j["standard_error"] = std::vector<double>(
        e.standard_error.data(), e.standard_error.data() + e.standard_error.size());
  return j.dump(2);
}

}  // namespace refxplain
