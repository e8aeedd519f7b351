#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>

#include "refxplain/network.hpp"

namespace refxplain {

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

// Per-feature attribution of a prediction relative to a reference value.
// conservation_gap = prediction - reference_value - sum(attributions).
struct Explanation {
  Eigen::VectorXd attributions;
  double prediction = 0.0;
  double reference_value = 0.0;
  std::string unit;
  std::string method;
  double conservation_gap = 0.0;
  // Per-feature standard error; only filled by the sampled Shapley estimator.
  Eigen::VectorXd standard_error;

  double sum() const { return attributions.sum(); }
};

struct LrpRule {
  enum class Kind { Gamma, Epsilon, AlphaBeta };
  Kind kind = Kind::Gamma;
  double gamma = 0.0;
  double epsilon = 0.0;
  double alpha = 1.0;
  double beta = 0.0;

  static LrpRule Gamma(double g);
  static LrpRule Epsilon(double e);
  static LrpRule AlphaBeta(double a, double b);
};

struct LrpConfig {
  std::vector<LrpRule> rules;  // one per weighted layer, input side first
  bool ignore_biases = false;

  // Same rule for every layer of `net`.
  static LrpConfig uniform(const DenseNetwork& net, const LrpRule& rule);
};

struct Baseline {
  Eigen::VectorXd point;

  static Baseline zeros(Eigen::Index d) { return {Eigen::VectorXd::Zero(d)}; }
};

// Layer-wise relevance propagation. Relevance starts at the network output;
// for a shifted/restructured net that output already equals f(x) - y_ref, so
// pass the reference here to keep the stored prediction in original terms.
// Bias shares are absorbed (not propagated) and show up in conservation_gap.
Explanation lrp(const DenseNetwork& net, const Eigen::VectorXd& x,
                const LrpConfig& cfg, double reference_value = 0.0);

Explanation gradient_x_input(const DenseNetwork& net, const Eigen::VectorXd& x);

using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Straight-line path from baseline to x, midpoint-rule discretization.
Explanation integrated_gradients(const DenseNetwork& net, const Eigen::VectorXd& x,
                                 const Baseline& baseline, int steps = 128);
Explanation integrated_gradients(const ScalarFn& f, const GradientFn& grad,
                                 const Eigen::VectorXd& x, const Baseline& baseline,
                                 int steps = 128);

// Exact Shapley values by subset enumeration; refuses d > 20.
Explanation shapley_exact(const ScalarFn& f, const Eigen::VectorXd& x,
                          const Baseline& baseline);

// Permutation-sampling estimator; unbiased, reports per-feature standard
// error. If n_permutations == d! (d <= 8) every permutation is enumerated
// exactly once and the result equals the exact value.
Explanation shapley_sampled(const ScalarFn& f, const Eigen::VectorXd& x,
                            const Baseline& baseline, int n_permutations,
                            std::uint64_t seed);

// g+(x) = max(0, f(x) - y_ref) and g-(x) = min(0, f(x) - y_ref).
ScalarFn clip_positive(ScalarFn f, double y_ref);
ScalarFn clip_negative(ScalarFn f, double y_ref);

ScalarFn net_function(const DenseNetwork& net);

// Stable-key-order JSON record for golden-file comparisons.
std::string explanation_to_json(const Explanation& e, const Baseline* baseline = nullptr);

}  // namespace refxplain
