#pragma once

#include <Eigen/Dense>
#include <limits>

#include "refxplain/attribution.hpp"
#include "refxplain/network.hpp"

namespace refxplain {

struct ReferenceSpec {
  double value = 0.0;
  bool from_grid = false;  // true when derived from a grid fraction q
  double q = 0.0;
};

enum class FloodMode { Symmetric, Asymmetric };

// Reference activation vector on the flooding line, with the solved level t.
struct FloodSolution {
  double t = 0.0;
  Eigen::VectorXd a_tilde;  // elementwise >= 0
  double residual = 0.0;    // |sum(a_tilde .* w) - y_ref|
  bool multiple_roots = false;
};

// Top-layer bias reduced by y_ref; forward equals f(x) - y_ref exactly.
DenseNetwork shift_output(const DenseNetwork& net, double y_ref);

// Solves sum_j w_j * a_tilde_j(t) = y_ref on the flooding line
// a_tilde(t) = (a - t*1)^+ (symmetric) or, for the asymmetric variant,
// a_tilde_j(t) = (a_j - t)^+ for w_j <= 0 and (a_j + t/4)^+ for w_j > 0.
// The map is piecewise linear in t; breakpoints are scanned in sorted order
// and the segment containing the target is solved exactly. With mixed-sign
// weights several roots may exist; the smallest-|t| root is returned and
// flagged. Throws if no segment reaches the target, reporting the attainable
// range.
FloodSolution flood_reference(const Eigen::VectorXd& a, const Eigen::VectorXd& w,
                              double top_bias, double y_ref,
                              FloodMode mode = FloodMode::Symmetric);

// Rewrites rho(z_j) - a_tilde_j as rho(z_j - a_tilde_j) + rho(-z_j)
//   - rho(-z_j + a_tilde_j), tripling the hidden width. Incoming rows are
// scaled by (1, -1, -1), biases become (b - at, -b, -b + at), outgoing
// weights (w, w, -w). Requires a_tilde >= 0.
void triplicate_relu(const DenseLayer& hidden, const Eigen::VectorXd& outgoing,
                     const Eigen::VectorXd& a_tilde, DenseLayer& new_hidden,
                     Eigen::VectorXd& new_outgoing);

// Full restructuring at anchor input x: flood at a(x), triplicate the last
// hidden layer. The result computes f(x') - y_ref for every x'.
// Requires a ReLU -> linear top; throws a structural error otherwise.
DenseNetwork restructure(const DenseNetwork& net, const Eigen::VectorXd& x,
                         double y_ref, FloodMode mode = FloodMode::Symmetric);

struct RetrainConfig {
  double tau_minus = -0.3;
  double tau_plus = std::numeric_limits<double>::infinity();
  FreezeMode freeze = FreezeMode::TopBiases;
  bool init_from_original = true;
  // Start every bias at zero (the frozen top bias then stays at zero), keeping
  // only the original weights. Prevents the constant top-layer offset from
  // absorbing relevance in the surrogate's explanations.
  bool zero_bias_init = false;
  // Fit the clipped residual max(0, f(x) - y_ref) instead of the raw residual.
  bool clip_targets = false;
  TrainConfig base;
};

struct RetrainResult {
  DenseNetwork net;
  double band_mse = 0.0;
  Eigen::Index band_size = 0;
  // Set when >99% of the total parameter change sits in the top-layer bias.
  bool top_bias_drift_warning = false;
};

// Fits a surrogate for g(x) = f(x) - y_ref on the band
// tau_minus <= g(x_n) <= tau_plus. Throws if the band is empty.
RetrainResult retrain(const DenseNetwork& net, const TabularDataset& data,
                      double y_ref, const RetrainConfig& cfg);

// Post-hoc baselines: uniform shift R_i - y_ref/d and proportional scaling
// R_i * (y - y_ref)/y.
Explanation baseline_shift(const Explanation& expl, double y_ref);
Explanation baseline_scale(const Explanation& expl, double y, double y_ref);

}  // namespace refxplain
