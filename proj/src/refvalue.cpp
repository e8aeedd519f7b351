#include "refxplain/refvalue.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "refxplain/rng.hpp"

namespace refxplain {

DenseNetwork shift_output(const DenseNetwork& net, double y_ref) {
  net.validate();
  DenseNetwork out = net;
  out.layers.back().biases(0) -= y_ref;
  return out;
}

namespace {

// Per-neuron flooding line geometry: a_tilde_j(t) = (a_j - shift_j(t))^+ with
// shift linear in t. Symmetric: shift_j = t. Asymmetric: t for w_j <= 0 and
// -t/4 for w_j > 0.
struct FloodLine {
  const Eigen::VectorXd& a;
  const Eigen::VectorXd& w;
  FloodMode mode;

  double rate(Eigen::Index j) const {
    if (mode == FloodMode::Symmetric) return 1.0;
    return w(j) > 0.0 ? -0.25 : 1.0;
  }

  double a_tilde(Eigen::Index j, double t) const {
    return std::max(0.0, a(j) - rate(j) * t);
  }

  // breakpoint where neuron j leaves/enters the active region
  double breakpoint(Eigen::Index j) const { return a(j) / rate(j); }

  double h(double t) const {
    double s = 0.0;
    for (Eigen::Index j = 0; j < a.size(); ++j) s += w(j) * a_tilde(j, t);
    return s;
  }

  // slope of h on an open interval containing t (t not a breakpoint)
  double slope(double t) const {
    double s = 0.0;
    for (Eigen::Index j = 0; j < a.size(); ++j)
      if (a(j) - rate(j) * t > 0.0) s -= w(j) * rate(j);
    return s;
  }
};

}  // namespace

FloodSolution flood_reference(const Eigen::VectorXd& a, const Eigen::VectorXd& w,
                              double top_bias, double y_ref, FloodMode mode) {
  if (a.size() != w.size())
    throw std::invalid_argument("flood_reference: activation/weight size mismatch");
  if ((a.array() < 0.0).any())
    throw std::invalid_argument("flood_reference: activations must be >= 0");

  FloodLine line{a, w, mode};
  // The top bias stays on the function side of the balance equation, so the
  // line must meet y_ref - b; the restructured top layer then carries no bias.
  const double target = y_ref - top_bias;

  std::vector<double> bps;
  bps.reserve(a.size());
  for (Eigen::Index j = 0; j < a.size(); ++j) bps.push_back(line.breakpoint(j));
  std::sort(bps.begin(), bps.end());
  bps.erase(std::unique(bps.begin(), bps.end()), bps.end());

  std::vector<double> roots;
  auto add_root = [&](double t) {
    for (double r : roots)
      if (std::abs(r - t) <= 1e-12 * std::max(1.0, std::abs(t))) return;
    roots.push_back(t);
  };

  double h_min = std::numeric_limits<double>::infinity();
  double h_max = -std::numeric_limits<double>::infinity();
  auto note = [&](double v) {
    h_min = std::min(h_min, v);
    h_max = std::max(h_max, v);
  };

  if (bps.empty()) bps.push_back(0.0);  // all activations zero: h is constant 0

  // interior segments between consecutive breakpoints
  std::vector<double> h_at(bps.size());
  for (std::size_t i = 0; i < bps.size(); ++i) {
    h_at[i] = line.h(bps[i]);
    note(h_at[i]);
  }
  for (std::size_t i = 0; i + 1 < bps.size(); ++i) {
    double h0 = h_at[i], h1 = h_at[i + 1];
    if ((target - h0) * (target - h1) > 0.0) continue;  // target not bracketed
    if (h0 == h1) {
      // constant segment on the target level: one connected root set
      double t = bps[i] <= 0.0 && bps[i + 1] >= 0.0
                     ? 0.0
                     : (std::abs(bps[i]) < std::abs(bps[i + 1]) ? bps[i] : bps[i + 1]);
      add_root(t);
    } else {
      add_root(bps[i] + (target - h0) * (bps[i + 1] - bps[i]) / (h1 - h0));
    }
  }

  // unbounded rays
  {
    double s = line.slope(bps.front() - 1.0);
    if (s != 0.0) {
      double t = bps.front() + (target - h_at.front()) / s;
      if (t <= bps.front()) add_root(t);
      note(s > 0.0 ? -std::numeric_limits<double>::infinity()
                   : std::numeric_limits<double>::infinity());
    } else if (h_at.front() == target) {
      add_root(std::min(bps.front(), 0.0));  // constant ray: closest point to 0
    }
  }
  {
    double s = line.slope(bps.back() + 1.0);
    if (s != 0.0) {
      double t = bps.back() + (target - h_at.back()) / s;
      if (t >= bps.back()) add_root(t);
      note(s > 0.0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity());
    } else if (h_at.back() == target) {
      add_root(std::max(bps.back(), 0.0));
    }
  }

  if (roots.empty()) {
    std::ostringstream msg;
    msg << "flood_reference: no intersection with the target level " << target
        << "; attainable range of the flooding line is [" << h_min << ", " << h_max
        << "]";
    throw std::runtime_error(msg.str());
  }

  double t_best = roots.front();
  for (double r : roots)
    if (std::abs(r) < std::abs(t_best)) t_best = r;

  FloodSolution sol;
  sol.t = t_best;
  sol.multiple_roots = roots.size() > 1;
  sol.a_tilde.resize(a.size());
  for (Eigen::Index j = 0; j < a.size(); ++j) sol.a_tilde(j) = line.a_tilde(j, t_best);
  sol.residual = std::abs(line.h(t_best) - target);
  if (sol.residual > 1e-8 * std::max(1.0, std::abs(y_ref)))
    throw std::runtime_error("flood_reference: residual exceeds tolerance");
  return sol;
}

void triplicate_relu(const DenseLayer& hidden, const Eigen::VectorXd& outgoing,
                     const Eigen::VectorXd& a_tilde, DenseLayer& new_hidden,
                     Eigen::VectorXd& new_outgoing) {
  const Eigen::Index n = hidden.weights.rows();
  if (a_tilde.size() != n || outgoing.size() != n)
    throw std::invalid_argument("triplicate_relu: size mismatch");
  if ((a_tilde.array() < 0.0).any())
    throw std::invalid_argument("triplicate_relu: a_tilde must be elementwise >= 0");

  new_hidden.activation = Activation::ReLU;
  new_hidden.weights.resize(3 * n, hidden.weights.cols());
  new_hidden.biases.resize(3 * n);
  new_outgoing.resize(3 * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    // rho(z) - at = rho(z - at) + rho(-z) - rho(-z + at)
    new_hidden.weights.row(3 * j + 0) = hidden.weights.row(j);
    new_hidden.weights.row(3 * j + 1) = -hidden.weights.row(j);
    new_hidden.weights.row(3 * j + 2) = -hidden.weights.row(j);
    new_hidden.biases(3 * j + 0) = hidden.biases(j) - a_tilde(j);
    new_hidden.biases(3 * j + 1) = -hidden.biases(j);
    new_hidden.biases(3 * j + 2) = -hidden.biases(j) + a_tilde(j);
    new_outgoing(3 * j + 0) = outgoing(j);
    new_outgoing(3 * j + 1) = outgoing(j);
    new_outgoing(3 * j + 2) = -outgoing(j);
  }
}

DenseNetwork restructure(const DenseNetwork& net, const Eigen::VectorXd& x,
                         double y_ref, FloodMode mode) {
  net.validate();
  if (net.layers.size() < 2 ||
      net.layers[net.layers.size() - 2].activation != Activation::ReLU)
    throw std::runtime_error(
        "restructure: requires a ReLU -> linear top structure; use retrain for "
        "other architectures");

  const std::size_t L = net.layers.size();
  const DenseLayer& hidden = net.layers[L - 2];
  const DenseLayer& top = net.layers[L - 1];
  ActivationTrace trace = forward(net, x);
  const Eigen::VectorXd& a = trace.post[L - 2];
  const Eigen::VectorXd w = top.weights.row(0).transpose();

  FloodSolution sol = flood_reference(a, w, top.biases(0), y_ref, mode);

  DenseNetwork out;
  out.output_unit = net.output_unit;
  for (std::size_t k = 0; k + 2 < L; ++k) out.layers.push_back(net.layers[k]);

  DenseLayer new_hidden;
  Eigen::VectorXd new_outgoing;
  triplicate_relu(hidden, w, sol.a_tilde, new_hidden, new_outgoing);
  out.layers.push_back(std::move(new_hidden));

  DenseLayer new_top;
  new_top.weights = new_outgoing.transpose();
  // the original top bias was folded into the flood target
  new_top.biases = Eigen::VectorXd::Zero(1);
  new_top.activation = Activation::Identity;
  out.layers.push_back(std::move(new_top));

  std::uint64_t xhash = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    std::uint64_t bits;
    double v = x(i);
    std::memcpy(&bits, &v, sizeof bits);
    xhash = seed_combine(xhash, bits);
  }
  out.metadata["reference_value"] = std::to_string(y_ref);
  out.metadata["anchor_input_hash"] = std::to_string(xhash);
  out.metadata["flood_t"] = std::to_string(sol.t);
  out.metadata["flood_mode"] = mode == FloodMode::Symmetric ? "symmetric" : "asymmetric";
  out.validate();
  return out;
}

RetrainResult retrain(const DenseNetwork& net, const TabularDataset& data,
                      double y_ref, const RetrainConfig& cfg) {
  net.validate();
  if (cfg.tau_minus > cfg.tau_plus)
    throw std::invalid_argument("retrain: tau_minus must be <= tau_plus");

  // band selection on g(x) = f(x) - y_ref under the original model
  const Eigen::Index n = data.n();
  std::vector<Eigen::Index> band;
  Eigen::VectorXd g(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i) = forward(net, data.features.row(i).transpose()).y - y_ref;
    if (g(i) >= cfg.tau_minus && g(i) <= cfg.tau_plus) band.push_back(i);
  }
  if (band.empty())
    throw std::runtime_error("retrain: the band [tau_minus, tau_plus] selects no "
                             "training instances");

  TabularDataset band_data = data;
  band_data.features.resize(static_cast<Eigen::Index>(band.size()), data.d());
  band_data.targets.resize(static_cast<Eigen::Index>(band.size()));
  for (std::size_t i = 0; i < band.size(); ++i) {
    band_data.features.row(i) = data.features.row(band[i]);
    band_data.targets(i) = cfg.clip_targets ? std::max(0.0, g(band[i])) : g(band[i]);
  }

  DenseNetwork init;
  if (cfg.init_from_original) {
    init = net;
  } else {
    std::vector<int> hidden;
    for (std::size_t k = 0; k + 1 < net.layers.size(); ++k)
      hidden.push_back(static_cast<int>(net.layers[k].weights.rows()));
    init = make_network(static_cast<int>(net.input_dim()), hidden, cfg.base.seed,
                        net.output_unit);
  }

  if (cfg.zero_bias_init)
    for (auto& layer : init.layers) layer.biases.setZero();
  if (cfg.base.nonnegative_top)
    init.layers.back().weights = init.layers.back().weights.cwiseMax(0.0);

  TrainConfig tc = cfg.base;
  tc.freeze = cfg.freeze;
  tc.batch_size = std::min<int>(tc.batch_size, static_cast<int>(band.size()));
  auto [model, metrics] = train(init, band_data, tc);

  RetrainResult res;
  res.band_mse = metrics.final_mse;
  res.band_size = static_cast<Eigen::Index>(band.size());

  double total_change = 0.0;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    total_change += (model.layers[k].weights - net.layers[k].weights).cwiseAbs().sum();
    total_change += (model.layers[k].biases - net.layers[k].biases).cwiseAbs().sum();
  }
  double top_bias_change =
      std::abs(model.layers.back().biases(0) - net.layers.back().biases(0));
  res.top_bias_drift_warning =
      total_change > 0.0 && top_bias_change / total_change > 0.99;
  res.net = std::move(model);
  return res;
}

Explanation baseline_shift(const Explanation& expl, double y_ref) {
  const Eigen::Index d = expl.attributions.size();
  Explanation out = expl;
  out.attributions = expl.attributions.array() - y_ref / static_cast<double>(d);
  out.reference_value = y_ref;
  out.method = "baseline_shift";
  out.conservation_gap = out.prediction - out.reference_value - out.sum();
  return out;
}

Explanation baseline_scale(const Explanation& expl, double y, double y_ref) {
  if (std::abs(y) < 1e-12)
    throw std::runtime_error("baseline_scale: prediction too close to zero");
  Explanation out = expl;
  out.attributions = expl.attributions * ((y - y_ref) / y);
  out.reference_value = y_ref;
  out.method = "baseline_scale";
  out.conservation_gap = out.prediction - out.reference_value - out.sum();
  return out;
}

}  // namespace refxplain
