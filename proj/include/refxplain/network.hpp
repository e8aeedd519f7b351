#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "refxplain/dataset.hpp"

namespace refxplain {

enum class Activation { ReLU, Identity };

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd biases;   // out
  Activation activation = Activation::ReLU;
};

// Dense feed-forward regression network with a single linear output.
struct DenseNetwork {
  std::vector<DenseLayer> layers;
  std::string output_unit;
  // Free-form annotations, e.g. restructuring provenance. Serialized verbatim.
  std::map<std::string, std::string> metadata;

  Eigen::Index input_dim() const { return layers.front().weights.cols(); }
  // Throws std::invalid_argument on dimension mismatch, multi-output tops,
  // non-finite parameters, or a non-Identity final activation.
  void validate() const;
};

struct ActivationTrace {
  std::vector<Eigen::VectorXd> pre;   // z per layer
  std::vector<Eigen::VectorXd> post;  // a per layer
  double y = 0.0;                     // final output, equals pre.back()(0)
};

enum class FreezeMode { None, TopBiases, AllWeightsAdjustBiases, FeatureExtractor };

struct TrainConfig {
  double learning_rate = 1e-2;
  int epochs = 500;
  int batch_size = 32;
  std::uint64_t seed = 0;
  FreezeMode freeze = FreezeMode::None;
  // Decoupled L2 shrinkage applied per step to every unfrozen parameter.
  double weight_decay = 0.0;
  // Step schedule: full rate for the first half, x0.3 for the third quarter,
  // x0.1 for the final quarter.
  bool step_lr_decay = false;
  // Project top-layer weights onto [0, inf) after every update.
  bool nonnegative_top = false;
};

struct TrainMetrics {
  double final_mse = 0.0;
  double r2 = 0.0;
};

ActivationTrace forward(const DenseNetwork& net, const Eigen::VectorXd& x);

// d(output)/d(input); at ReLU kinks (z == 0) the inactive-side subgradient 0.
Eigen::VectorXd backprop_gradient(const DenseNetwork& net, const Eigen::VectorXd& x);

// Fresh network with given hidden widths, uniform +-sqrt(6/(fan_in+fan_out)) init.
DenseNetwork make_network(int input_dim, const std::vector<int>& hidden,
                          std::uint64_t seed, const std::string& unit = "");

// Plain SGD on the MSE. Returns a trained copy; deterministic per cfg.seed.
// Throws on invalid config or NaN loss (naming the epoch).
std::pair<DenseNetwork, TrainMetrics> train(const DenseNetwork& net,
                                            const TabularDataset& data,
                                            const TrainConfig& cfg);

double r_squared(const DenseNetwork& net, const TabularDataset& data);
double mse(const DenseNetwork& net, const TabularDataset& data);

// The two-bidder auction network: f(x) = max(x1, x2) on the nonneg quadrant.
DenseNetwork build_max_network();

// Folds the inverse target scaling into the top layer so that outputs are in
// original units: new_f = scale * old_f + offset with scale = t_max - t_min.
DenseNetwork rescale_to_original_units(const DenseNetwork& net,
                                       const TargetScaling& scaling);

void save_network(const DenseNetwork& net, const std::string& path);
DenseNetwork load_network(const std::string& path);

}  // namespace refxplain
