#include "refxplain/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "refxplain/rng.hpp"

namespace refxplain {

void DenseNetwork::validate() const {
  if (layers.empty()) throw std::invalid_argument("network: no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.weights.rows() != l.biases.size())
      throw std::invalid_argument("network: layer " + std::to_string(k) +
                                  " weight/bias shape mismatch");
    if (k > 0 && layers[k - 1].weights.rows() != l.weights.cols())
      throw std::invalid_argument("network: layer " + std::to_string(k) +
                                  " input dim does not match previous output dim");
    if (!l.weights.allFinite() || !l.biases.allFinite())
      throw std::invalid_argument("network: non-finite parameters in layer " +
                                  std::to_string(k));
  }
  if (layers.back().weights.rows() != 1)
    throw std::invalid_argument("network: final layer must have a single output");
  if (layers.back().activation != Activation::Identity)
    throw std::invalid_argument("network: final layer activation must be Identity");
}

ActivationTrace forward(const DenseNetwork& net, const Eigen::VectorXd& x) {
  if (x.size() != net.input_dim())
    throw std::invalid_argument("forward: input has " + std::to_string(x.size()) +
                                " features, network expects " +
                                std::to_string(net.input_dim()));
  if (!x.allFinite()) throw std::invalid_argument("forward: non-finite input");

  ActivationTrace trace;
  Eigen::VectorXd a = x;
  for (const auto& layer : net.layers) {
    Eigen::VectorXd z = layer.weights * a + layer.biases;
    trace.pre.push_back(z);
    a = layer.activation == Activation::ReLU ? z.cwiseMax(0.0).eval() : z;
    trace.post.push_back(a);
  }
  trace.y = trace.pre.back()(0);
  return trace;
}

Eigen::VectorXd backprop_gradient(const DenseNetwork& net, const Eigen::VectorXd& x) {
  ActivationTrace trace = forward(net, x);
  // grad holds d(output)/d(a_layer), walked from the top down
  Eigen::VectorXd grad = Eigen::VectorXd::Ones(1);
  for (int k = static_cast<int>(net.layers.size()) - 1; k >= 0; --k) {
    const auto& layer = net.layers[k];
    if (layer.activation == Activation::ReLU) {
      // subgradient 0 at z == 0 (inactive side)
      for (Eigen::Index i = 0; i < grad.size(); ++i)
        if (trace.pre[k](i) <= 0.0) grad(i) = 0.0;
    }
    grad = layer.weights.transpose() * grad;
  }
  return grad;
}

DenseNetwork make_network(int input_dim, const std::vector<int>& hidden,
                          std::uint64_t seed, const std::string& unit) {
  Rng rng(seed);
  DenseNetwork net;
  net.output_unit = unit;
  std::vector<int> dims;
  dims.push_back(input_dim);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(1);
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    int fan_in = dims[k], fan_out = dims[k + 1];
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    layer.weights.resize(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) layer.weights(i, j) = dist(rng);
    layer.biases = Eigen::VectorXd::Zero(fan_out);
    layer.activation =
        k + 2 == dims.size() ? Activation::Identity : Activation::ReLU;
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

namespace {

struct BatchForward {
  // column-major batch: each column one sample
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;
};

BatchForward batch_forward(const DenseNetwork& net, const Eigen::MatrixXd& X) {
  BatchForward bf;
  Eigen::MatrixXd a = X;
  for (const auto& layer : net.layers) {
    Eigen::MatrixXd z = (layer.weights * a).colwise() + layer.biases;
    bf.pre.push_back(z);
    a = layer.activation == Activation::ReLU ? z.cwiseMax(0.0).eval() : z;
    bf.post.push_back(a);
  }
  return bf;
}

}  // namespace

std::pair<DenseNetwork, TrainMetrics> train(const DenseNetwork& net,
                                            const TabularDataset& data,
                                            const TrainConfig& cfg) {
  net.validate();
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument("train: learning_rate must be > 0");
  if (cfg.weight_decay < 0.0)
    throw std::invalid_argument("train: weight_decay must be >= 0");
  if (cfg.batch_size < 1 || cfg.batch_size > data.n())
    throw std::invalid_argument("train: batch_size must be in [1, n]");

  DenseNetwork model = net;
  const DenseNetwork original = net;
  const Eigen::Index n = data.n();
  const std::size_t L = model.layers.size();

  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);

  const Eigen::MatrixXd Xt = data.features.transpose();  // d x n

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate;
    if (cfg.step_lr_decay) {
      if (epoch >= cfg.epochs / 2) lr = cfg.learning_rate * 0.3;
      if (epoch >= 3 * cfg.epochs / 4) lr = cfg.learning_rate * 0.1;
    }
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Eigen::MatrixXd Xb(data.d(), bs);
      Eigen::VectorXd yb(bs);
      for (Eigen::Index i = 0; i < bs; ++i) {
        Xb.col(i) = Xt.col(order[start + i]);
        yb(i) = data.targets(order[start + i]);
      }

      BatchForward bf = batch_forward(model, Xb);
      // dL/d(output) for L = mean (pred - y)^2
      Eigen::MatrixXd delta = (bf.post.back().row(0).transpose() - yb).transpose() *
                              (2.0 / static_cast<double>(bs));
      if (!delta.allFinite())
        throw std::runtime_error("train: diverged (NaN loss) at epoch " +
                                 std::to_string(epoch + 1));

      for (int k = static_cast<int>(L) - 1; k >= 0; --k) {
        auto& layer = model.layers[k];
        if (layer.activation == Activation::ReLU)
          delta = delta.cwiseProduct((bf.pre[k].array() > 0.0).cast<double>().matrix());
        const Eigen::MatrixXd& input = k == 0 ? Xb : bf.post[k - 1];
        Eigen::MatrixXd grad_w = delta * input.transpose();
        Eigen::VectorXd grad_b = delta.rowwise().sum();

        bool freeze_w = false, freeze_b = false;
        switch (cfg.freeze) {
          case FreezeMode::None:
            break;
          case FreezeMode::TopBiases:
            freeze_b = (k == static_cast<int>(L) - 1);
            break;
          case FreezeMode::AllWeightsAdjustBiases:
            freeze_w = true;
            break;
          case FreezeMode::FeatureExtractor:
            freeze_w = freeze_b = (k != static_cast<int>(L) - 1);
            break;
        }
        if (k > 0) delta = (layer.weights.transpose() * delta).eval();
        if (!freeze_w) {
          layer.weights -= lr * (grad_w + cfg.weight_decay * layer.weights);
          if (cfg.nonnegative_top && k == static_cast<int>(L) - 1)
            layer.weights = layer.weights.cwiseMax(0.0);
        }
        if (!freeze_b) layer.biases -= lr * (grad_b + cfg.weight_decay * layer.biases);
      }
    }
  }

  // frozen parameters must come back bit-identical
  switch (cfg.freeze) {
    case FreezeMode::TopBiases:
      model.layers.back().biases = original.layers.back().biases;
      break;
    case FreezeMode::AllWeightsAdjustBiases:
      for (std::size_t k = 0; k < L; ++k)
        model.layers[k].weights = original.layers[k].weights;
      break;
    case FreezeMode::FeatureExtractor:
      for (std::size_t k = 0; k + 1 < L; ++k) model.layers[k] = original.layers[k];
      break;
    case FreezeMode::None:
      break;
  }

  TrainMetrics metrics;
  metrics.final_mse = mse(model, data);
  metrics.r2 = r_squared(model, data);
  if (!std::isfinite(metrics.final_mse))
    throw std::runtime_error("train: diverged (NaN loss) at epoch " +
                             std::to_string(cfg.epochs));
  return {std::move(model), metrics};
}

double mse(const DenseNetwork& net, const TabularDataset& data) {
  BatchForward bf = batch_forward(net, data.features.transpose());
  Eigen::VectorXd pred = bf.pre.back().row(0).transpose();
  return (pred - data.targets).squaredNorm() / data.n();
}

double r_squared(const DenseNetwork& net, const TabularDataset& data) {
  if (data.n() < 1) throw std::invalid_argument("r_squared: empty dataset");
  BatchForward bf = batch_forward(net, data.features.transpose());
  Eigen::VectorXd pred = bf.pre.back().row(0).transpose();
  double mean = data.targets.mean();
  double ss_tot = (data.targets.array() - mean).square().sum();
  if (!(ss_tot > 0.0))
    throw std::runtime_error("r_squared: zero target variance, metric undefined");
  double ss_res = (pred - data.targets).squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

DenseNetwork build_max_network() {
  DenseNetwork net;
  DenseLayer hidden;
  hidden.weights.resize(3, 2);
  hidden.weights << 1, 1, 1, -1, -1, 1;
  hidden.biases = Eigen::VectorXd::Zero(3);
  hidden.activation = Activation::ReLU;
  DenseLayer top;
  top.weights.resize(1, 3);
  top.weights << 0.5, 0.5, 0.5;
  top.biases = Eigen::VectorXd::Zero(1);
  top.activation = Activation::Identity;
  net.layers = {std::move(hidden), std::move(top)};
  net.output_unit = "monetary units";
  net.validate();
  return net;
}

DenseNetwork rescale_to_original_units(const DenseNetwork& net,
                                       const TargetScaling& scaling) {
  double scale = scaling.t_max - scaling.t_min;
  if (scale == 0.0)
    throw std::invalid_argument("rescale_to_original_units: zero target scale");
  DenseNetwork out = net;
  out.layers.back().weights *= scale;
  out.layers.back().biases = net.layers.back().biases * scale +
                             Eigen::VectorXd::Constant(1, scaling.t_min);
  return out;
}

namespace {

const char* kFormatVersion = "refxplain-net/1";

nlohmann::ordered_json layer_to_json(const DenseLayer& l) {
  nlohmann::ordered_json j;
  j["in"] = l.weights.cols();
  j["out"] = l.weights.rows();
  j["activation"] = l.activation == Activation::ReLU ? "relu" : "identity";
  std::vector<double> w(l.weights.size());
  for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
    for (Eigen::Index k = 0; k < l.weights.cols(); ++k)
      w[i * l.weights.cols() + k] = l.weights(i, k);  // row-major
  j["weights"] = w;
  j["biases"] = std::vector<double>(l.biases.data(), l.biases.data() + l.biases.size());
  return j;
}

}  // namespace

void save_network(const DenseNetwork& net, const std::string& path) {
  nlohmann::ordered_json j;
  j["version"] = kFormatVersion;
  j["output_unit"] = net.output_unit;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : net.layers) j["layers"].push_back(layer_to_json(l));
  if (!net.metadata.empty()) j["metadata"] = net.metadata;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_network: cannot write " + path);
  out << j.dump(2) << "\n";
}

DenseNetwork load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_network: cannot open " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("version", "") != kFormatVersion)
    throw std::runtime_error("load_network: unsupported format version in " + path);
  DenseNetwork net;
  net.output_unit = j.value("output_unit", "");
  for (const auto& lj : j.at("layers")) {
    DenseLayer l;
    Eigen::Index in_dim = lj.at("in"), out_dim = lj.at("out");
    std::vector<double> w = lj.at("weights");
    std::vector<double> b = lj.at("biases");
    if (static_cast<Eigen::Index>(w.size()) != in_dim * out_dim ||
        static_cast<Eigen::Index>(b.size()) != out_dim)
      throw std::runtime_error("load_network: array size mismatch in " + path);
    l.weights.resize(out_dim, in_dim);
    for (Eigen::Index i = 0; i < out_dim; ++i)
      for (Eigen::Index k = 0; k < in_dim; ++k) l.weights(i, k) = w[i * in_dim + k];
    l.biases = Eigen::Map<Eigen::VectorXd>(b.data(), out_dim);
    std::string act = lj.at("activation");
    if (act == "relu")
      l.activation = Activation::ReLU;
    else if (act == "identity")
      l.activation = Activation::Identity;
    else
      throw std::runtime_error("load_network: unknown activation '" + act + "'");
    net.layers.push_back(std::move(l));
  }
  if (j.contains("metadata"))
    net.metadata = j["metadata"].get<std::map<std::string, std::string>>();
  net.validate();
  return net;
}

}  // namespace refxplain
