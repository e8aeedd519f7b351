#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "refxplain/attribution.hpp"
#include "refxplain/network.hpp"
#include "refxplain/refvalue.hpp"

namespace refxplain {

// Reference values interpolated between f(0) and the maximum prediction:
// y_q = q * f_max + (1 - q) * f_zero.
struct ReferenceGrid {
  std::vector<double> qs;
  double f_max = 0.0;
  double f_zero = 0.0;
  std::vector<double> values;
};

ReferenceGrid reference_grid(const DenseNetwork& net, const TabularDataset& data,
                             const std::vector<double>& qs);

// Indices where the clipping approach applies: 0 <= y_ref <= f(x_i)
// (or f(x_i) <= y_ref <= 0 in negative mode).
std::vector<Eigen::Index> filter_instances(const DenseNetwork& net,
                                           const TabularDataset& data,
                                           double y_ref,
                                           bool negative_mode = false);

// Exact Shapley of clip_positive(f, y_ref) at baseline x = 0.
Explanation reference_explanation(const DenseNetwork& net, const Eigen::VectorXd& x,
                                  double y_ref);

// MSE(R, R_ref) divided by the mean MSE of k_random completeness-respecting
// random attributions (normals with std |y - y_ref|/d, recentered to sum to
// y - y_ref).
double normalized_mse(const Explanation& R, const Explanation& R_ref, double y,
                      double y_ref, int k_random, std::uint64_t seed);

struct DatasetTrainConfig {
  int n_samples = 1000;
  TrainConfig train;
  int retrain_epochs = 500;
};

struct BenchmarkConfig {
  std::vector<std::string> datasets = {"max", "linear", "friedman", "diabetes",
                                       "boston"};
  std::vector<double> qs = {0.25, 0.5, 0.75};
  std::vector<std::string> methods = {"shift", "scaling", "retraining",
                                      "restructuring"};
  int repeats = 10;
  std::uint64_t master_seed = 0;
  int instance_cap = 100;  // scored instances per (dataset, q, repeat)
  int k_random = 100;
  double gamma_first = 2.5;
  double gamma_second = 0.0;
  double tau_minus = -0.3;
  double retrain_lr = -1.0;  // <0: reuse the training learning rate
  double retrain_weight_decay = 1e-3;
  std::map<std::string, DatasetTrainConfig> dataset_configs;
  // Paths for the csv-backed datasets.
  std::string data_dir = "data";
  // Test hook: score the reference explanation against itself.
  bool inject_reference = false;
  int threads = 1;

  DatasetTrainConfig config_for(const std::string& dataset) const;
};

struct BenchmarkRecord {
  std::string dataset;
  double q = 0.0;
  std::string method;
  int repeat_index = 0;
  double nmse = 0.0;  // pooled over scored instances
  bool failed = false;
  std::string error;
};

struct BenchmarkAggregate {
  std::string dataset;
  double q = 0.0;
  std::string method;
  double mean_nmse = 0.0;
  double std_nmse = 0.0;
  int n_repeats = 0;
  int n_failures = 0;
};

struct BenchmarkReport {
  BenchmarkConfig config;
  std::vector<BenchmarkRecord> records;
  std::vector<BenchmarkAggregate> aggregates;
  std::vector<double> r2_values;  // one per (dataset, repeat) trained model
};

BenchmarkReport run_benchmark(const BenchmarkConfig& cfg);

std::string report_to_csv(const BenchmarkReport& report);
std::string report_to_json(const BenchmarkReport& report);
// Fig-5 shaped data: mean nmse per (q, method) and per (dataset, method).
std::string report_to_means_csv(const BenchmarkReport& report);

BenchmarkConfig benchmark_config_from_json(const std::string& json_text);

// Release-gate sanity checks.
struct SelfcheckOptions {
  // Test hook: added to every LRP attribution before the conservation check.
  double lrp_bias_injection = 0.0;
  std::uint64_t seed = 7;
};

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opts = {});

}  // namespace refxplain
