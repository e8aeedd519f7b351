#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace refxplain {

// Per-feature z-scoring parameters fitted on the training split.
struct FeatureScaling {
  Eigen::VectorXd means;
  Eigen::VectorXd stds;  // strictly positive
};

// Affine map sending [t_min, t_max] onto [0, 1].
struct TargetScaling {
  double t_min = 0.0;
  double t_max = 1.0;

  double to_unit(double t) const { return (t - t_min) / (t_max - t_min); }
  double from_unit(double u) const { return t_min + u * (t_max - t_min); }
};

struct TabularDataset {
  Eigen::MatrixXd features;  // n x d
  Eigen::VectorXd targets;   // n
  std::vector<std::string> feature_names;
  std::string unit;
  std::optional<FeatureScaling> standardization;
  std::optional<TargetScaling> target_scaling;
  // Ground-truth weights for the linear generator, empty otherwise.
  Eigen::VectorXd generator_weights;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index d() const { return features.cols(); }
};

// Synthetic generators. All deterministic per seed.
TabularDataset gen_max(int n, int d, std::uint64_t seed);
TabularDataset gen_linear(int n, int d, int informative, double noise_std,
                          std::uint64_t seed);
// noise_std < 0 selects the default 0.01 * std(signal).
TabularDataset gen_linear(int n, std::uint64_t seed);
TabularDataset gen_friedman2(int n, std::uint64_t seed, double noise_std = 0.0);

TabularDataset load_csv(const std::string& path, const std::string& target_column,
                        const std::string& unit);

// Z-scores features and min-max scales targets; records the fitted parameters.
TabularDataset standardize(const TabularDataset& data);
// Inverse of standardize, using the recorded parameters.
TabularDataset unstandardize(const TabularDataset& data);
// Applies scalings fitted elsewhere (e.g. on the training split).
TabularDataset apply_standardization(const TabularDataset& data,
                                     const FeatureScaling& fs,
                                     const TargetScaling& ts);

// Deterministic shuffled split; returns (train, test).
std::pair<TabularDataset, TabularDataset> train_test_split(
    const TabularDataset& data, double test_fraction, std::uint64_t seed);

}  // namespace refxplain
