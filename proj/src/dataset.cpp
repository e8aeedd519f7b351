#include "refxplain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "refxplain/rng.hpp"

namespace refxplain {

namespace {

Eigen::MatrixXd uniform_matrix(int n, int d, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = dist(rng);
  return m;
}

std::vector<std::string> numbered_names(int d, const std::string& prefix) {
  std::vector<std::string> names;
  names.reserve(d);
  for (int j = 0; j < d; ++j) names.push_back(prefix + std::to_string(j + 1));
  return names;
}

}  // namespace

TabularDataset gen_max(int n, int d, std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("gen_max: n and d must be >= 1");
  Rng rng(seed);
  TabularDataset ds;
  ds.features = uniform_matrix(n, d, 0.0, 1.0, rng);
  ds.targets = ds.features.rowwise().maxCoeff();
  ds.feature_names = numbered_names(d, "x");
  ds.unit = "units";
  return ds;
}

TabularDataset gen_linear(int n, int d, int informative, double noise_std,
                          std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("gen_linear: n and d must be >= 1");
  if (informative > d)
    throw std::invalid_argument("gen_linear: informative must be <= d");
  Rng rng(seed);
  Eigen::MatrixXd X = uniform_matrix(n, d, -1.0, 1.0, rng);

  // informative weights drawn uniformly, the rest exactly zero
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  std::vector<int> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::uniform_real_distribution<double> wd(0.5, 2.0);
  for (int k = 0; k < informative; ++k) w(idx[k]) = wd(rng);

  Eigen::VectorXd signal = X * w;
  if (noise_std < 0.0) {
    double mean = signal.mean();
    double var = (signal.array() - mean).square().sum() / std::max<int>(1, n - 1);
    noise_std = 0.01 * std::sqrt(var);
  }
  Eigen::VectorXd noise(n);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < n; ++i) noise(i) = noise_std > 0.0 ? noise_std * nd(rng) : 0.0;

  TabularDataset ds;
  ds.features = std::move(X);
  ds.targets = signal + noise;
  ds.feature_names = numbered_names(d, "x");
  ds.unit = "units";
  ds.generator_weights = w;
  return ds;
}

TabularDataset gen_linear(int n, std::uint64_t seed) {
  return gen_linear(n, 8, 4, -1.0, seed);
}

TabularDataset gen_friedman2(int n, std::uint64_t seed, double noise_std) {
  if (n < 1) throw std::invalid_argument("gen_friedman2: n must be >= 1");
  Rng rng(seed);
  const double pi = std::numbers::pi;
  Eigen::MatrixXd X(n, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 100.0 * u(rng);
    X(i, 1) = 40.0 * pi + (560.0 * pi - 40.0 * pi) * u(rng);
    X(i, 2) = u(rng);
    X(i, 3) = 1.0 + 10.0 * u(rng);
  }
  Eigen::VectorXd y(n);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    double t = X(i, 1) * X(i, 2) - 1.0 / (X(i, 1) * X(i, 3));
    y(i) = std::sqrt(X(i, 0) * X(i, 0) + t * t);
    if (noise_std > 0.0) y(i) += noise_std * nd(rng);
  }
  TabularDataset ds;
  ds.features = std::move(X);
  ds.targets = std::move(y);
  ds.feature_names = {"x1", "x2", "x3", "x4"};
  ds.unit = "units";
  return ds;
}

TabularDataset load_csv(const std::string& path, const std::string& target_column,
                        const std::string& unit) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto target_it = std::find(header.begin(), header.end(), target_column);
  if (target_it == header.end())
    throw std::runtime_error("load_csv: target column '" + target_column +
                             "' not found in " + path);
  const std::size_t target_idx = target_it - header.begin();

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: non-numeric cell '" + cell + "' at row " +
                                 std::to_string(lineno) + ", column " +
                                 std::to_string(col + 1) + " of " + path);
      }
      ++col;
    }
    if (row.size() != header.size())
      throw std::runtime_error("load_csv: row " + std::to_string(lineno) + " has " +
                               std::to_string(row.size()) + " cells, expected " +
                               std::to_string(header.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - 1;
  TabularDataset ds;
  ds.features.resize(n, d);
  ds.targets.resize(n);
  for (std::size_t j = 0; j < header.size(); ++j)
    if (j != target_idx) ds.feature_names.push_back(header[j]);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index jj = 0;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == target_idx)
        ds.targets(i) = rows[i][j];
      else
        ds.features(i, jj++) = rows[i][j];
    }
  }
  ds.unit = unit;
  return ds;
}

TabularDataset standardize(const TabularDataset& data) {
  const Eigen::Index n = data.n(), d = data.d();
  if (n < 1) throw std::invalid_argument("standardize: empty dataset");

  FeatureScaling fs;
  fs.means = data.features.colwise().mean();
  fs.stds.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    double var = (data.features.col(j).array() - fs.means(j)).square().sum() / n;
    fs.stds(j) = std::sqrt(var);
    if (!(fs.stds(j) > 0.0)) {
      std::string name = j < static_cast<Eigen::Index>(data.feature_names.size())
                             ? data.feature_names[j]
                             : std::to_string(j);
      throw std::runtime_error("standardize: constant feature column '" + name + "'");
    }
  }

  TargetScaling ts{data.targets.minCoeff(), data.targets.maxCoeff()};
  if (!(ts.t_max > ts.t_min))
    throw std::runtime_error("standardize: constant target column");

  TabularDataset out = data;
  for (Eigen::Index j = 0; j < d; ++j)
    out.features.col(j) = (data.features.col(j).array() - fs.means(j)) / fs.stds(j);
  out.targets = (data.targets.array() - ts.t_min) / (ts.t_max - ts.t_min);
  out.standardization = fs;
  out.target_scaling = ts;
  return out;
}

TabularDataset unstandardize(const TabularDataset& data) {
  if (!data.standardization || !data.target_scaling)
    throw std::invalid_argument("unstandardize: dataset has no recorded scaling");
  const auto& fs = *data.standardization;
  const auto& ts = *data.target_scaling;
  TabularDataset out = data;
  for (Eigen::Index j = 0; j < data.d(); ++j)
    out.features.col(j) = data.features.col(j).array() * fs.stds(j) + fs.means(j);
  out.targets = data.targets.array() * (ts.t_max - ts.t_min) + ts.t_min;
  out.standardization.reset();
  out.target_scaling.reset();
  return out;
}

TabularDataset apply_standardization(const TabularDataset& data,
                                     const FeatureScaling& fs,
                                     const TargetScaling& ts) {
  if (fs.means.size() != data.d())
    throw std::invalid_argument("apply_standardization: dimension mismatch");
  TabularDataset out = data;
  for (Eigen::Index j = 0; j < data.d(); ++j)
    out.features.col(j) = (data.features.col(j).array() - fs.means(j)) / fs.stds(j);
  out.targets = (data.targets.array() - ts.t_min) / (ts.t_max - ts.t_min);
  out.standardization = fs;
  out.target_scaling = ts;
  return out;
}

std::pair<TabularDataset, TabularDataset> train_test_split(
    const TabularDataset& data, double test_fraction, std::uint64_t seed) {
  const Eigen::Index n = data.n();
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);

  const Eigen::Index n_test = static_cast<Eigen::Index>(n * test_fraction);
  const Eigen::Index n_train = n - n_test;
  auto take = [&](Eigen::Index begin, Eigen::Index count) {
    TabularDataset out = data;
    out.features.resize(count, data.d());
    out.targets.resize(count);
    for (Eigen::Index i = 0; i < count; ++i) {
      out.features.row(i) = data.features.row(idx[begin + i]);
      out.targets(i) = data.targets(idx[begin + i]);
    }
    return out;
  };
  return {take(0, n_train), take(n_train, n_test)};
}

}  // namespace refxplain
