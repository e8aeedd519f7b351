#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "refxplain/dataset.hpp"

using namespace refxplain;

TEST_CASE("gen_max: ranges and row-max targets") {
  TabularDataset ds = gen_max(200, 8, 11);
  CHECK(ds.n() == 200);
  CHECK(ds.d() == 8);
  CHECK(ds.features.minCoeff() >= 0.0);
  CHECK(ds.features.maxCoeff() <= 1.0);
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    // brute-force row check: target >= every feature, equal at the argmax
    double best = ds.features(i, 0);
    for (Eigen::Index j = 0; j < ds.d(); ++j) {
      CHECK(ds.targets(i) >= ds.features(i, j));
      best = std::max(best, ds.features(i, j));
    }
    CHECK(ds.targets(i) == best);
  }
}

TEST_CASE("gen_linear: OLS recovers the generator weights at zero noise") {
  TabularDataset ds = gen_linear(500, 8, 4, 0.0, 21);
  REQUIRE(ds.generator_weights.size() == 8);
  Eigen::VectorXd w_hat =
      ds.features.colPivHouseholderQr().solve(ds.targets);
  CHECK((w_hat - ds.generator_weights).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("gen_linear: exactly `informative` nonzero weights") {
  TabularDataset ds = gen_linear(50, 8, 4, -1.0, 3);
  int nonzero = 0;
  for (Eigen::Index j = 0; j < 8; ++j)
    if (ds.generator_weights(j) != 0.0) ++nonzero;
  CHECK(nonzero == 4);
}

TEST_CASE("gen_linear: informative=0 gives pure noise") {
  TabularDataset ds = gen_linear(300, 8, 0, 1.0, 4);
  CHECK(ds.generator_weights.cwiseAbs().maxCoeff() == 0.0);
  // true-weight model predicts 0 everywhere; its R^2 against pure noise ~ 0
  double mean = ds.targets.mean();
  double ss_tot = (ds.targets.array() - mean).square().sum();
  double ss_res = ds.targets.squaredNorm();
  double r2 = 1.0 - ss_res / ss_tot;
  CHECK(std::abs(r2) < 0.1);
}

TEST_CASE("gen_friedman2: closed-form targets and ranges") {
  TabularDataset ds = gen_friedman2(300, 17);
  const double pi = 3.14159265358979323846;
  CHECK(ds.d() == 4);
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    double x1 = ds.features(i, 0), x2 = ds.features(i, 1), x3 = ds.features(i, 2),
           x4 = ds.features(i, 3);
    CHECK(x1 >= 0.0);
    CHECK(x1 <= 100.0);
    CHECK(x2 >= 40.0 * pi);
    CHECK(x2 <= 560.0 * pi);
    CHECK(x3 >= 0.0);
    CHECK(x3 <= 1.0);
    CHECK(x4 >= 1.0);
    CHECK(x4 <= 11.0);
    double t = x2 * x3 - 1.0 / (x2 * x4);
    double expected = std::sqrt(x1 * x1 + t * t);
    CHECK(std::abs(ds.targets(i) - expected) <= 1e-12 * std::max(1.0, expected));
    CHECK(ds.targets(i) >= 0.0);
  }
}

TEST_CASE("gen_friedman2: degenerate point of the formula") {
  // at x = (0, 40*pi, 0, 1) the formula collapses to 1/(x2*x4) = 1/(40*pi)
  const double pi = 3.14159265358979323846;
  double x1 = 0.0, x2 = 40.0 * pi, x3 = 0.0, x4 = 1.0;
  double t = x2 * x3 - 1.0 / (x2 * x4);
  double value = std::sqrt(x1 * x1 + t * t);
  CHECK(value == doctest::Approx(1.0 / (40.0 * pi)).epsilon(1e-12));
  CHECK(value == doctest::Approx(0.00795774715).epsilon(1e-6));
}

TEST_CASE("load_csv: bundled diabetes and boston datasets") {
  TabularDataset diabetes = load_csv("data/diabetes.csv", "target", "score");
  CHECK(diabetes.n() == 442);
  CHECK(diabetes.d() == 10);
  TabularDataset boston = load_csv("data/boston.csv", "medv", "thousand dollars");
  CHECK(boston.n() == 506);
  CHECK(boston.d() == 13);
  CHECK(boston.feature_names.size() == 13);
}

TEST_CASE("load_csv: tiny file, missing file, bad cells") {
  const char* path = "build/tiny_test.csv";
  {
    std::ofstream out(path);
    out << "a,b\n1.5,2.5\n";
  }
  TabularDataset tiny = load_csv(path, "b", "u");
  CHECK(tiny.n() == 1);
  CHECK(tiny.d() == 1);
  CHECK(tiny.features(0, 0) == doctest::Approx(1.5));
  CHECK(tiny.targets(0) == doctest::Approx(2.5));

  CHECK_THROWS(load_csv("no/such/file.csv", "a", "u"));
  CHECK_THROWS(load_csv(path, "missing_column", "u"));

  {
    std::ofstream out(path);
    out << "a,b\n1.5,oops\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path, "b", "u"),
                       doctest::Contains("row 2"), std::runtime_error);
  std::remove(path);
}

TEST_CASE("standardize: target min-max scaling") {
  TabularDataset ds;
  ds.features = Eigen::MatrixXd(3, 1);
  ds.features << 1, 2, 3;
  ds.targets = Eigen::VectorXd(3);
  ds.targets << 10, 20, 30;
  ds.feature_names = {"f"};
  TabularDataset s = standardize(ds);
  CHECK(s.targets(0) == doctest::Approx(0.0));
  CHECK(s.targets(1) == doctest::Approx(0.5));
  CHECK(s.targets(2) == doctest::Approx(1.0));
  CHECK(std::abs(s.features.col(0).mean()) < 1e-12);
  double var = (s.features.col(0).array() - s.features.col(0).mean())
                   .square()
                   .sum() /
               3.0;
  CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("standardize: round trip is the identity") {
  TabularDataset ds = gen_friedman2(100, 5);
  TabularDataset back = unstandardize(standardize(ds));
  CHECK((back.features - ds.features).cwiseAbs().maxCoeff() <= 1e-12 * 2000.0);
  CHECK((back.targets - ds.targets).cwiseAbs().maxCoeff() <=
        1e-12 * ds.targets.cwiseAbs().maxCoeff());
}

TEST_CASE("standardize: constant columns are errors naming the column") {
  TabularDataset ds;
  ds.features = Eigen::MatrixXd(3, 2);
  ds.features << 1, 5, 2, 5, 3, 5;
  ds.targets = Eigen::VectorXd(3);
  ds.targets << 1, 2, 3;
  ds.feature_names = {"good", "flat"};
  CHECK_THROWS_WITH_AS(standardize(ds), doctest::Contains("flat"),
                       std::runtime_error);

  ds.features.col(1) = Eigen::VectorXd::Random(3);
  ds.targets = Eigen::VectorXd::Constant(3, 4.0);
  CHECK_THROWS_AS(standardize(ds), std::runtime_error);
}

TEST_CASE("apply_standardization reuses fitted parameters") {
  TabularDataset tr = gen_linear(200, 9);
  TabularDataset ev = gen_linear(50, 10);
  TabularDataset trs = standardize(tr);
  TabularDataset evs =
      apply_standardization(ev, *trs.standardization, *trs.target_scaling);
  // same affine map, checked on a single cell
  double expected = (ev.features(0, 0) - trs.standardization->means(0)) /
                    trs.standardization->stds(0);
  CHECK(evs.features(0, 0) == doctest::Approx(expected));
  CHECK(evs.targets(0) ==
        doctest::Approx(trs.target_scaling->to_unit(ev.targets(0))));
}

TEST_CASE("generators: deterministic per seed, distinct across seeds") {
  TabularDataset a = gen_max(20, 8, 1);
  TabularDataset b = gen_max(20, 8, 1);
  TabularDataset c = gen_max(20, 8, 2);
  CHECK(a.features == b.features);
  CHECK(a.targets == b.targets);
  CHECK((a.features - c.features).cwiseAbs().maxCoeff() > 0.0);

  TabularDataset la = gen_linear(20, 3);
  TabularDataset lb = gen_linear(20, 3);
  CHECK(la.features == lb.features);
  CHECK(la.generator_weights == lb.generator_weights);

  TabularDataset fa = gen_friedman2(20, 3);
  TabularDataset fb = gen_friedman2(20, 3);
  CHECK(fa.features == fb.features);
}

TEST_CASE("train_test_split: deterministic 80/20 partition") {
  TabularDataset ds = gen_max(100, 4, 13);
  auto [tr, te] = train_test_split(ds, 0.2, 7);
  CHECK(tr.n() == 80);
  CHECK(te.n() == 20);
  auto [tr2, te2] = train_test_split(ds, 0.2, 7);
  CHECK(tr.features == tr2.features);
  CHECK(te.targets == te2.targets);
  // partition: every original target count is preserved
  Eigen::VectorXd all(100);
  all << tr.targets, te.targets;
  std::sort(all.data(), all.data() + 100);
  Eigen::VectorXd orig = ds.targets;
  std::sort(orig.data(), orig.data() + 100);
  CHECK(all == orig);
}
