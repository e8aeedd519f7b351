#include <doctest.h>

#include <cmath>
#include <random>

#include "refxplain/refvalue.hpp"
#include "refxplain/rng.hpp"

using namespace refxplain;

namespace {

DenseNetwork random_net(Rng& rng, int d, int hidden) {
  DenseNetwork net = make_network(d, {hidden}, rng(), "units");
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& l : net.layers)
    for (Eigen::Index i = 0; i < l.biases.size(); ++i) l.biases(i) = nd(rng);
  return net;
}

Eigen::VectorXd random_vec(Rng& rng, Eigen::Index d) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd x(d);
  for (Eigen::Index i = 0; i < d; ++i) x(i) = nd(rng);
  return x;
}

}  // namespace

TEST_CASE("shift_output: forward equals f(x) - y_ref") {
  DenseNetwork net = build_max_network();
  Eigen::VectorXd x(2);
  x << 1100, 900;
  CHECK(forward(shift_output(net, 0.0), x).y == doctest::Approx(1100.0));
  CHECK(forward(shift_output(net, 1000.0), x).y == doctest::Approx(100.0));

  Rng rng(2);
  DenseNetwork rnet = random_net(rng, 4, 8);
  DenseNetwork shifted = shift_output(rnet, 0.37);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd xp = random_vec(rng, 4);
    CHECK(std::abs(forward(shifted, xp).y - (forward(rnet, xp).y - 0.37)) <= 1e-12);
  }
}

TEST_CASE("flood_reference: worked max-network case") {
  Eigen::VectorXd a(3), w(3);
  a << 2000, 200, 0;
  w << 0.5, 0.5, 0.5;
  FloodSolution sol = flood_reference(a, w, 0.0, 1000.0);
  CHECK(sol.t == doctest::Approx(100.0));
  CHECK(sol.a_tilde(0) == doctest::Approx(1900.0));
  CHECK(sol.a_tilde(1) == doctest::Approx(100.0));
  CHECK(sol.a_tilde(2) == doctest::Approx(0.0));
  // substitution check
  CHECK(sol.a_tilde.dot(w) == doctest::Approx(1000.0));
  CHECK(sol.residual <= 1e-8 * 1000.0);
}

TEST_CASE("flood_reference: y_ref = f(x) is the zero-shift fixed point") {
  Eigen::VectorXd a(3), w(3);
  a << 2000, 200, 0;
  w << 0.5, 0.5, 0.5;
  FloodSolution sol = flood_reference(a, w, 0.0, a.dot(w));
  CHECK(sol.t == doctest::Approx(0.0));
  CHECK((sol.a_tilde - a).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("flood_reference: y_ref = 0 with positive weights floods fully") {
  Eigen::VectorXd a(3), w(3);
  a << 2000, 200, 0;
  w << 0.5, 0.5, 0.5;
  FloodSolution sol = flood_reference(a, w, 0.0, 0.0);
  CHECK(sol.t >= a.maxCoeff());
  CHECK(sol.a_tilde.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("flood_reference: unreachable target reports the attainable range") {
  Eigen::VectorXd a(2), w(2);
  a << 1, 1;
  w << 1, 1;
  CHECK_THROWS_WITH_AS(flood_reference(a, w, 0.0, -1.0),
                       doctest::Contains("attainable range"), std::runtime_error);
}

TEST_CASE("flood_reference: mixed-sign weights, smallest-|t| root flagged") {
  // h(t) = 2(1-t)^+ - (2-t)^+ hits -0.5 at t=0.5 and t=1.5
  Eigen::VectorXd a(2), w(2);
  a << 1, 2;
  w << 2, -1;
  FloodSolution sol = flood_reference(a, w, 0.0, -0.5);
  CHECK(sol.t == doctest::Approx(0.5));
  CHECK(sol.multiple_roots);
  CHECK(sol.a_tilde.dot(w) == doctest::Approx(-0.5));
}

TEST_CASE("flood_reference: a_tilde reproducible from the stored t") {
  Eigen::VectorXd a(4), w(4);
  a << 0.3, 1.7, 0.0, 2.4;
  w << 0.8, -0.2, 0.5, 0.1;
  FloodSolution sol = flood_reference(a, w, 0.0, 0.11);
  for (Eigen::Index j = 0; j < 4; ++j)
    CHECK(sol.a_tilde(j) == doctest::Approx(std::max(0.0, a(j) - sol.t)));
  CHECK((sol.a_tilde.array() >= 0.0).all());
}

TEST_CASE("flood_reference: asymmetric mode raises positive-weight neurons") {
  // a=(1,1), w=(1,-1): h(t) = (1 + t/4)^+ - (1 - t)^+ = 1.25 t near 0
  Eigen::VectorXd a(2), w(2);
  a << 1, 1;
  w << 1, -1;
  FloodSolution sol = flood_reference(a, w, 0.0, 1.0, FloodMode::Asymmetric);
  CHECK(sol.t == doctest::Approx(0.8));
  CHECK(sol.a_tilde(0) == doctest::Approx(1.2));
  CHECK(sol.a_tilde(1) == doctest::Approx(0.2));
  CHECK(sol.a_tilde.dot(w) == doctest::Approx(1.0));
}

TEST_CASE("flood_reference: negative activations rejected") {
  Eigen::VectorXd a(2), w(2);
  a << -0.1, 1;
  w << 1, 1;
  CHECK_THROWS_AS(flood_reference(a, w, 0.0, 0.5), std::invalid_argument);
}

TEST_CASE("triplicate_relu: pointwise identity cases") {
  auto relu = [](double z) { return std::max(0.0, z); };
  auto triple = [&](double z, double at) {
    return relu(z - at) + relu(-z) - relu(-z + at);
  };
  CHECK(triple(3, 1) == doctest::Approx(relu(3) - 1));    // 2, active branch
  CHECK(triple(-2, 1) == doctest::Approx(relu(-2) - 1));  // -1, inactive branch
  CHECK(triple(0.5, 1) == doctest::Approx(relu(0.5) - 1));  // -0.5, flooded branch
  for (double z = -10.0; z <= 10.0; z += 0.5)
    for (double at = 0.0; at <= 5.0; at += 0.5) CHECK(triple(z, at) == relu(z) - at);
}

TEST_CASE("triplicate_relu: layer-level equivalence") {
  Rng rng(4);
  DenseLayer hidden;
  hidden.weights = Eigen::MatrixXd::Random(6, 3);
  hidden.biases = Eigen::VectorXd::Random(6) * 0.5;
  hidden.activation = Activation::ReLU;
  Eigen::VectorXd outgoing = Eigen::VectorXd::Random(6);
  Eigen::VectorXd a_tilde = Eigen::VectorXd::Random(6).cwiseAbs();

  DenseLayer trip;
  Eigen::VectorXd trip_out;
  triplicate_relu(hidden, outgoing, a_tilde, trip, trip_out);
  CHECK(trip.weights.rows() == 18);

  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd x = random_vec(rng, 3);
    Eigen::VectorXd z = hidden.weights * x + hidden.biases;
    double expected = outgoing.dot((z.cwiseMax(0.0) - a_tilde).eval());
    Eigen::VectorXd zt = trip.weights * x + trip.biases;
    double got = trip_out.dot(zt.cwiseMax(0.0));
    CHECK(std::abs(got - expected) <= 1e-12 * std::max(1.0, std::abs(expected)));
  }

  Eigen::VectorXd bad = a_tilde;
  bad(0) = -1.0;
  DenseLayer t2;
  Eigen::VectorXd o2;
  CHECK_THROWS_AS(triplicate_relu(hidden, outgoing, bad, t2, o2),
                  std::invalid_argument);
}

TEST_CASE("restructure: output equals f - y_ref at the anchor and globally") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    DenseNetwork net = random_net(rng, 4, 12);
    Eigen::VectorXd x = random_vec(rng, 4);
    double y_ref = 0.5 * forward(net, x).y;
    DenseNetwork rnet;
    try {
      rnet = restructure(net, x, y_ref);
    } catch (const std::runtime_error&) {
      continue;  // flood unsolvable on this draw
    }
    CHECK(std::abs(forward(rnet, x).y - (forward(net, x).y - y_ref)) <= 1e-9);
    DenseNetwork shifted = shift_output(net, y_ref);
    for (int i = 0; i < 100; ++i) {
      Eigen::VectorXd xp = random_vec(rng, 4);
      CHECK(std::abs(forward(rnet, xp).y - forward(shifted, xp).y) <= 1e-9);
    }
    CHECK(rnet.metadata.count("reference_value") == 1);
    CHECK(rnet.metadata.count("flood_t") == 1);
    CHECK(rnet.metadata.count("anchor_input_hash") == 1);
  }
}

TEST_CASE("restructure: wrong top structure directs to retrain") {
  DenseNetwork net;
  DenseLayer top;
  top.weights = Eigen::MatrixXd::Ones(1, 2);
  top.biases = Eigen::VectorXd::Zero(1);
  top.activation = Activation::Identity;
  net.layers.push_back(top);
  Eigen::VectorXd x(2);
  x << 1, 2;
  CHECK_THROWS_WITH_AS(restructure(net, x, 0.5), doctest::Contains("retrain"),
                       std::runtime_error);
}

TEST_CASE("restructure: LRP on the restructured max network favors bidder 1") {
  DenseNetwork net = build_max_network();
  Eigen::VectorXd x(2);
  x << 1100, 900;
  DenseNetwork rnet = restructure(net, x, 1000.0);
  CHECK(forward(rnet, x).y == doctest::Approx(100.0));

  LrpConfig cfg;
  cfg.rules = {LrpRule::Gamma(2.5), LrpRule::Gamma(0.0)};
  Explanation e = lrp(rnet, x, cfg, 1000.0);
  // Shapley oracle on g+ is (100, 0); at least 95 of the 100 units go to x1
  CHECK(e.attributions(0) >= 95.0);
  CHECK(std::abs(e.attributions(1)) < std::abs(e.attributions(0)));
}

TEST_CASE("retrain: near-optimal start stays near-optimal") {
  TabularDataset data = standardize(gen_linear(300, 15));
  DenseNetwork init = make_network(static_cast<int>(data.d()), {64}, 1);
  TrainConfig tc;
  tc.learning_rate = 0.05;
  tc.epochs = 120;
  tc.seed = 2;
  auto [net, metrics] = train(init, data, tc);

  RetrainConfig rc;
  rc.tau_minus = -std::numeric_limits<double>::infinity();
  rc.freeze = FreezeMode::None;
  rc.init_from_original = true;
  rc.base.learning_rate = 1e-6;
  rc.base.epochs = 1;
  RetrainResult res = retrain(net, data, 0.0, rc);
  CHECK(res.band_size == data.n());
  CHECK(res.band_mse <= metrics.final_mse + 1e-6);
}

TEST_CASE("retrain: linear teacher is matched on the band") {
  // teacher f(x) = w.x + b realized as a tiny net; retrain must fit f - y_ref
  Rng rng(16);
  DenseNetwork teacher = random_net(rng, 3, 16);
  TabularDataset data;
  data.features = Eigen::MatrixXd::Random(400, 3);
  data.targets.resize(400);
  for (int i = 0; i < 400; ++i)
    data.targets(i) = forward(teacher, data.features.row(i).transpose()).y;

  RetrainConfig rc;
  rc.tau_minus = -std::numeric_limits<double>::infinity();
  rc.freeze = FreezeMode::None;
  rc.init_from_original = true;
  rc.base.learning_rate = 0.02;
  rc.base.epochs = 60;
  rc.base.seed = 3;
  RetrainResult res = retrain(teacher, data, 0.25, rc);
  CHECK(res.band_mse < 1e-4);
  // spot check: surrogate tracks f - y_ref
  Eigen::VectorXd x = random_vec(rng, 3);
  CHECK(std::abs(forward(res.net, x).y - (forward(teacher, x).y - 0.25)) < 0.05);
}

TEST_CASE("retrain: frozen top biases stay bit-identical; empty band throws") {
  TabularDataset data = standardize(gen_linear(100, 21));
  DenseNetwork init = make_network(static_cast<int>(data.d()), {16}, 4);
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = 5;
  auto [net, metrics] = train(init, data, tc);

  RetrainConfig rc;
  rc.base.epochs = 10;
  rc.base.seed = 6;
  REQUIRE(rc.freeze == FreezeMode::TopBiases);
  RetrainResult res = retrain(net, data, 0.4, rc);
  CHECK(res.net.layers.back().biases(0) == net.layers.back().biases(0));

  rc.tau_minus = 1e9;  // band far above every g value
  rc.tau_plus = 2e9;
  CHECK_THROWS_AS(retrain(net, data, 0.4, rc), std::runtime_error);
}

TEST_CASE("retrain: pure bias drift raises the warning") {
  // single linear layer with frozen weights: only the bias can move
  DenseNetwork net;
  DenseLayer top;
  top.weights = Eigen::MatrixXd::Ones(1, 2) * 0.5;
  top.biases = Eigen::VectorXd::Zero(1);
  top.activation = Activation::Identity;
  net.layers.push_back(top);

  TabularDataset data;
  data.features = Eigen::MatrixXd::Random(100, 2);
  data.targets.resize(100);
  for (int i = 0; i < 100; ++i)
    data.targets(i) = 0.5 * data.features.row(i).sum();

  RetrainConfig rc;
  rc.tau_minus = -std::numeric_limits<double>::infinity();
  rc.freeze = FreezeMode::AllWeightsAdjustBiases;
  rc.base.learning_rate = 0.05;
  rc.base.epochs = 40;
  RetrainResult res = retrain(net, data, 0.7, rc);
  CHECK(res.top_bias_drift_warning);
  CHECK(res.net.layers[0].weights == net.layers[0].weights);
}

TEST_CASE("baseline_shift") {
  Explanation e;
  e.attributions = Eigen::VectorXd::Constant(2, 4.0);
  e.prediction = 8.0;

  Explanation same = baseline_shift(e, 0.0);
  CHECK(same.attributions == e.attributions);

  Explanation out = baseline_shift(e, 4.0);
  CHECK(out.attributions(0) == doctest::Approx(2.0));
  CHECK(out.attributions(1) == doctest::Approx(2.0));
  CHECK(out.sum() == doctest::Approx(e.sum() - 4.0));
  CHECK(out.conservation_gap ==
        doctest::Approx(out.prediction - out.reference_value - out.sum()));
}

TEST_CASE("baseline_scale") {
  Explanation e;
  e.attributions = Eigen::VectorXd(2);
  e.attributions << 6, 4;
  e.prediction = 10.0;

  Explanation same = baseline_scale(e, 10.0, 0.0);
  CHECK(same.attributions == e.attributions);

  Explanation out = baseline_scale(e, 10.0, 5.0);
  CHECK(out.attributions(0) == doctest::Approx(3.0));
  CHECK(out.attributions(1) == doctest::Approx(2.0));
  CHECK(out.sum() == doctest::Approx(e.sum() * 0.5));

  CHECK_THROWS_AS(baseline_scale(e, 1e-13, 5.0), std::runtime_error);
}
