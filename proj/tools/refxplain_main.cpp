#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "refxplain/evaluation.hpp"

namespace fs = std::filesystem;
using namespace refxplain;

namespace {

struct DatasetArgs {
  std::string dataset;  // max | linear | friedman | csv
  std::string path;
  std::string target;
  std::string unit = "units";
  int n_samples = 1000;
  std::uint64_t seed = 0;
};

void add_dataset_flags(CLI::App* cmd, DatasetArgs& args) {
  cmd->add_option("--dataset", args.dataset, "max | linear | friedman | csv")
      ->required();
  cmd->add_option("--path", args.path, "CSV file path (for --dataset csv)");
  cmd->add_option("--target", args.target, "target column name (for --dataset csv)");
  cmd->add_option("--unit", args.unit, "output unit label");
  cmd->add_option("--n", args.n_samples, "synthetic sample count");
  cmd->add_option("--seed", args.seed, "generator / training seed");
}

TabularDataset make_dataset(const DatasetArgs& args) {
  if (args.dataset == "max") return gen_max(args.n_samples, 8, args.seed);
  if (args.dataset == "linear") return gen_linear(args.n_samples, args.seed);
  if (args.dataset == "friedman") return gen_friedman2(args.n_samples, args.seed);
  if (args.dataset == "csv") {
    if (args.path.empty() || args.target.empty())
      throw CLI::ValidationError("--dataset csv requires --path and --target");
    return load_csv(args.path, args.target, args.unit);
  }
  throw CLI::ValidationError("unknown --dataset '" + args.dataset + "'");
}

Eigen::VectorXd parse_vector(const std::string& csv) {
  std::vector<double> vals;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  return Eigen::Map<Eigen::VectorXd>(vals.data(), vals.size());
}

int threads_from_env() {
  const char* v = std::getenv("REFXPLAIN_THREADS");
  if (!v) return 1;
  int t = std::atoi(v);
  return t >= 1 ? t : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-value explanations for dense ReLU regression networks"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a net file");
  DatasetArgs train_ds;
  add_dataset_flags(train_cmd, train_ds);
  std::string train_out;
  double lr = 0.05;
  int epochs = 300, batch = 32, hidden = 256;
  train_cmd->add_option("--out", train_out, "output network file")->required();
  train_cmd->add_option("--lr", lr, "learning rate");
  train_cmd->add_option("--epochs", epochs, "epochs");
  train_cmd->add_option("--batch", batch, "batch size");
  train_cmd->add_option("--hidden", hidden, "hidden width");

  // ---- explain ----
  auto* explain_cmd = app.add_subcommand("explain", "Explain one instance");
  std::string net_file, builtin, input_csv, method = "lrp", explain_out;
  double reference = 0.0, q_frac = -1.0, gamma1 = 2.5, gamma2 = 0.0;
  int ig_steps = 128, n_perms = 200;
  std::uint64_t explain_seed = 0;
  DatasetArgs explain_ds;
  auto* net_opt = explain_cmd->add_option("--net", net_file, "network file");
  auto* builtin_opt =
      explain_cmd->add_option("--builtin", builtin, "built-in network: max2");
  net_opt->excludes(builtin_opt);
  explain_cmd->add_option("--input", input_csv, "comma-separated feature vector")
      ->required();
  auto* ref_opt = explain_cmd->add_option("--reference", reference,
                                          "reference value y~ in output units");
  auto* q_opt = explain_cmd->add_option(
      "--q", q_frac, "grid fraction in [0,1]; requires dataset flags for f_max, f(0)");
  ref_opt->excludes(q_opt);
  explain_cmd->add_option(
      "--method", method,
      "lrp | gxi | ig | shapley | shapley-sampled | restructure-lrp | retrain-lrp | "
      "baseline-shift | baseline-scale");
  explain_cmd->add_option("--out", explain_out, "write Explanation JSON here");
  explain_cmd->add_option("--gamma1", gamma1, "LRP gamma, first layer");
  explain_cmd->add_option("--gamma2", gamma2, "LRP gamma, upper layers");
  explain_cmd->add_option("--steps", ig_steps, "IG steps");
  explain_cmd->add_option("--permutations", n_perms, "sampled-Shapley permutations");
  explain_cmd->add_option("--seed", explain_seed, "sampling / retraining seed");
  explain_cmd->add_option("--dataset", explain_ds.dataset,
                          "dataset for --q / retrain-lrp");
  explain_cmd->add_option("--path", explain_ds.path, "CSV path for --dataset csv");
  explain_cmd->add_option("--target", explain_ds.target, "CSV target column");
  explain_cmd->add_option("--n", explain_ds.n_samples, "synthetic sample count");

  // ---- benchmark ----
  auto* bench_cmd = app.add_subcommand("benchmark", "Run the validation benchmark");
  std::string config_file, out_dir = ".";
  std::uint64_t bench_seed = 0;
  bool seed_given = false;
  std::vector<std::string> only_datasets;
  std::vector<double> only_qs;
  bench_cmd->add_option("--config", config_file, "JSON benchmark config");
  bench_cmd->add_option("--out", out_dir, "output directory");
  bench_cmd->add_option("--seed", bench_seed, "master seed override")
      ->each([&](const std::string&) { seed_given = true; });
  bench_cmd->add_option("--datasets", only_datasets, "restrict to these datasets");
  bench_cmd->add_option("--qs", only_qs, "restrict to these grid fractions");

  // ---- selfcheck ----
  auto* self_cmd = app.add_subcommand("selfcheck", "Run release-gate sanity checks");
  (void)self_cmd;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2
  }

  try {
    if (train_cmd->parsed()) {
      TabularDataset raw = make_dataset(train_ds);
      TabularDataset data = standardize(raw);
      std::cout << "dataset: n=" << data.n() << " d=" << data.d() << "\n";
      TrainConfig tc;
      tc.learning_rate = lr;
      tc.epochs = epochs;
      tc.batch_size = std::min<int>(batch, static_cast<int>(data.n()));
      tc.seed = train_ds.seed;
      DenseNetwork init = make_network(static_cast<int>(data.d()), {hidden},
                                       train_ds.seed ^ 0x9e3779b9ULL, raw.unit);
      auto [net, metrics] = train(init, data, tc);
      save_network(net, train_out);
      nlohmann::ordered_json mj;
      mj["final_mse"] = metrics.final_mse;
      mj["r_squared"] = metrics.r2;
      std::ofstream(train_out + ".metrics.json") << mj.dump(2) << "\n";
      std::cout << "R^2 = " << metrics.r2 << "\n";
      std::cout << "wrote " << train_out << "\n";
      return 0;
    }

    if (explain_cmd->parsed()) {
      DenseNetwork net;
      if (!builtin.empty()) {
        if (builtin != "max2") throw std::runtime_error("unknown builtin '" + builtin + "'");
        net = build_max_network();
      } else if (!net_file.empty()) {
        net = load_network(net_file);
      } else {
        throw CLI::ValidationError("explain requires --net or --builtin");
      }
      Eigen::VectorXd x = parse_vector(input_csv);

      double y_ref = reference;
      if (q_frac >= 0.0) {
        if (explain_ds.dataset.empty())
          throw CLI::ValidationError("--q requires --dataset to compute f_max and f(0)");
        TabularDataset data = standardize(make_dataset(explain_ds));
        ReferenceGrid grid = reference_grid(net, data, {q_frac});
        y_ref = grid.values[0];
      }

      LrpConfig lcfg;
      for (std::size_t k = 0; k < net.layers.size(); ++k)
        lcfg.rules.push_back(LrpRule::Gamma(k == 0 ? gamma1 : gamma2));
      Baseline baseline = Baseline::zeros(x.size());

      Explanation e;
      if (method == "lrp") {
        e = lrp(shift_output(net, y_ref), x, lcfg, y_ref);
      } else if (method == "gxi") {
        e = gradient_x_input(net, x);
        e.reference_value = y_ref;
      } else if (method == "ig") {
        e = integrated_gradients(net, x, baseline, ig_steps);
        e.reference_value = y_ref;
      } else if (method == "shapley") {
        e = shapley_exact(clip_positive(net_function(net), y_ref), x, baseline);
        e.unit = net.output_unit;
        e.reference_value = y_ref;
      } else if (method == "shapley-sampled") {
        e = shapley_sampled(clip_positive(net_function(net), y_ref), x, baseline,
                            n_perms, explain_seed);
        e.unit = net.output_unit;
        e.reference_value = y_ref;
      } else if (method == "restructure-lrp") {
        e = lrp(restructure(net, x, y_ref), x, lcfg, y_ref);
      } else if (method == "retrain-lrp") {
        if (explain_ds.dataset.empty())
          throw CLI::ValidationError("retrain-lrp requires --dataset for retraining data");
        TabularDataset data = standardize(make_dataset(explain_ds));
        RetrainConfig rc;
        rc.zero_bias_init = true;
        rc.clip_targets = true;
        rc.base.seed = explain_seed;
        rc.base.learning_rate = 0.05;
        rc.base.epochs = 500;
        rc.base.weight_decay = 1e-3;
        rc.base.step_lr_decay = true;
        rc.base.nonnegative_top = true;
        e = lrp(retrain(net, data, y_ref, rc).net, x, lcfg, y_ref);
      } else if (method == "baseline-shift") {
        e = baseline_shift(lrp(net, x, lcfg), y_ref);
      } else if (method == "baseline-scale") {
        e = baseline_scale(lrp(net, x, lcfg), forward(net, x).y, y_ref);
      } else {
        throw CLI::ValidationError("unknown --method '" + method + "'");
      }

      std::cout << "prediction = " << e.prediction << " " << e.unit << "\n"
                << "reference  = " << e.reference_value << " " << e.unit << "\n"
                << "sum(R)     = " << e.sum() << " " << e.unit << "\n"
                << "conservation_gap = " << e.conservation_gap << "\n";
      for (Eigen::Index i = 0; i < e.attributions.size(); ++i)
        std::cout << "  R[" << i + 1 << "] = " << e.attributions(i) << " " << e.unit
                  << "\n";
      std::string json = explanation_to_json(e, &baseline);
      if (!explain_out.empty())
        std::ofstream(explain_out) << json << "\n";
      return 0;
    }

    if (bench_cmd->parsed()) {
      BenchmarkConfig cfg;
      if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw std::runtime_error("cannot open config " + config_file);
        std::stringstream ss;
        ss << in.rdbuf();
        cfg = benchmark_config_from_json(ss.str());
      }
      if (seed_given) cfg.master_seed = bench_seed;
      if (!only_datasets.empty()) cfg.datasets = only_datasets;
      if (!only_qs.empty()) cfg.qs = only_qs;
      cfg.threads = std::max(cfg.threads, threads_from_env());

      fs::create_directories(out_dir);
      BenchmarkReport report = run_benchmark(cfg);
      std::ofstream(fs::path(out_dir) / "benchmark.csv") << report_to_csv(report);
      std::ofstream(fs::path(out_dir) / "benchmark.json") << report_to_json(report);
      std::ofstream(fs::path(out_dir) / "benchmark_means.csv")
          << report_to_means_csv(report);
      std::cout << report_to_csv(report);

      int total = 0, failures = 0;
      for (const auto& r : report.records) {
        ++total;
        if (r.failed) ++failures;
      }
      if (failures > 0)
        std::cerr << failures << "/" << total << " runs failed\n";
      return failures * 10 <= total ? 0 : 1;  // exit 0 if >= 90% succeeded
    }

    if (self_cmd->parsed()) {
      auto checks = run_selfcheck();
      bool all_pass = true;
      for (const auto& c : checks) {
        std::cout << (c.pass ? "PASS  " : "FAIL  ") << c.name
                  << (c.detail.empty() ? "" : "  (" + c.detail + ")") << "\n";
        all_pass = all_pass && c.pass;
      }
      return all_pass ? 0 : 1;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
