#include "speccausal/benchdata.hpp"
#include "speccausal/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace sc = speccausal;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  bool verbose = false;
  std::optional<double> lambda;
};

std::filesystem::path out_dir(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("SPECTRAL_CAUSAL_OUT"); env && *env) return env;
  return "results";
}

sc::ExperimentConfig config(const Options& o) {
  sc::ExperimentConfig cfg = o.config.empty() ? sc::parse_experiment_config(nlohmann::json::object())
                                              : sc::load_experiment_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

sc::LogFn logger(const Options& o) {
  if (!o.verbose) return {};
  return [](const std::string& m) { std::cerr << m << "\n"; };
}

void note(const Options& o, const std::string& m) {
  if (o.verbose) std::cerr << m << "\n";
}

// The staged subcommands reproduce replicate 0 of `experiment`, one phase at a time.
struct Stage {
  sc::ExperimentConfig cfg;
  std::filesystem::path dir;
  std::uint64_t rs;
};

Stage stage(const Options& o) {
  Stage s{config(o), out_dir(o), 0};
  s.rs = sc::replicate_seed(s.cfg, 0);
  return s;
}

sc::Dataset split_part(const Stage& s, bool representation) {
  const sc::Dataset train = sc::load_dataset(s.dir / "train.csv");
  const sc::DataSplit split = sc::split_rows(s.cfg, static_cast<std::size_t>(train.rows()), s.rs);
  return train.subset(representation ? split.representation : split.estimation);
}

int cmd_gen(const Options& o) {
  const Stage s = stage(o);
  std::filesystem::create_directories(s.dir);
  sc::save_dataset(sc::generate_dataset(s.cfg, sc::DataRole::train, s.rs), s.dir / "train.csv");
  sc::save_dataset(sc::generate_dataset(s.cfg, sc::DataRole::test, s.rs), s.dir / "test.csv");
  if (s.cfg.unlabeled_n > 0) {
    sc::save_dataset(sc::generate_dataset(s.cfg, sc::DataRole::unlabeled, s.rs), s.dir / "unlabeled.csv");
  }
  std::cout << "wrote datasets to " << s.dir.string() << "\n";
  return 0;
}

int cmd_train_rep(const Options& o) {
  const Stage s = stage(o);
  const sc::Dataset rep_data = split_part(s, true);
  std::optional<sc::Dataset> unlabeled;
  if (s.cfg.unlabeled_n > 0) unlabeled = sc::load_dataset(s.dir / "unlabeled.csv");
  const sc::TrainedRepresentation t =
      sc::train_configured_representation(s.cfg, rep_data, unlabeled ? &*unlabeled : nullptr, s.rs);
  sc::save_any(t.rep, s.dir / "representation.ckpt");
  nlohmann::json losses = nlohmann::json::object();
  for (const auto& [stage_name, trace] : t.loss_traces) {
    losses[stage_name] = trace.empty() ? nlohmann::json(nullptr) : nlohmann::json(trace.back());
  }
  std::cout << nlohmann::json{{"representation", (s.dir / "representation.ckpt").string()}, {"final_loss", losses}}.dump()
            << "\n";
  return 0;
}

int cmd_fit(const Options& o) {
  const Stage s = stage(o);
  const sc::Dataset est = split_part(s, false);
  const sc::AnyRepresentation rep = sc::load_any_representation(s.cfg.setting, s.dir / "representation.ckpt");
  const double lambda = o.lambda.value_or(s.cfg.estimator.lambdas.front());
  const sc::AnySolution sol = sc::fit_configured(s.cfg, rep, est, lambda);
  sc::save_any(sol, s.dir / "solution.ckpt");
  const auto diag = std::visit([](const auto& x) { return x.diagnostics; }, sol);
  std::cout << nlohmann::json{{"solution", (s.dir / "solution.ckpt").string()},
                              {"lambda", lambda},
                              {"method", diag.method},
                              {"iterations", diag.iterations},
                              {"gap", diag.gap}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const Stage s = stage(o);
  const sc::Dataset test = sc::load_dataset(s.dir / "test.csv");
  if (!test.truth) throw sc::Error("test.csv carries no ground-truth column");
  const sc::Dataset est = split_part(s, false);
  const sc::AnyRepresentation rep = sc::load_any_representation(s.cfg.setting, s.dir / "representation.ckpt");
  const sc::AnySolution sol = sc::load_any_solution(s.cfg.setting, s.dir / "solution.ckpt");
  const double mse = sc::oos_mse(sc::predict_configured(rep, sol, test, est), *test.truth);
  const nlohmann::json j{{"oos_mse", mse}, {"n_test", test.rows()}};
  std::ofstream(s.dir / "eval.json") << j.dump(2) << "\n";
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_experiment(const Options& o) {
  const sc::ExperimentConfig cfg = config(o);
  const std::string hash = sc::config_hash(cfg);
  note(o, "config " + hash + ", " + std::to_string(cfg.replicates) + " replicate(s)");
  const auto records = sc::run_experiment(cfg, o.threads, logger(o));
  sc::ResultWriter writer(out_dir(o), hash);
  bool all_ok = true;
  for (const auto& r : records) {
    writer.write(r);
    all_ok = all_ok && r.ok();
    std::cout << "replicate " << r.replicate << ": " << r.status;
    if (r.ok()) {
      std::cout << " oos_mse=" << r.oos_mse << " lambda=" << r.lambda_selected;
      for (const auto& [k, v] : r.baseline_mse) std::cout << " " << k << "=" << v;
    } else {
      std::cout << " (" << r.failed_phase << ": " << r.error << ")";
    }
    std::cout << "\n";
  }
  std::cout << "results: " << writer.jsonl_path().string() << "\n";
  return all_ok ? 0 : 2;
}

int cmd_check(const Options& o) {
  bool all = true;
  for (const auto& c : sc::run_checks(o.seed.value_or(0))) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << "  " << c.detail << "\n";
    all = all && c.passed;
  }
  return all ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral-representation causal estimators: data generation, training, estimation and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "master seed, overrides the config");
  app.add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", o.out, "output directory (default: $SPECTRAL_CAUSAL_OUT, else ./results)");
  app.add_option("--threads", o.threads, "parallel replicates")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", o.verbose, "progress on stderr");

  using Cmd = int (*)(const Options&);
  Cmd chosen = nullptr;
  const auto sub = [&](const char* name, const char* help, Cmd cmd) {
    auto* s = app.add_subcommand(name, help);
    s->callback([&chosen, cmd] { chosen = cmd; });
    return s;
  };
  sub("gen", "write train/test (and unlabeled) datasets for replicate 0", cmd_gen);
  sub("train-rep", "train the representation on the representation split", cmd_train_rep);
  auto* fit = sub("fit", "solve the saddle-point estimator on the estimation split", cmd_fit);
  double lambda = 0.0;
  auto* lambda_opt = fit->add_option("--lambda", lambda, "regularization weight (default: first of the sweep)");
  sub("eval", "out-of-sample error of the fitted solution", cmd_eval);
  sub("experiment", "run every replicate end to end and write result files", cmd_experiment);
  sub("check", "run the invariant and gradient checks", cmd_check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (*seed_opt) o.seed = seed;
  if (*lambda_opt) o.lambda = lambda;

  try {
    return chosen(o);
  } catch (const sc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
