#pragma once

#include "speccausal/saddle.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

namespace speccausal {

struct NetworkConfig {
  std::vector<int> hidden{64, 64};
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::linear;
  bool batch_norm = false;
  BiasInit bias_init = BiasInit::zero;
};

struct GeneratorConfig {
  // linear_gaussian_iv | demand_design | ivoc_discrete | pcl_discrete
  std::string name = "linear_gaussian_iv";
  double slope = 2.0;        // linear_gaussian_iv
  double confounding = 1.0;  // linear_gaussian_iv
  double rho = 0.5;          // demand_design
  bool high_dim = false;     // demand_design
};

struct RepresentationConfig {
  // Exact features instead of learned ones: identity maps for linear_gaussian_iv,
  // table-derived features for the discrete generators.
  bool exact_features = false;
  int d = 4;  // iv
  int d_x = 8;
  int d_z = 8;
  int d_o = 16;
  int d_y = 32;
  // Keyed by phi, psi, xi, nu; missing entries use the defaults of NetworkConfig.
  std::map<std::string, NetworkConfig> networks;
  ContrastiveLoss loss = ContrastiveLoss::l2;
  int epochs = 60;
  int batch_size = 256;
  AdamConfig adam;
  double tensor_init_scale = 0.1;
  // Train only the outcome factorization, with every component free, for ivoc/pcl.
  bool skip_treatment_factorization = false;

  NetworkConfig network(const std::string& name) const;
};

struct EstimatorConfig {
  SolveMethod method = SolveMethod::closed_form;
  RegularizerKind regularizer = RegularizerKind::param_l2;
  std::vector<double> lambdas{1e-4, 1e-3, 1e-2};
  SaddleOptions options;
};

struct BaselineConfig {
  bool direct_ridge = true;
  bool two_stage_ls = true;
  double lambda = 0.0;
};

struct ExperimentConfig {
  Setting setting = Setting::iv;
  GeneratorConfig generator;
  RepresentationConfig representation;
  EstimatorConfig estimator;
  BaselineConfig baselines;
  bool split_rep_estimation = true;
  double split_fraction = 0.5;  // share of the training rows used for the representation
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::size_t unlabeled_n = 0;
  std::uint64_t seed = 0;
  int replicates = 1;
  // Replicate r runs with seed mix_seed(seed, r); otherwise every replicate reuses seed.
  bool replicate_subseeds = true;

  void validate() const;
};

// Missing fields take the defaults above; unknown fields and bad values raise ConfigError naming the field.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);
// FNV-1a 64 of the canonical JSON of the fully defaulted config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// Per-replicate seeds.
std::uint64_t replicate_seed(const ExperimentConfig& cfg, int replicate);
enum class DataRole { train, test, unlabeled };
Dataset generate_dataset(const ExperimentConfig& cfg, DataRole role, std::uint64_t rep_seed);

struct DataSplit {
  std::vector<std::size_t> representation;
  std::vector<std::size_t> estimation;
};
DataSplit split_rows(const ExperimentConfig& cfg, std::size_t n, std::uint64_t rep_seed);

using AnyRepresentation = std::variant<IVRepresentation, ConditionalRepresentation>;
using AnySolution = std::variant<IVSolution, ConditionalSolution>;

struct TrainedRepresentation {
  AnyRepresentation rep;
  std::map<std::string, std::vector<double>> loss_traces;  // keyed by stage name
};

TrainedRepresentation train_configured_representation(const ExperimentConfig& cfg, const Dataset& rep_data,
                                                       const Dataset* unlabeled, std::uint64_t rep_seed);
AnySolution fit_configured(const ExperimentConfig& cfg, const AnyRepresentation& rep, const Dataset& est_data,
                           double lambda);
// Structural predictions on `inputs`. PCL averages over the outcome-proxy rows of `reference`.
Vector predict_configured(const AnyRepresentation& rep, const AnySolution& sol, const Dataset& inputs,
                          const Dataset& reference);

void save_any(const AnyRepresentation& rep, const std::filesystem::path& path);
void save_any(const AnySolution& sol, const std::filesystem::path& path);
AnyRepresentation load_any_representation(Setting s, const std::filesystem::path& path);
AnySolution load_any_solution(Setting s, const std::filesystem::path& path);

struct LambdaResult {
  double lambda = 0.0;
  double oos_mse = std::numeric_limits<double>::quiet_NaN();
  std::string error;
  SaddleDiagnostics diagnostics;
};

struct LossSummary {
  int epochs = 0;
  double first = 0.0;
  double last = 0.0;
  double min = 0.0;
};

struct ResultRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  int replicate = 0;
  std::uint64_t replicate_seed = 0;
  Setting setting = Setting::iv;
  std::string status = "ok";  // ok | failed
  std::string failed_phase;
  std::string error;
  double oos_mse = std::numeric_limits<double>::quiet_NaN();
  double lambda_selected = std::numeric_limits<double>::quiet_NaN();
  std::vector<LambdaResult> sweep;
  std::map<std::string, double> baseline_mse;
  std::map<std::string, LossSummary> loss;
  // Setting-specific scalars, e.g. the fitted slope of the IV predictions.
  std::map<std::string, double> extras;
  std::map<std::string, double> seconds;  // wall clock per phase

  bool ok() const { return status == "ok"; }
};

nlohmann::json to_json(const ResultRecord& r, bool include_timing = true);

using LogFn = std::function<void(const std::string&)>;

// Replicates run on up to `threads` workers; records come back in replicate order.
std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg, int threads = 1, const LogFn& log = {});

// Appends records to <dir>/results_<timestamp>_<hash>.jsonl and .csv. Existing files are never
// reused: a numeric suffix is added until both names are free.
class ResultWriter {
 public:
  ResultWriter(const std::filesystem::path& dir, const std::string& hash);
  ~ResultWriter();
  ResultWriter(const ResultWriter&) = delete;
  ResultWriter& operator=(const ResultWriter&) = delete;

  void write(const ResultRecord& r);
  const std::filesystem::path& jsonl_path() const { return jsonl_path_; }
  const std::filesystem::path& csv_path() const { return csv_path_; }

 private:
  std::mutex mu_;
  std::filesystem::path jsonl_path_;
  std::filesystem::path csv_path_;
  std::FILE* jsonl_ = nullptr;
  std::FILE* csv_ = nullptr;
};

// Invariant and gradient suite behind the `check` subcommand.
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};
std::vector<CheckResult> run_checks(std::uint64_t seed = 0);

}  // namespace speccausal
