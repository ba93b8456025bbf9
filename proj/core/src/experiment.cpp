#include "speccausal/experiment.hpp"

#include "speccausal/benchdata.hpp"
#include "speccausal/discrete.hpp"
#include "speccausal/exact_representation.hpp"
#include "speccausal/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

namespace speccausal {

using nlohmann::json;

namespace {

// Reads the fields of one JSON object and rejects anything it was not asked about.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected a JSON object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
        throw ConfigError(field(key) + ": out of range");
      out = static_cast<int>(x);
    }
  }
  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
        throw ConfigError(field(key) + ": expected a nonnegative integer");
      out = v->get<std::size_t>();
    }
  }
  void read_u64(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
        throw ConfigError(field(key) + ": expected a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  template <class Enum, class Parse>
  void read_enum(const std::string& key, Enum& out, Parse parse) {
    std::string s;
    if (!find(key)) return;
    read(key, s);
    try {
      out = parse(s);
    } catch (const Error& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown field");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const std::set<std::string> kGenerators{"linear_gaussian_iv", "demand_design", "ivoc_discrete", "pcl_discrete"};
const std::vector<std::string> kNetworkNames{"phi", "psi", "xi", "nu"};

Setting generator_setting(const std::string& name) {
  if (name == "linear_gaussian_iv") return Setting::iv;
  if (name == "pcl_discrete") return Setting::pcl;
  return Setting::ivoc;
}

NetworkConfig parse_network(const json& j, const std::string& path) {
  NetworkConfig n;
  FieldReader r(j, path);
  if (const json* h = r.find("hidden")) {
    if (!h->is_array()) throw ConfigError(path + ".hidden: expected an array of layer widths");
    n.hidden.clear();
    for (const auto& w : *h) {
      if (!w.is_number_integer() || w.get<std::int64_t>() <= 0)
        throw ConfigError(path + ".hidden: layer widths must be positive integers");
      n.hidden.push_back(w.get<int>());
    }
  }
  r.read_enum("activation", n.hidden_activation, parse_activation);
  r.read_enum("output_activation", n.output_activation, parse_activation);
  r.read("batch_norm", n.batch_norm);
  r.read_enum("bias_init", n.bias_init, parse_bias_init);
  r.finish();
  return n;
}

json network_json(const NetworkConfig& n) {
  return {{"hidden", n.hidden},
          {"activation", to_string(n.hidden_activation)},
          {"output_activation", to_string(n.output_activation)},
          {"batch_norm", n.batch_norm},
          {"bias_init", to_string(n.bias_init)}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t argmax_row(const Matrix& m, Eigen::Index i) {
  Eigen::Index k = 0;
  m.row(i).maxCoeff(&k);
  return static_cast<std::size_t>(k);
}

Dataset ivoc_discrete_dataset(std::size_t n, std::uint64_t seed) {
  const DiscreteJointSpec spec = default_ivoc_spec();
  Dataset d = gen_discrete_toy(spec, n, seed);
  const Matrix table = solve_iv_exact(spec);
  const Matrix& x = d.col("x");
  const Matrix& o = d.col("o");
  Vector truth(d.rows());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    truth(i) = table(static_cast<Eigen::Index>(argmax_row(x, i)), static_cast<Eigen::Index>(argmax_row(o, i)));
  }
  d.truth = std::move(truth);
  d.metadata["generator"] = "ivoc_discrete";
  return d;
}

FeatureNetwork make_network(const RepresentationConfig& rc, const std::string& name, int in, int out,
                            std::uint64_t seed, const Matrix& sample) {
  const NetworkConfig nc = rc.network(name);
  NetworkSpec spec = NetworkSpec::mlp(in, nc.hidden, out, nc.hidden_activation, nc.output_activation, nc.batch_norm);
  spec.bias_init = nc.bias_init;
  FeatureNetwork net(std::move(spec), seed);
  standardize_inputs(net, sample);
  return net;
}

LossSummary summarize(const std::vector<double>& trace) {
  LossSummary s;
  s.epochs = static_cast<int>(trace.size());
  if (trace.empty()) return s;
  s.first = trace.front();
  s.last = trace.back();
  s.min = *std::min_element(trace.begin(), trace.end());
  return s;
}

// Least-squares slope of the predictions on a single treatment column.
double fitted_slope(const Matrix& x, const Vector& pred) {
  const Vector xc = x.col(0).array() - x.col(0).mean();
  const Vector pc = pred.array() - pred.mean();
  return xc.dot(pc) / xc.squaredNorm();
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' ? ' ' : c);
  }
  return out + "\"";
}

std::string fmt_double(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

NetworkConfig RepresentationConfig::network(const std::string& name) const {
  auto it = networks.find(name);
  return it == networks.end() ? NetworkConfig{} : it->second;
}

void ExperimentConfig::validate() const {
  if (!kGenerators.count(generator.name))
    throw ConfigError("generator.name: unknown generator '" + generator.name + "'");
  if (generator_setting(generator.name) != setting)
    throw ConfigError("setting: generator '" + generator.name + "' produces " +
                      to_string(generator_setting(generator.name)) + " data, not " + to_string(setting));
  if (!(generator.rho >= 0.0 && generator.rho < 1.0)) throw ConfigError("generator.rho: must lie in [0, 1)");
  if (!std::isfinite(generator.slope)) throw ConfigError("generator.slope: must be finite");
  if (!std::isfinite(generator.confounding)) throw ConfigError("generator.confounding: must be finite");
  if (generator.high_dim && generator.name != "demand_design")
    throw ConfigError("generator.high_dim: only the demand_design generator has a high-dimensional variant");

  const auto& rc = representation;
  if (rc.exact_features && generator.name == "demand_design")
    throw ConfigError("representation.exact_features: no exact features exist for demand_design");
  for (auto [name, v] : {std::pair{"d", rc.d}, {"d_x", rc.d_x}, {"d_z", rc.d_z}, {"d_o", rc.d_o}, {"d_y", rc.d_y}}) {
    if (v <= 0) throw ConfigError(std::string("representation.") + name + ": must be positive");
  }
  for (const auto& [name, net] : rc.networks) {
    if (std::find(kNetworkNames.begin(), kNetworkNames.end(), name) == kNetworkNames.end())
      throw ConfigError("representation.networks." + name + ": unknown network (expected phi, psi, xi or nu)");
    for (int w : net.hidden) {
      if (w <= 0) throw ConfigError("representation.networks." + name + ".hidden: layer widths must be positive");
    }
  }
  if (rc.epochs < 0) throw ConfigError("representation.epochs: must be nonnegative");
  if (rc.batch_size < 2) throw ConfigError("representation.batch_size: must be at least 2");
  if (!(rc.adam.lr > 0.0)) throw ConfigError("representation.optimizer.lr: must be positive");
  if (!(rc.adam.beta1 >= 0.0 && rc.adam.beta1 < 1.0)) throw ConfigError("representation.optimizer.beta1: must lie in [0, 1)");
  if (!(rc.adam.beta2 >= 0.0 && rc.adam.beta2 < 1.0)) throw ConfigError("representation.optimizer.beta2: must lie in [0, 1)");
  if (!(rc.adam.eps > 0.0)) throw ConfigError("representation.optimizer.eps: must be positive");
  if (!(rc.tensor_init_scale > 0.0)) throw ConfigError("representation.tensor_init_scale: must be positive");
  if (rc.skip_treatment_factorization && setting == Setting::iv)
    throw ConfigError("representation.skip_treatment_factorization: only meaningful for ivoc and pcl");

  const auto& ec = estimator;
  if (ec.lambdas.empty()) throw ConfigError("estimator.lambdas: must list at least one value");
  for (double l : ec.lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("estimator.lambdas: values must be finite and nonnegative");
  }
  if (!(ec.options.jitter >= 0.0)) throw ConfigError("estimator.jitter: must be nonnegative");
  if (ec.options.max_iters < 1) throw ConfigError("estimator.max_iters: must be at least 1");
  if (!(ec.options.tol > 0.0)) throw ConfigError("estimator.tol: must be positive");
  if (!(ec.options.step_fraction > 0.0 && ec.options.step_fraction < 1.0))
    throw ConfigError("estimator.step_fraction: must lie in (0, 1)");
  if (ec.options.chunk_rows < 1) throw ConfigError("estimator.chunk_rows: must be at least 1");
  if (!(baselines.lambda >= 0.0)) throw ConfigError("baselines.lambda: must be nonnegative");

  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction: must lie in (0, 1)");
  if (n_train < 4) throw ConfigError("n_train: must be at least 4");
  if (split_rep_estimation) {
    const auto rep_rows = static_cast<std::size_t>(std::floor(split_fraction * static_cast<double>(n_train)));
    if (rep_rows < 2 || n_train - rep_rows < 2)
      throw ConfigError("split_fraction: leaves fewer than 2 rows on one side of the split");
  }
  if (n_test < 1) throw ConfigError("n_test: must be at least 1");
  if (replicates < 1) throw ConfigError("replicates: must be at least 1");
}

ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig c;
  FieldReader r(j, "");
  r.read_enum("setting", c.setting, parse_setting);
  if (const json* g = r.find("generator")) {
    FieldReader gr(*g, "generator");
    gr.read("name", c.generator.name);
    gr.read("slope", c.generator.slope);
    gr.read("confounding", c.generator.confounding);
    gr.read("rho", c.generator.rho);
    gr.read("high_dim", c.generator.high_dim);
    gr.finish();
  }
  if (const json* rep = r.find("representation")) {
    auto& rc = c.representation;
    FieldReader rr(*rep, "representation");
    rr.read("exact_features", rc.exact_features);
    rr.read("d", rc.d);
    rr.read("d_x", rc.d_x);
    rr.read("d_z", rc.d_z);
    rr.read("d_o", rc.d_o);
    rr.read("d_y", rc.d_y);
    rr.read_enum("loss", rc.loss, parse_loss);
    rr.read("epochs", rc.epochs);
    rr.read("batch_size", rc.batch_size);
    rr.read("tensor_init_scale", rc.tensor_init_scale);
    rr.read("skip_treatment_factorization", rc.skip_treatment_factorization);
    if (const json* o = rr.find("optimizer")) {
      FieldReader orr(*o, "representation.optimizer");
      orr.read("lr", rc.adam.lr);
      orr.read("beta1", rc.adam.beta1);
      orr.read("beta2", rc.adam.beta2);
      orr.read("eps", rc.adam.eps);
      orr.finish();
    }
    if (const json* nets = rr.find("networks")) {
      if (!nets->is_object()) throw ConfigError("representation.networks: expected a JSON object");
      for (auto it = nets->begin(); it != nets->end(); ++it) {
        const std::string path = "representation.networks." + it.key();
        if (std::find(kNetworkNames.begin(), kNetworkNames.end(), it.key()) == kNetworkNames.end())
          throw ConfigError(path + ": unknown network (expected phi, psi, xi or nu)");
        rc.networks[it.key()] = parse_network(it.value(), path);
      }
    }
    rr.finish();
  }
  if (const json* e = r.find("estimator")) {
    auto& ec = c.estimator;
    FieldReader er(*e, "estimator");
    er.read_enum("method", ec.method, parse_method);
    er.read_enum("regularizer", ec.regularizer, parse_regularizer);
    if (const json* ls = er.find("lambdas")) {
      if (!ls->is_array()) throw ConfigError("estimator.lambdas: expected an array of numbers");
      ec.lambdas.clear();
      for (const auto& l : *ls) {
        if (!l.is_number()) throw ConfigError("estimator.lambdas: expected an array of numbers");
        ec.lambdas.push_back(l.get<double>());
      }
    }
    er.read("jitter", ec.options.jitter);
    er.read("max_iters", ec.options.max_iters);
    er.read("tol", ec.options.tol);
    er.read("step_fraction", ec.options.step_fraction);
    er.read("chunk_rows", ec.options.chunk_rows);
    er.finish();
  }
  if (const json* b = r.find("baselines")) {
    FieldReader br(*b, "baselines");
    br.read("direct_ridge", c.baselines.direct_ridge);
    br.read("two_stage_ls", c.baselines.two_stage_ls);
    br.read("lambda", c.baselines.lambda);
    br.finish();
  }
  r.read("split_rep_estimation", c.split_rep_estimation);
  r.read("split_fraction", c.split_fraction);
  r.read("n_train", c.n_train);
  r.read("n_test", c.n_test);
  r.read("unlabeled_n", c.unlabeled_n);
  r.read_u64("seed", c.seed);
  r.read("replicates", c.replicates);
  r.read("replicate_subseeds", c.replicate_subseeds);
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

json to_json(const ExperimentConfig& c) {
  const auto& rc = c.representation;
  json nets = json::object();
  for (const auto& name : kNetworkNames) nets[name] = network_json(rc.network(name));
  const auto& o = c.estimator.options;
  return {
      {"setting", to_string(c.setting)},
      {"generator",
       {{"name", c.generator.name},
        {"slope", c.generator.slope},
        {"confounding", c.generator.confounding},
        {"rho", c.generator.rho},
        {"high_dim", c.generator.high_dim}}},
      {"representation",
       {{"exact_features", rc.exact_features},
        {"d", rc.d},
        {"d_x", rc.d_x},
        {"d_z", rc.d_z},
        {"d_o", rc.d_o},
        {"d_y", rc.d_y},
        {"loss", to_string(rc.loss)},
        {"epochs", rc.epochs},
        {"batch_size", rc.batch_size},
        {"tensor_init_scale", rc.tensor_init_scale},
        {"skip_treatment_factorization", rc.skip_treatment_factorization},
        {"optimizer", {{"lr", rc.adam.lr}, {"beta1", rc.adam.beta1}, {"beta2", rc.adam.beta2}, {"eps", rc.adam.eps}}},
        {"networks", nets}}},
      {"estimator",
       {{"method", to_string(c.estimator.method)},
        {"regularizer", to_string(c.estimator.regularizer)},
        {"lambdas", c.estimator.lambdas},
        {"jitter", o.jitter},
        {"max_iters", o.max_iters},
        {"tol", o.tol},
        {"step_fraction", o.step_fraction},
        {"chunk_rows", o.chunk_rows}}},
      {"baselines",
       {{"direct_ridge", c.baselines.direct_ridge},
        {"two_stage_ls", c.baselines.two_stage_ls},
        {"lambda", c.baselines.lambda}}},
      {"split_rep_estimation", c.split_rep_estimation},
      {"split_fraction", c.split_fraction},
      {"n_train", c.n_train},
      {"n_test", c.n_test},
      {"unlabeled_n", c.unlabeled_n},
      {"seed", c.seed},
      {"replicates", c.replicates},
      {"replicate_subseeds", c.replicate_subseeds},
  };
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t replicate_seed(const ExperimentConfig& cfg, int replicate) {
  return cfg.replicate_subseeds ? mix_seed(cfg.seed, static_cast<std::uint64_t>(replicate)) : cfg.seed;
}

Dataset generate_dataset(const ExperimentConfig& cfg, DataRole role, std::uint64_t rep_seed) {
  const std::size_t n = role == DataRole::train ? cfg.n_train : role == DataRole::test ? cfg.n_test : cfg.unlabeled_n;
  const std::uint64_t seed = mix_seed(rep_seed, static_cast<std::uint64_t>(role) + 1);
  if (n == 0) throw ConfigError("unlabeled_n: no unlabeled rows requested");
  const auto& g = cfg.generator;
  Dataset d;
  if (g.name == "linear_gaussian_iv") {
    d = gen_linear_gaussian_iv(n, g.slope, g.confounding, seed);
  } else if (g.name == "demand_design") {
    d = gen_demand_design(n, g.rho, seed, g.high_dim);
  } else if (g.name == "ivoc_discrete") {
    d = ivoc_discrete_dataset(n, seed);
  } else if (g.name == "pcl_discrete") {
    d = gen_pcl_discrete(default_pcl_spec(), n, seed);
  } else {
    throw ConfigError("generator.name: unknown generator '" + g.name + "'");
  }
  if (role == DataRole::unlabeled) {
    d.columns.erase("y");
    d.truth.reset();
  }
  return d;
}

DataSplit split_rows(const ExperimentConfig& cfg, std::size_t n, std::uint64_t rep_seed) {
  DataSplit s;
  if (!cfg.split_rep_estimation) {
    s.representation.resize(n);
    std::iota(s.representation.begin(), s.representation.end(), std::size_t{0});
    s.estimation = s.representation;
    return s;
  }
  Rng rng(mix_seed(rep_seed, 4));
  const std::vector<std::size_t> perm = permutation(n, rng);
  const auto k = static_cast<std::size_t>(std::floor(cfg.split_fraction * static_cast<double>(n)));
  s.representation.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  s.estimation.assign(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
  return s;
}

TrainedRepresentation train_configured_representation(const ExperimentConfig& cfg, const Dataset& rep_data,
                                                       const Dataset* unlabeled, std::uint64_t rep_seed) {
  const auto& rc = cfg.representation;
  TrainedRepresentation out;
  if (rc.exact_features) {
    if (cfg.generator.name == "linear_gaussian_iv") {
      out.rep = identity_iv_representation(1);
    } else if (cfg.generator.name == "ivoc_discrete") {
      out.rep = exact_conditional_representation(default_ivoc_spec());
    } else if (cfg.generator.name == "pcl_discrete") {
      out.rep = exact_conditional_representation(default_pcl_spec());
    } else {
      throw ConfigError("representation.exact_features: no exact features exist for " + cfg.generator.name);
    }
    return out;
  }

  RepTrainConfig tc;
  tc.loss = rc.loss;
  tc.adam = rc.adam;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;

  if (cfg.setting == Setting::iv) {
    IVRepresentation rep{
        make_network(rc, "phi", static_cast<int>(rep_data.dim("x")), rc.d, mix_seed(rep_seed, 11), rep_data.col("x")),
        make_network(rc, "psi", static_cast<int>(rep_data.dim("z")), rc.d, mix_seed(rep_seed, 12), rep_data.col("z"))};
    tc.seed = mix_seed(rep_seed, 21);
    out.loss_traces[to_string(TrainStage::iv)] = train_representation(TrainStage::iv, rep, rep_data, unlabeled, tc).loss_trace;
    out.rep = std::move(rep);
    return out;
  }

  ConditionalRepresentation rep;
  rep.setting = cfg.setting;
  const std::string t = rep.target_column();
  const std::string c = rep.conditioner_column();
  rep.phi = make_network(rc, "phi", static_cast<int>(rep_data.dim(t)), rc.d_x, mix_seed(rep_seed, 11), rep_data.col(t));
  rep.psi = make_network(rc, "psi", static_cast<int>(rep_data.dim("z")), rc.d_z, mix_seed(rep_seed, 12), rep_data.col("z"));
  rep.xi = make_network(rc, "xi", static_cast<int>(rep_data.dim(c)), rc.d_o, mix_seed(rep_seed, 13), rep_data.col(c));
  rep.nu = make_network(rc, "nu", static_cast<int>(rep_data.dim("y")), rc.d_y, mix_seed(rep_seed, 14), rep_data.col("y"));
  rep.p_v = Tensor3::random(rc.d_x, rc.d_z, rc.d_o, rc.tensor_init_scale, mix_seed(rep_seed, 15));
  rep.p_q = Tensor3::random(rc.d_x, rc.d_y, rc.d_o, rc.tensor_init_scale, mix_seed(rep_seed, 16));

  const bool ivoc = cfg.setting == Setting::ivoc;
  const TrainStage first = ivoc ? TrainStage::ivoc_x : TrainStage::pcl_w;
  const TrainStage second = ivoc ? TrainStage::ivoc_y : TrainStage::pcl_y;
  if (!rc.skip_treatment_factorization) {
    tc.seed = mix_seed(rep_seed, 21);
    out.loss_traces[to_string(first)] = train_representation(first, rep, rep_data, unlabeled, tc).loss_trace;
    tc.freeze_shared = true;
  } else {
    tc.freeze_shared = false;
  }
  tc.seed = mix_seed(rep_seed, 22);
  out.loss_traces[to_string(second)] = train_representation(second, rep, rep_data, nullptr, tc).loss_trace;
  out.rep = std::move(rep);
  return out;
}

AnySolution fit_configured(const ExperimentConfig& cfg, const AnyRepresentation& rep, const Dataset& est_data,
                           double lambda) {
  const RegularizerSpec reg{cfg.estimator.regularizer, lambda};
  const auto& opt = cfg.estimator.options;
  if (const auto* iv = std::get_if<IVRepresentation>(&rep)) {
    return solve_iv_saddle(*iv, est_data, reg, cfg.estimator.method, opt);
  }
  const auto& cr = std::get<ConditionalRepresentation>(rep);
  if (cr.setting == Setting::pcl) return solve_pcl_saddle(cr, est_data, reg, cfg.estimator.method, opt);
  return solve_ivoc_saddle(cr, est_data, reg, cfg.estimator.method, opt);
}

Vector predict_configured(const AnyRepresentation& rep, const AnySolution& sol, const Dataset& inputs,
                          const Dataset& reference) {
  if (const auto* iv = std::get_if<IVRepresentation>(&rep)) {
    return predict_structural(std::get<IVSolution>(sol), *iv, inputs.col("x"));
  }
  const auto& cr = std::get<ConditionalRepresentation>(rep);
  const auto& cs = std::get<ConditionalSolution>(sol);
  if (cr.setting != Setting::pcl) return predict_structural(cs, cr, inputs);

  // The effect depends on x only, so repeated treatment values share one average over w.
  const Matrix& x = inputs.col("x");
  const Matrix& w = reference.col("w");
  std::map<std::vector<double>, double> cache;
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    std::vector<double> key(xi.data(), xi.data() + xi.size());
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(std::move(key), pcl_causal_effect(cs, cr, xi, w)).first;
    out(i) = it->second;
  }
  return out;
}

void save_any(const AnyRepresentation& rep, const std::filesystem::path& path) {
  std::visit([&](const auto& r) { save_representation(r, path); }, rep);
}

void save_any(const AnySolution& sol, const std::filesystem::path& path) {
  std::visit([&](const auto& s) { save_solution(s, path); }, sol);
}

AnyRepresentation load_any_representation(Setting s, const std::filesystem::path& path) {
  if (s == Setting::iv) return load_iv_representation(path);
  return load_conditional_representation(path);
}

AnySolution load_any_solution(Setting s, const std::filesystem::path& path) {
  if (s == Setting::iv) return load_iv_solution(path);
  return load_conditional_solution(path);
}

json to_json(const ResultRecord& r, bool include_timing) {
  json sweep = json::array();
  for (const auto& l : r.sweep) {
    json e = {{"lambda", l.lambda},
              {"oos_mse", l.oos_mse},
              {"method", l.diagnostics.method},
              {"iterations", l.diagnostics.iterations},
              {"gap", l.diagnostics.gap}};
    if (!l.error.empty()) e["error"] = l.error;
    sweep.push_back(std::move(e));
  }
  json loss = json::object();
  for (const auto& [stage, s] : r.loss) {
    loss[stage] = {{"epochs", s.epochs}, {"first", s.first}, {"last", s.last}, {"min", s.min}};
  }
  json j = {{"config_hash", r.config_hash},
            {"seed", r.seed},
            {"replicate", r.replicate},
            {"replicate_seed", r.replicate_seed},
            {"setting", to_string(r.setting)},
            {"status", r.status},
            {"oos_mse", r.oos_mse},
            {"lambda_selected", r.lambda_selected},
            {"lambda_sweep", sweep},
            {"baseline_mse", r.baseline_mse},
            {"loss", loss},
            {"extras", r.extras}};
  if (!r.ok()) {
    j["failed_phase"] = r.failed_phase;
    j["error"] = r.error;
  }
  if (include_timing) j["seconds"] = r.seconds;
  return j;
}

namespace {

ResultRecord run_replicate(const ExperimentConfig& cfg, const std::string& hash, int replicate, const LogFn& log) {
  using clock = std::chrono::steady_clock;
  ResultRecord rec;
  rec.config_hash = hash;
  rec.seed = cfg.seed;
  rec.replicate = replicate;
  rec.replicate_seed = replicate_seed(cfg, replicate);
  rec.setting = cfg.setting;
  const std::uint64_t rs = rec.replicate_seed;
  const auto say = [&](const std::string& m) {
    if (log) log("replicate " + std::to_string(replicate) + ": " + m);
  };

  std::string phase = "generate";
  const auto total0 = clock::now();
  try {
    auto t0 = clock::now();
    const Dataset train = generate_dataset(cfg, DataRole::train, rs);
    const Dataset test = generate_dataset(cfg, DataRole::test, rs);
    std::optional<Dataset> unlabeled;
    if (cfg.unlabeled_n > 0) unlabeled = generate_dataset(cfg, DataRole::unlabeled, rs);
    const DataSplit split = split_rows(cfg, static_cast<std::size_t>(train.rows()), rs);
    const Dataset rep_data = train.subset(split.representation);
    const Dataset est_data = train.subset(split.estimation);
    rec.seconds["generate"] = seconds_since(t0);
    if (!test.truth) throw Error("the test set carries no ground truth");

    phase = "representation";
    t0 = clock::now();
    const TrainedRepresentation trained =
        train_configured_representation(cfg, rep_data, unlabeled ? &*unlabeled : nullptr, rs);
    for (const auto& [stage, trace] : trained.loss_traces) rec.loss[stage] = summarize(trace);
    rec.seconds["representation"] = seconds_since(t0);
    say("representation ready");

    phase = "estimation";
    t0 = clock::now();
    std::optional<Vector> best_pred;
    for (double lambda : cfg.estimator.lambdas) {
      LambdaResult lr;
      lr.lambda = lambda;
      try {
        const AnySolution sol = fit_configured(cfg, trained.rep, est_data, lambda);
        lr.diagnostics = std::visit([](const auto& s) { return s.diagnostics; }, sol);
        const Vector pred = predict_configured(trained.rep, sol, test, est_data);
        lr.oos_mse = oos_mse(pred, *test.truth);
        if (!std::isfinite(lr.oos_mse)) throw NumericError("non-finite out-of-sample error");
        if (!best_pred || lr.oos_mse < rec.oos_mse) {
          rec.oos_mse = lr.oos_mse;
          rec.lambda_selected = lambda;
          best_pred = pred;
        }
      } catch (const Error& e) {
        lr.error = e.what();
      }
      say("lambda " + fmt_double(lambda) + " oos_mse " + fmt_double(lr.oos_mse) + (lr.error.empty() ? "" : " (" + lr.error + ")"));
      rec.sweep.push_back(std::move(lr));
    }
    rec.seconds["estimation"] = seconds_since(t0);
    if (!best_pred) throw Error("no lambda in the sweep produced an estimate: " + rec.sweep.front().error);
    if (cfg.setting == Setting::iv && test.dim("x") == 1) rec.extras["slope"] = fitted_slope(test.col("x"), *best_pred);

    phase = "baselines";
    t0 = clock::now();
    std::vector<BaselineKind> kinds;
    if (cfg.baselines.direct_ridge) kinds.push_back(BaselineKind::direct_ridge);
    if (cfg.baselines.two_stage_ls && cfg.setting != Setting::pcl) kinds.push_back(BaselineKind::two_stage_ls);
    for (BaselineKind k : kinds) {
      const LinearPredictor p = baseline_fit(k, train, cfg.baselines.lambda);
      rec.baseline_mse[to_string(k)] = oos_mse(baseline_predict(p, test), *test.truth);
      if (cfg.setting == Setting::iv && train.dim("x") == 1) rec.extras[to_string(k) + "_slope"] = p.coef(0);
    }
    rec.seconds["baselines"] = seconds_since(t0);
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.failed_phase = phase;
    rec.error = e.what();
    say("failed in " + phase + ": " + e.what());
  }
  rec.seconds["total"] = seconds_since(total0);
  return rec;
}

}  // namespace

std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg, int threads, const LogFn& log) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  std::vector<ResultRecord> out(static_cast<std::size_t>(cfg.replicates));
  std::mutex log_mu;
  const LogFn safe_log = [&](const std::string& m) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mu);
    log(m);
  };
  const int workers = std::max(1, std::min(threads, cfg.replicates));
  std::atomic<int> next{0};
  const auto work = [&] {
    for (int r = next++; r < cfg.replicates; r = next++) {
      out[static_cast<std::size_t>(r)] = run_replicate(cfg, hash, r, safe_log);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return out;
}

ResultWriter::ResultWriter(const std::filesystem::path& dir, const std::string& hash) {
  std::filesystem::create_directories(dir);
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  for (int k = 0; k < 10000; ++k) {
    std::string base = std::string("results_") + stamp + "_" + hash;
    if (k > 0) base += "_" + std::to_string(k);
    const auto jp = dir / (base + ".jsonl");
    const auto cp = dir / (base + ".csv");
    // "x" makes fopen fail rather than truncate an existing file.
    std::FILE* j = std::fopen(jp.c_str(), "wx");
    if (!j) {
      if (errno == EEXIST) continue;
      throw Error("cannot create " + jp.string());
    }
    std::FILE* c = std::fopen(cp.c_str(), "wx");
    if (!c) {
      std::fclose(j);
      std::filesystem::remove(jp);
      if (errno == EEXIST) continue;
      throw Error("cannot create " + cp.string());
    }
    jsonl_ = j;
    csv_ = c;
    jsonl_path_ = jp;
    csv_path_ = cp;
    std::fputs(
        "config_hash,seed,replicate,replicate_seed,setting,status,failed_phase,oos_mse,lambda_selected,"
        "direct_ridge_mse,two_stage_ls_mse,seconds_total,error\n",
        csv_);
    std::fflush(csv_);
    return;
  }
  throw Error("could not find a free result file name in " + dir.string());
}

ResultWriter::~ResultWriter() {
  if (jsonl_) std::fclose(jsonl_);
  if (csv_) std::fclose(csv_);
}

void ResultWriter::write(const ResultRecord& r) {
  std::lock_guard<std::mutex> lock(mu_);
  const std::string line = to_json(r).dump() + "\n";
  std::fputs(line.c_str(), jsonl_);
  std::fflush(jsonl_);
  const auto base = [&](const char* k) {
    auto it = r.baseline_mse.find(k);
    return it == r.baseline_mse.end() ? std::string() : fmt_double(it->second);
  };
  const auto total = r.seconds.count("total") ? fmt_double(r.seconds.at("total")) : std::string();
  const std::string row = r.config_hash + "," + std::to_string(r.seed) + "," + std::to_string(r.replicate) + "," +
                          std::to_string(r.replicate_seed) + "," + to_string(r.setting) + "," + r.status + "," +
                          r.failed_phase + "," + fmt_double(r.oos_mse) + "," + fmt_double(r.lambda_selected) + "," +
                          base("direct_ridge") + "," + base("two_stage_ls") + "," + total + "," +
                          (r.error.empty() ? "" : csv_quote(r.error)) + "\n";
  std::fputs(row.c_str(), csv_);
  std::fflush(csv_);
}

}  // namespace speccausal
