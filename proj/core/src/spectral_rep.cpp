#include "speccausal/spectral_rep.hpp"

#include "speccausal/checkpoint.hpp"
#include "speccausal/error.hpp"
#include "speccausal/rng.hpp"

#include <cmath>

namespace speccausal {

Tensor3::Tensor3(Eigen::Index d1, Eigen::Index d2, Eigen::Index d3)
    : slices(static_cast<std::size_t>(d3), Matrix::Zero(d1, d2)) {}

Tensor3 Tensor3::random(Eigen::Index d1, Eigen::Index d2, Eigen::Index d3, double scale, std::uint64_t seed) {
  Tensor3 t(d1, d2, d3);
  Rng rng(seed);
  for (auto& s : t.slices) {
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = scale * rng.normal();
  }
  return t;
}

Matrix Tensor3::contract(const Vector& xi) const {
  if (xi.size() != dim3()) {
    throw DimensionError("tensor contraction: xi has " + std::to_string(xi.size()) + " entries, tensor has " +
                         std::to_string(dim3()) + " slices");
  }
  Matrix out = Matrix::Zero(dim1(), dim2());
  for (Eigen::Index k = 0; k < dim3(); ++k) out += xi(k) * slices[static_cast<std::size_t>(k)];
  return out;
}

void IVRepresentation::validate() const {
  if (phi.output_dim() != psi.output_dim()) {
    throw DimensionError("IV representation: phi outputs " + std::to_string(phi.output_dim()) + " dims, psi " +
                         std::to_string(psi.output_dim()));
  }
}

void ConditionalRepresentation::validate() const {
  if (setting == Setting::iv) throw DimensionError("conditional representation needs setting ivoc or pcl");
  auto check = [](const Tensor3& t, int a, int b, int c, const char* name) {
    if (t.dim1() != a || t.dim2() != b || t.dim3() != c) {
      throw DimensionError(std::string(name) + " is " + std::to_string(t.dim1()) + "x" + std::to_string(t.dim2()) + "x" +
                           std::to_string(t.dim3()) + ", expected " + std::to_string(a) + "x" + std::to_string(b) + "x" +
                           std::to_string(c));
    }
  };
  check(p_v, d_target(), d_instrument(), d_conditioner(), "p_v");
  check(p_q, d_target(), d_outcome(), d_conditioner(), "p_q");
}

Matrix score_iv(const IVRepresentation& rep, const Matrix& x, const Matrix& z) {
  rep.validate();
  if (x.rows() != z.rows()) throw DimensionError("score_iv: batch lengths differ");
  return evaluate(rep.phi, x) * evaluate(rep.psi, z).transpose();
}

namespace {

Matrix row_of(const Vector& v) { return v.transpose(); }

// rows r_j = V(c_j) psi_j
Matrix conditioned_instrument(const Tensor3& p_v, const Matrix& Psi, const Matrix& Xi) {
  Matrix R = Matrix::Zero(Psi.rows(), p_v.dim1());
  for (Eigen::Index k = 0; k < p_v.dim3(); ++k) {
    R += ((Psi * p_v.slices[static_cast<std::size_t>(k)].transpose()).array().colwise() * Xi.col(k).array()).matrix();
  }
  return R;
}

// rows u_j = Q(c_j)^T r_j
Matrix conditioned_outcome(const Tensor3& p_q, const Matrix& R, const Matrix& Xi) {
  Matrix U = Matrix::Zero(R.rows(), p_q.dim2());
  for (Eigen::Index k = 0; k < p_q.dim3(); ++k) {
    U += ((R * p_q.slices[static_cast<std::size_t>(k)]).array().colwise() * Xi.col(k).array()).matrix();
  }
  return U;
}

void check_input(const FeatureNetwork& net, const Vector& v, const char* what) {
  if (v.size() != net.input_dim()) {
    throw DimensionError(std::string(what) + " has dim " + std::to_string(v.size()) + ", network expects " +
                         std::to_string(net.input_dim()));
  }
}

double target_score_single(const ConditionalRepresentation& rep, const Vector& t, const Vector& z, const Vector& c) {
  rep.validate();
  check_input(rep.phi, t, "target");
  check_input(rep.psi, z, "instrument");
  check_input(rep.xi, c, "conditioner");
  const Matrix phi = evaluate(rep.phi, row_of(t));
  const Matrix psi = evaluate(rep.psi, row_of(z));
  const Matrix xi = evaluate(rep.xi, row_of(c));
  return (phi * conditioned_instrument(rep.p_v, psi, xi).transpose())(0, 0);
}

double outcome_score_single(const ConditionalRepresentation& rep, const Vector& y, const Vector& z, const Vector& c) {
  rep.validate();
  check_input(rep.nu, y, "outcome");
  check_input(rep.psi, z, "instrument");
  check_input(rep.xi, c, "conditioner");
  const Matrix nu = evaluate(rep.nu, row_of(y));
  const Matrix psi = evaluate(rep.psi, row_of(z));
  const Matrix xi = evaluate(rep.xi, row_of(c));
  const Matrix R = conditioned_instrument(rep.p_v, psi, xi);
  return (nu * conditioned_outcome(rep.p_q, R, xi).transpose())(0, 0);
}

void require_setting(const ConditionalRepresentation& rep, Setting s, const char* who) {
  if (rep.setting != s) throw DimensionError(std::string(who) + ": representation is for setting " + to_string(rep.setting));
}

}  // namespace

double score_ivoc_x(const ConditionalRepresentation& rep, const Vector& x, const Vector& z, const Vector& o) {
  require_setting(rep, Setting::ivoc, "score_ivoc_x");
  return target_score_single(rep, x, z, o);
}

double score_ivoc_y(const ConditionalRepresentation& rep, const Vector& y, const Vector& z, const Vector& o) {
  require_setting(rep, Setting::ivoc, "score_ivoc_y");
  return outcome_score_single(rep, y, z, o);
}

double score_pcl_w(const ConditionalRepresentation& rep, const Vector& w, const Vector& x, const Vector& z) {
  require_setting(rep, Setting::pcl, "score_pcl_w");
  return target_score_single(rep, w, z, x);
}

double score_pcl_y(const ConditionalRepresentation& rep, const Vector& y, const Vector& x, const Vector& z) {
  require_setting(rep, Setting::pcl, "score_pcl_y");
  return outcome_score_single(rep, y, z, x);
}

Matrix target_scores(const ConditionalRepresentation& rep, const Matrix& t, const Matrix& z, const Matrix& c) {
  rep.validate();
  if (t.rows() != z.rows() || t.rows() != c.rows()) throw DimensionError("target_scores: batch lengths differ");
  const Matrix R = conditioned_instrument(rep.p_v, evaluate(rep.psi, z), evaluate(rep.xi, c));
  return evaluate(rep.phi, t) * R.transpose();
}

Matrix outcome_scores(const ConditionalRepresentation& rep, const Matrix& y, const Matrix& z, const Matrix& c) {
  rep.validate();
  if (y.rows() != z.rows() || y.rows() != c.rows()) throw DimensionError("outcome_scores: batch lengths differ");
  const Matrix Xi = evaluate(rep.xi, c);
  const Matrix R = conditioned_instrument(rep.p_v, evaluate(rep.psi, z), Xi);
  return evaluate(rep.nu, y) * conditioned_outcome(rep.p_q, R, Xi).transpose();
}

TrainStage parse_stage(const std::string& s) {
  if (s == "iv") return TrainStage::iv;
  if (s == "ivoc_x") return TrainStage::ivoc_x;
  if (s == "ivoc_y") return TrainStage::ivoc_y;
  if (s == "pcl_w") return TrainStage::pcl_w;
  if (s == "pcl_y") return TrainStage::pcl_y;
  throw ConfigError("unknown training stage '" + s + "'");
}

std::string to_string(TrainStage s) {
  switch (s) {
    case TrainStage::iv: return "iv";
    case TrainStage::ivoc_x: return "ivoc_x";
    case TrainStage::ivoc_y: return "ivoc_y";
    case TrainStage::pcl_w: return "pcl_w";
    case TrainStage::pcl_y: return "pcl_y";
  }
  return "iv";
}

namespace {

bool is_outcome_stage(TrainStage s) { return s == TrainStage::ivoc_y || s == TrainStage::pcl_y; }

// Rows of `cols` from data followed by the same columns of unlabeled.
std::vector<Matrix> pooled_columns(const Dataset& data, const Dataset* unlabeled, const std::vector<std::string>& cols) {
  std::vector<Matrix> out;
  for (const auto& name : cols) {
    const Matrix& a = data.col(name);
    if (!unlabeled) {
      out.push_back(a);
      continue;
    }
    const Matrix& b = unlabeled->col(name);
    if (b.cols() != a.cols()) throw DimensionError("unlabeled column '" + name + "' has a different width");
    Matrix m(a.rows() + b.rows(), a.cols());
    m << a, b;
    out.push_back(std::move(m));
  }
  return out;
}

Matrix gather(const Matrix& m, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

void check_training_data(const Dataset& data, const Dataset* unlabeled, TrainStage stage) {
  if (data.rows() == 0) throw DimensionError("train_representation: empty dataset");
  if (data.weights) throw ConfigError("train_representation: weighted datasets cannot be minibatched; sample rows instead");
  if (unlabeled && is_outcome_stage(stage)) {
    throw ConfigError("train_representation: unlabeled rows cannot be used for the outcome factorization (" + to_string(stage) + ")");
  }
  if (unlabeled && unlabeled->weights) throw ConfigError("train_representation: unlabeled data must not carry weights");
}

std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, int batch_size) {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t s = 0; s < n; s += b) {
    const std::size_t e = std::min(n, s + b);
    if (e - s >= 2) out.emplace_back(s, e);
  }
  if (out.empty()) throw DimensionError("train_representation: need at least 2 rows");
  return out;
}

void append(std::vector<ParamSlot>& dst, std::vector<ParamSlot> src) {
  for (auto& s : src) dst.push_back(std::move(s));
}

void tensor_slots(std::vector<ParamSlot>& dst, Tensor3& t, const std::vector<Matrix>& grads, const std::string& name) {
  for (std::size_t k = 0; k < t.slices.size(); ++k) {
    dst.push_back({name + "." + std::to_string(k),
                   std::span<double>(t.slices[k].data(), static_cast<std::size_t>(t.slices[k].size())),
                   std::span<const double>(grads[k].data(), static_cast<std::size_t>(grads[k].size()))});
  }
}

}  // namespace

RepTrainResult train_representation(TrainStage stage, IVRepresentation& rep, const Dataset& data,
                                    const Dataset* unlabeled, const RepTrainConfig& cfg) {
  if (stage != TrainStage::iv) throw ConfigError("IV representation can only be trained with stage iv");
  rep.validate();
  check_training_data(data, unlabeled, stage);
  RepTrainResult result;
  if (cfg.epochs <= 0) return result;
  const auto cols = pooled_columns(data, unlabeled, {"x", "z"});
  const std::size_t n = static_cast<std::size_t>(cols[0].rows());
  Rng rng(cfg.seed);
  AdamState adam;
  adam.config = cfg.adam;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = permutation(n, rng);
    double total = 0;
    const auto bs = batches(n, cfg.batch_size);
    for (const auto& [s, e] : bs) {
      ForwardResult fx = forward(rep.phi, gather(cols[0], perm, s, e), Mode::train);
      ForwardResult fz = forward(rep.psi, gather(cols[1], perm, s, e), Mode::train);
      const LossResult L = contrastive_loss(cfg.loss, fx.outputs * fz.outputs.transpose());
      total += L.value;
      const NetworkGrads gphi = backward(rep.phi, fx.cache, L.grad * fz.outputs).param_grads;
      const NetworkGrads gpsi = backward(rep.psi, fz.cache, L.grad.transpose() * fx.outputs).param_grads;
      std::vector<ParamSlot> slots = network_slots(rep.phi, gphi, "phi");
      append(slots, network_slots(rep.psi, gpsi, "psi"));
      adam_step(adam, slots);
      rep.phi.mark_updated();
      rep.psi.mark_updated();
    }
    result.loss_trace.push_back(total / static_cast<double>(bs.size()));
  }
  return result;
}

RepTrainResult train_representation(TrainStage stage, ConditionalRepresentation& rep, const Dataset& data,
                                    const Dataset* unlabeled, const RepTrainConfig& cfg) {
  if (stage == TrainStage::iv) throw ConfigError("stage iv needs an IV representation");
  const Setting want = (stage == TrainStage::ivoc_x || stage == TrainStage::ivoc_y) ? Setting::ivoc : Setting::pcl;
  if (rep.setting != want) throw ConfigError("stage " + to_string(stage) + " does not match representation setting " + to_string(rep.setting));
  rep.validate();
  check_training_data(data, unlabeled, stage);
  RepTrainResult result;
  if (cfg.epochs <= 0) return result;

  const bool outcome = is_outcome_stage(stage);
  const std::string left = outcome ? "y" : rep.target_column();
  const auto cols = pooled_columns(data, unlabeled, {left, "z", rep.conditioner_column()});
  const std::size_t n = static_cast<std::size_t>(cols[0].rows());
  const bool train_shared = !outcome || !cfg.freeze_shared;
  const Eigen::Index dc = rep.d_conditioner();

  Rng rng(cfg.seed);
  AdamState adam;
  adam.config = cfg.adam;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = permutation(n, rng);
    double total = 0;
    const auto bs = batches(n, cfg.batch_size);
    for (const auto& [s, e] : bs) {
      FeatureNetwork& left_net = outcome ? rep.nu : rep.phi;
      ForwardResult fl = forward(left_net, gather(cols[0], perm, s, e), Mode::train);
      const Matrix zb = gather(cols[1], perm, s, e);
      const Matrix cb = gather(cols[2], perm, s, e);
      ForwardResult fz, fc;
      if (train_shared) {
        fz = forward(rep.psi, zb, Mode::train);
        fc = forward(rep.xi, cb, Mode::train);
      } else {
        fz.outputs = evaluate(rep.psi, zb);
        fc.outputs = evaluate(rep.xi, cb);
      }
      const Matrix& Psi = fz.outputs;
      const Matrix& Xi = fc.outputs;
      const Matrix R = conditioned_instrument(rep.p_v, Psi, Xi);

      Matrix dR, dXi = Matrix::Zero(Xi.rows(), dc);
      std::vector<Matrix> dPQ;
      NetworkGrads gleft;
      if (outcome) {
        const Matrix U = conditioned_outcome(rep.p_q, R, Xi);
        const LossResult L = contrastive_loss(cfg.loss, fl.outputs * U.transpose());
        total += L.value;
        gleft = backward(rep.nu, fl.cache, L.grad * U).param_grads;
        const Matrix dU = L.grad.transpose() * fl.outputs;
        dR = Matrix::Zero(R.rows(), R.cols());
        for (Eigen::Index k = 0; k < dc; ++k) {
          const Matrix& Pk = rep.p_q.slices[static_cast<std::size_t>(k)];
          const auto xk = Xi.col(k).array();
          dPQ.push_back(R.transpose() * (dU.array().colwise() * xk).matrix());
          if (train_shared) {
            dXi.col(k) += ((R * Pk).array() * dU.array()).rowwise().sum().matrix();
            dR += ((dU * Pk.transpose()).array().colwise() * xk).matrix();
          }
        }
      } else {
        const LossResult L = contrastive_loss(cfg.loss, fl.outputs * R.transpose());
        total += L.value;
        gleft = backward(rep.phi, fl.cache, L.grad * R).param_grads;
        dR = L.grad.transpose() * fl.outputs;
      }

      std::vector<ParamSlot> slots = network_slots(left_net, gleft, outcome ? "nu" : "phi");
      std::vector<Matrix> dPV;
      NetworkGrads gpsi, gxi;
      if (train_shared) {
        Matrix dPsi = Matrix::Zero(Psi.rows(), Psi.cols());
        for (Eigen::Index k = 0; k < dc; ++k) {
          const Matrix& Pk = rep.p_v.slices[static_cast<std::size_t>(k)];
          const auto xk = Xi.col(k).array();
          dPV.push_back(dR.transpose() * (Psi.array().colwise() * xk).matrix());
          dPsi += ((dR * Pk).array().colwise() * xk).matrix();
          dXi.col(k) += ((Psi * Pk.transpose()).array() * dR.array()).rowwise().sum().matrix();
        }
        gpsi = backward(rep.psi, fz.cache, dPsi).param_grads;
        gxi = backward(rep.xi, fc.cache, dXi).param_grads;
        append(slots, network_slots(rep.psi, gpsi, "psi"));
        append(slots, network_slots(rep.xi, gxi, "xi"));
        tensor_slots(slots, rep.p_v, dPV, "p_v");
      }
      if (outcome) tensor_slots(slots, rep.p_q, dPQ, "p_q");
      adam_step(adam, slots);
      left_net.mark_updated();
      if (train_shared) {
        rep.psi.mark_updated();
        rep.xi.mark_updated();
      }
    }
    result.loss_trace.push_back(total / static_cast<double>(bs.size()));
  }
  return result;
}

void standardize_inputs(FeatureNetwork& net, const Matrix& sample) {
  if (sample.cols() != net.input_dim()) throw DimensionError("standardize_inputs: sample width does not match network input");
  if (sample.rows() == 0) throw DimensionError("standardize_inputs: empty sample");
  const Vector mean = sample.colwise().mean().transpose();
  Vector scale(sample.cols());
  for (Eigen::Index j = 0; j < sample.cols(); ++j) {
    const double var = (sample.col(j).array() - mean(j)).square().mean();
    scale(j) = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  net.set_input_transform(mean, scale);
}

Matrix density_ratio(const IVRepresentation& rep, ContrastiveLoss loss, const Matrix& x, const Matrix& z,
                     const Matrix& z_reference) {
  rep.validate();
  const Matrix phi = evaluate(rep.phi, x);
  const Matrix s = phi * evaluate(rep.psi, z).transpose();
  if (loss == ContrastiveLoss::l2) return s;
  if (z_reference.rows() == 0) throw DimensionError("density_ratio: empty reference sample");
  const Vector norm = softplus(phi * evaluate(rep.psi, z_reference).transpose()).rowwise().mean();
  return (softplus(s).array().colwise() / norm.array()).matrix();
}

namespace {

void put_tensor(Checkpoint& ck, const std::string& name, const Tensor3& t) {
  ck.put_ints(name + ".dims", {t.dim1(), t.dim2(), t.dim3()});
  for (std::size_t k = 0; k < t.slices.size(); ++k) ck.put(name + "." + std::to_string(k), t.slices[k]);
}

Tensor3 get_tensor(const Checkpoint& ck, const std::string& name) {
  const auto dims = ck.ints(name + ".dims");
  if (dims.size() != 3) throw Error("checkpoint: bad tensor dims for " + name);
  Tensor3 t(dims[0], dims[1], dims[2]);
  for (std::size_t k = 0; k < t.slices.size(); ++k) t.slices[k] = ck.matrix(name + "." + std::to_string(k));
  return t;
}

}  // namespace

void save_representation(const IVRepresentation& rep, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.put_ints("representation.setting", {static_cast<std::int64_t>(Setting::iv)});
  put_network(ck, "phi", rep.phi);
  put_network(ck, "psi", rep.psi);
  ck.save(path);
}

void save_representation(const ConditionalRepresentation& rep, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.put_ints("representation.setting", {static_cast<std::int64_t>(rep.setting)});
  put_network(ck, "phi", rep.phi);
  put_network(ck, "psi", rep.psi);
  put_network(ck, "xi", rep.xi);
  put_network(ck, "nu", rep.nu);
  put_tensor(ck, "p_v", rep.p_v);
  put_tensor(ck, "p_q", rep.p_q);
  ck.save(path);
}

IVRepresentation load_iv_representation(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (ck.ints("representation.setting").at(0) != static_cast<std::int64_t>(Setting::iv)) {
    throw Error(path.string() + " does not hold an IV representation");
  }
  IVRepresentation rep{get_network(ck, "phi"), get_network(ck, "psi")};
  rep.validate();
  return rep;
}

ConditionalRepresentation load_conditional_representation(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  const auto s = ck.ints("representation.setting").at(0);
  if (s != static_cast<std::int64_t>(Setting::ivoc) && s != static_cast<std::int64_t>(Setting::pcl)) {
    throw Error(path.string() + " does not hold an IV-OC or PCL representation");
  }
  ConditionalRepresentation rep;
  rep.setting = static_cast<Setting>(s);
  rep.phi = get_network(ck, "phi");
  rep.psi = get_network(ck, "psi");
  rep.xi = get_network(ck, "xi");
  rep.nu = get_network(ck, "nu");
  rep.p_v = get_tensor(ck, "p_v");
  rep.p_q = get_tensor(ck, "p_q");
  rep.validate();
  return rep;
}

}  // namespace speccausal
