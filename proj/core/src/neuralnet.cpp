#include "speccausal/neuralnet.hpp"

#include "speccausal/error.hpp"
#include "speccausal/rng.hpp"

#include <cmath>

namespace speccausal {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + name + "' (expected relu, tanh or linear)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::linear: return "linear";
  }
  return "linear";
}

BiasInit parse_bias_init(const std::string& name) {
  if (name == "zero") return BiasInit::zero;
  if (name == "fan_in_uniform") return BiasInit::fan_in_uniform;
  throw ConfigError("unknown bias init '" + name + "' (expected zero or fan_in_uniform)");
}

std::string to_string(BiasInit b) { return b == BiasInit::zero ? "zero" : "fan_in_uniform"; }

void NetworkSpec::validate() const {
  if (layer_dims.size() < 2) throw ConfigError("network needs at least input and output dims");
  if (activations.size() != layer_dims.size() - 1 || batch_norm.size() != layer_dims.size() - 1) {
    throw ConfigError("network activations/batch_norm must have one entry per layer");
  }
  for (int d : layer_dims) {
    if (d <= 0) throw ConfigError("network layer dims must be positive");
  }
}

NetworkSpec NetworkSpec::mlp(int in, const std::vector<int>& hidden, int out, Activation hidden_act,
                             Activation out_act, bool bn) {
  NetworkSpec s;
  s.layer_dims.push_back(in);
  for (int h : hidden) {
    s.layer_dims.push_back(h);
    s.activations.push_back(hidden_act);
    s.batch_norm.push_back(bn);
  }
  s.layer_dims.push_back(out);
  s.activations.push_back(out_act);
  s.batch_norm.push_back(false);
  return s;
}

void NetworkGrads::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
    l.bn_scale.setZero();
    l.bn_shift.setZero();
  }
}

NetworkGrads& NetworkGrads::operator+=(const NetworkGrads& other) {
  if (other.layers.size() != layers.size()) throw DimensionError("NetworkGrads: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
    layers[i].bn_scale += other.layers[i].bn_scale;
    layers[i].bn_shift += other.layers[i].bn_shift;
  }
  return *this;
}

FeatureNetwork::FeatureNetwork(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(seed);
  for (std::size_t l = 0; l < spec_.num_layers(); ++l) {
    const int in = spec_.layer_dims[l];
    const int out = spec_.layer_dims[l + 1];
    const double bound = spec_.activations[l] == Activation::relu
                             ? std::sqrt(6.0 / in)
                             : std::sqrt(6.0 / (in + out));
    LayerParams p;
    p.weight.resize(out, in);
    for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = rng.uniform(-bound, bound);
    p.bias = Vector::Zero(out);
    if (spec_.bias_init == BiasInit::fan_in_uniform) {
      const double b = 1.0 / std::sqrt(static_cast<double>(in));
      for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias(i) = rng.uniform(-b, b);
    }
    if (spec_.batch_norm[l]) {
      p.bn_scale = Vector::Ones(out);
      p.bn_shift = Vector::Zero(out);
      p.running_mean = Vector::Zero(out);
      p.running_var = Vector::Ones(out);
    }
    params_.layers.push_back(std::move(p));
  }
}

void FeatureNetwork::set_input_transform(Vector shift, Vector scale) {
  if (shift.size() != input_dim() || scale.size() != input_dim()) {
    throw DimensionError("input transform must match the network input dim " + std::to_string(input_dim()));
  }
  input_transform_ = std::make_pair(std::move(shift), std::move(scale));
  ++version_;
}

std::size_t FeatureNetwork::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : params_.layers) {
    n += l.weight.size() + l.bias.size() + l.bn_scale.size() + l.bn_shift.size();
  }
  return n;
}

NetworkGrads FeatureNetwork::zero_grads() const {
  NetworkGrads g;
  for (const auto& l : params_.layers) {
    LayerGrads lg;
    lg.weight = Matrix::Zero(l.weight.rows(), l.weight.cols());
    lg.bias = Vector::Zero(l.bias.size());
    lg.bn_scale = Vector::Zero(l.bn_scale.size());
    lg.bn_shift = Vector::Zero(l.bn_shift.size());
    g.layers.push_back(std::move(lg));
  }
  return g;
}

namespace {

Matrix apply_input_transform(const FeatureNetwork& net, const Matrix& batch) {
  if (batch.cols() != net.input_dim()) {
    throw DimensionError("network input has " + std::to_string(batch.cols()) + " columns, expected " +
                         std::to_string(net.input_dim()));
  }
  if (!net.input_transform()) return batch;
  const auto& [shift, scale] = *net.input_transform();
  return ((batch.rowwise() - shift.transpose()).array().rowwise() * scale.transpose().array()).matrix();
}

void activate(Activation a, Matrix& m) {
  switch (a) {
    case Activation::relu: m = m.cwiseMax(0.0); break;
    case Activation::tanh: m = m.array().tanh().matrix(); break;
    case Activation::linear: break;
  }
}

template <bool Record>
Matrix run_forward(const FeatureNetwork& net, std::vector<std::pair<Vector, Vector>>* batch_stats,
                   const Matrix& batch, Mode mode,
                   ForwardCache* cache) {
  Matrix h = apply_input_transform(net, batch);
  const auto& spec = net.spec();
  const double n = static_cast<double>(batch.rows());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const LayerParams& p = net.params().layers[l];
    LayerCache lc;
    if constexpr (Record) lc.input = h;
    Matrix a = h * p.weight.transpose();
    a.rowwise() += p.bias.transpose();
    if constexpr (Record) lc.pre = a;
    activate(spec.activations[l], a);
    if (spec.batch_norm[l]) {
      Vector mean, var;
      if (mode == Mode::train) {
        if (batch.rows() == 0) throw DimensionError("batch norm in train mode needs a nonempty batch");
        mean = a.colwise().mean().transpose();
        var = ((a.rowwise() - mean.transpose()).array().square().colwise().sum() / n).matrix().transpose();
        if (batch_stats) (*batch_stats)[l] = {mean, var};
      } else {
        mean = p.running_mean;
        var = p.running_var;
      }
      Vector inv_std = (var.array() + net.bn_config.eps).rsqrt().matrix();
      if constexpr (Record) lc.act = a;
      Matrix xhat = ((a.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array()).matrix();
      a = (xhat.array().rowwise() * p.bn_scale.transpose().array()).matrix();
      a.rowwise() += p.bn_shift.transpose();
      if constexpr (Record) {
        lc.xhat = std::move(xhat);
        lc.inv_std = std::move(inv_std);
      }
    } else if constexpr (Record) {
      lc.act = a;
    }
    if constexpr (Record) cache->layers.push_back(std::move(lc));
    h = std::move(a);
  }
  return h;
}

}  // namespace

ForwardResult forward(FeatureNetwork& net, const Matrix& batch, Mode mode) {
  ForwardResult r;
  r.cache.owner = &net;
  r.cache.mode = mode;
  std::vector<std::pair<Vector, Vector>> stats(net.spec().num_layers());
  r.outputs = run_forward<true>(net, &stats, batch, mode, &r.cache);
  if (mode == Mode::train) {
    const double m = net.bn_config.momentum;
    for (std::size_t l = 0; l < stats.size(); ++l) {
      if (!net.spec().batch_norm[l]) continue;
      LayerParams& p = net.mutable_params().layers[l];
      p.running_mean = m * p.running_mean + (1.0 - m) * stats[l].first;
      p.running_var = m * p.running_var + (1.0 - m) * stats[l].second;
    }
  }
  r.cache.version = net.version();
  return r;
}

Matrix evaluate(const FeatureNetwork& net, const Matrix& batch) {
  return run_forward<false>(net, nullptr, batch, Mode::eval, nullptr);
}

BackwardResult backward(const FeatureNetwork& net, const ForwardCache& cache, const Matrix& upstream) {
  if (cache.owner != &net || cache.version != net.version()) {
    throw Error("backward: cache is stale or belongs to a different network");
  }
  const auto& spec = net.spec();
  if (cache.layers.size() != spec.num_layers()) throw Error("backward: cache does not match network");
  const Eigen::Index n = cache.layers.front().input.rows();
  if (upstream.rows() != n || upstream.cols() != spec.output_dim()) {
    throw DimensionError("backward: upstream must be " + std::to_string(n) + "x" +
                         std::to_string(spec.output_dim()));
  }
  BackwardResult r;
  r.param_grads = net.zero_grads();
  Matrix d = upstream;
  for (std::size_t li = spec.num_layers(); li-- > 0;) {
    const LayerParams& p = net.params().layers[li];
    const LayerCache& lc = cache.layers[li];
    LayerGrads& g = r.param_grads.layers[li];
    if (spec.batch_norm[li]) {
      g.bn_shift = d.colwise().sum().transpose();
      g.bn_scale = (d.array() * lc.xhat.array()).colwise().sum().matrix().transpose();
      Matrix dxhat = (d.array().rowwise() * p.bn_scale.transpose().array()).matrix();
      if (cache.mode == Mode::train) {
        const double nn = static_cast<double>(n);
        const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
        const Eigen::RowVectorXd sum_dx = (dxhat.array() * lc.xhat.array()).colwise().sum();
        Matrix t = nn * dxhat;
        t.rowwise() -= sum_d;
        t -= (lc.xhat.array().rowwise() * sum_dx.array()).matrix();
        d = (t.array().rowwise() * (lc.inv_std.transpose().array() / nn)).matrix();
      } else {
        d = (dxhat.array().rowwise() * lc.inv_std.transpose().array()).matrix();
      }
    }
    switch (spec.activations[li]) {
      case Activation::relu:
        d = (d.array() * (lc.pre.array() > 0.0).cast<double>()).matrix();
        break;
      case Activation::tanh: {
        d = (d.array() * (1.0 - lc.act.array().square())).matrix();
        break;
      }
      case Activation::linear: break;
    }
    g.weight = d.transpose() * lc.input;
    g.bias = d.colwise().sum().transpose();
    d = d * p.weight;
  }
  if (net.input_transform()) {
    d = (d.array().rowwise() * net.input_transform()->second.transpose().array()).matrix();
  }
  r.input_grads = std::move(d);
  return r;
}

void adam_step(AdamState& state, const std::vector<ParamSlot>& slots) {
  for (const auto& s : slots) {
    if (s.values.size() != s.grads.size()) {
      throw DimensionError("adam_step: slot '" + s.name + "' has mismatched value/grad sizes");
    }
    for (double g : s.grads) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + s.name);
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& s : slots) {
    auto& m = state.first[s.name];
    auto& v = state.second[s.name];
    if (m.empty()) {
      m.assign(s.values.size(), 0.0);
      v.assign(s.values.size(), 0.0);
    }
    if (m.size() != s.values.size()) throw DimensionError("adam_step: slot '" + s.name + "' changed size");
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const double g = s.grads[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      s.values[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

namespace {

template <class M>
std::span<double> span_of(M& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <class M>
std::span<const double> cspan_of(const M& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace

std::vector<ParamSlot> network_slots(FeatureNetwork& net, const NetworkGrads& grads, const std::string& prefix) {
  std::vector<ParamSlot> slots;
  auto& layers = net.mutable_params().layers;
  if (grads.layers.size() != layers.size()) throw DimensionError("network_slots: grads do not match network");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    slots.push_back({base + ".weight", span_of(layers[l].weight), cspan_of(grads.layers[l].weight)});
    slots.push_back({base + ".bias", span_of(layers[l].bias), cspan_of(grads.layers[l].bias)});
    if (layers[l].bn_scale.size() > 0) {
      slots.push_back({base + ".bn_scale", span_of(layers[l].bn_scale), cspan_of(grads.layers[l].bn_scale)});
      slots.push_back({base + ".bn_shift", span_of(layers[l].bn_shift), cspan_of(grads.layers[l].bn_shift)});
    }
  }
  return slots;
}

GradCheckReport grad_check_report(const FeatureNetwork& net, const Matrix& batch, const OutputLoss& loss, Mode mode,
                                  double h) {
  FeatureNetwork work = net;
  ForwardResult fr = forward(work, batch, mode);
  const Matrix upstream = loss(fr.outputs).second;
  const NetworkGrads analytic = backward(work, fr.cache, upstream).param_grads;

  auto eval_loss = [&](const FeatureNetwork& probe) {
    FeatureNetwork tmp = probe;
    return loss(forward(tmp, batch, mode).outputs).first;
  };

  GradCheckReport report;
  FeatureNetwork probe = net;
  auto slots = network_slots(probe, analytic, "net");
  for (const auto& slot : slots) {
    for (std::size_t i = 0; i < slot.values.size(); ++i) {
      const double orig = slot.values[i];
      slot.values[i] = orig + h;
      const double lp = eval_loss(probe);
      slot.values[i] = orig - h;
      const double lm = eval_loss(probe);
      slot.values[i] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = slot.grads[i];
      // the floor keeps roundoff on exactly-zero gradients (e.g. a bias feeding batch norm) from counting
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = slot.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

double grad_check(const FeatureNetwork& net, const Matrix& batch, const OutputLoss& loss, Mode mode, double h) {
  return grad_check_report(net, batch, loss, mode, h).max_relative_error;
}

}  // namespace speccausal
