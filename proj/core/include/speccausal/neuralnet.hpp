#pragma once

#include "speccausal/linalg.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace speccausal {

enum class Activation { relu, tanh, linear };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

// zero: all biases start at 0. fan_in_uniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in)), which spreads
// the kinks of ReLU units over the input range instead of stacking them at the origin.
enum class BiasInit { zero, fan_in_uniform };

BiasInit parse_bias_init(const std::string& name);
std::string to_string(BiasInit b);

struct NetworkSpec {
  std::vector<int> layer_dims;  // input, hidden..., output
  std::vector<Activation> activations;
  std::vector<bool> batch_norm;
  BiasInit bias_init = BiasInit::zero;  // only read at construction

  std::size_t num_layers() const { return activations.size(); }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  void validate() const;

  // hidden layers use `hidden_act` with optional BN; the output layer uses `out_act` without BN.
  static NetworkSpec mlp(int in, const std::vector<int>& hidden, int out, Activation hidden_act,
                         Activation out_act, bool bn);
};

struct LayerParams {
  Matrix weight;  // out x in
  Vector bias;
  Vector bn_scale;
  Vector bn_shift;
  Vector running_mean;
  Vector running_var;
};

struct NetworkParams {
  std::vector<LayerParams> layers;
};

struct LayerGrads {
  Matrix weight;
  Vector bias;
  Vector bn_scale;
  Vector bn_shift;
};

struct NetworkGrads {
  std::vector<LayerGrads> layers;
  void set_zero();
  NetworkGrads& operator+=(const NetworkGrads& other);
};

struct BatchNormConfig {
  double momentum = 0.9;  // weight kept on the old running statistic
  double eps = 1e-5;
};

class FeatureNetwork {
 public:
  FeatureNetwork() = default;
  FeatureNetwork(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const NetworkParams& params() const { return params_; }
  // Any code that mutates parameters through this reference must call mark_updated().
  NetworkParams& mutable_params() { return params_; }
  void mark_updated() { ++version_; }
  std::uint64_t version() const { return version_; }

  // Affine input map x -> (x - shift) * scale applied before the first layer.
  void set_input_transform(Vector shift, Vector scale);
  const std::optional<std::pair<Vector, Vector>>& input_transform() const { return input_transform_; }

  BatchNormConfig bn_config;

  int input_dim() const { return spec_.input_dim(); }
  int output_dim() const { return spec_.output_dim(); }
  std::size_t num_parameters() const;

  NetworkGrads zero_grads() const;

 private:
  NetworkSpec spec_;
  NetworkParams params_;
  std::optional<std::pair<Vector, Vector>> input_transform_;
  std::uint64_t version_ = 0;
};

enum class Mode { train, eval };

struct LayerCache {
  Matrix input;
  Matrix pre;   // before activation
  Matrix act;   // after activation
  Matrix xhat;  // normalized activation when BN is on
  Vector inv_std;
};

struct ForwardCache {
  const FeatureNetwork* owner = nullptr;
  std::uint64_t version = 0;
  Mode mode = Mode::eval;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Matrix outputs;
  ForwardCache cache;
};

struct BackwardResult {
  NetworkGrads param_grads;
  Matrix input_grads;
};

// Train mode uses batch statistics and updates the running BN statistics.
ForwardResult forward(FeatureNetwork& net, const Matrix& batch, Mode mode);
// Eval-mode forward; never mutates the network.
Matrix evaluate(const FeatureNetwork& net, const Matrix& batch);

BackwardResult backward(const FeatureNetwork& net, const ForwardCache& cache, const Matrix& upstream);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamSlot {
  std::string name;
  std::span<double> values;
  std::span<const double> grads;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::map<std::string, std::vector<double>> first;
  std::map<std::string, std::vector<double>> second;
};

// Bias-corrected Adam over named slots. All gradients are checked before any value moves.
void adam_step(AdamState& state, const std::vector<ParamSlot>& slots);

// Slots for every trainable array of `net`, named "<prefix>.layer<i>.<field>".
std::vector<ParamSlot> network_slots(FeatureNetwork& net, const NetworkGrads& grads,
                                     const std::string& prefix);

// Maps network outputs to (loss, dloss/doutputs).
using OutputLoss = std::function<std::pair<double, Matrix>(const Matrix&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

// Central differences with step h on a copy of the network.
GradCheckReport grad_check_report(const FeatureNetwork& net, const Matrix& batch, const OutputLoss& loss,
                                  Mode mode = Mode::train, double h = 1e-5);
double grad_check(const FeatureNetwork& net, const Matrix& batch, const OutputLoss& loss,
                  Mode mode = Mode::train, double h = 1e-5);

}  // namespace speccausal
