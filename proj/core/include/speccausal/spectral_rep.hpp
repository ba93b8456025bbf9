#pragma once

#include "speccausal/contrastive.hpp"
#include "speccausal/dataset.hpp"
#include "speccausal/neuralnet.hpp"

#include <string>
#include <vector>

namespace speccausal {

// d1 x d2 x d3 tensor stored as d3 slices of d1 x d2.
struct Tensor3 {
  std::vector<Matrix> slices;

  Tensor3() = default;
  Tensor3(Eigen::Index d1, Eigen::Index d2, Eigen::Index d3);
  static Tensor3 random(Eigen::Index d1, Eigen::Index d2, Eigen::Index d3, double scale, std::uint64_t seed);

  Eigen::Index dim1() const { return slices.empty() ? 0 : slices.front().rows(); }
  Eigen::Index dim2() const { return slices.empty() ? 0 : slices.front().cols(); }
  Eigen::Index dim3() const { return static_cast<Eigen::Index>(slices.size()); }
  // sum_k xi_k * slice_k (the mode-3 product with xi)
  Matrix contract(const Vector& xi) const;
};

struct IVRepresentation {
  FeatureNetwork phi;  // X -> R^d
  FeatureNetwork psi;  // Z -> R^d
  int dim() const { return phi.output_dim(); }
  void validate() const;
};

// IV-OC: target x, instrument z, conditioner o.  PCL: target w, instrument z, conditioner x.
// p(t | z, c) = p(t) <phi(t), V(c) psi(z)>,  p(y | z, c) = p(y) <nu(y), Q(c)^T V(c) psi(z)>,
// V(c) = p_v x_3 xi(c), Q(c) = p_q x_3 xi(c).
struct ConditionalRepresentation {
  Setting setting = Setting::ivoc;
  FeatureNetwork phi;
  FeatureNetwork psi;
  FeatureNetwork xi;
  FeatureNetwork nu;
  Tensor3 p_v;  // d_t x d_z x d_c
  Tensor3 p_q;  // d_t x d_y x d_c

  std::string target_column() const { return setting == Setting::pcl ? "w" : "x"; }
  std::string conditioner_column() const { return setting == Setting::pcl ? "x" : "o"; }
  int d_target() const { return phi.output_dim(); }
  int d_instrument() const { return psi.output_dim(); }
  int d_conditioner() const { return xi.output_dim(); }
  int d_outcome() const { return nu.output_dim(); }
  Matrix V(const Vector& xi_c) const { return p_v.contract(xi_c); }
  Matrix Q(const Vector& xi_c) const { return p_q.contract(xi_c); }
  void validate() const;
};

using IVOCRepresentation = ConditionalRepresentation;
using PCLRepresentation = ConditionalRepresentation;

// scores(i, j) = <phi(x_i), psi(z_j)>
Matrix score_iv(const IVRepresentation& rep, const Matrix& x, const Matrix& z);

double score_ivoc_x(const ConditionalRepresentation& rep, const Vector& x, const Vector& z, const Vector& o);
double score_ivoc_y(const ConditionalRepresentation& rep, const Vector& y, const Vector& z, const Vector& o);
double score_pcl_w(const ConditionalRepresentation& rep, const Vector& w, const Vector& x, const Vector& z);
double score_pcl_y(const ConditionalRepresentation& rep, const Vector& y, const Vector& x, const Vector& z);

// scores(i, j) = phi(t_i)^T V(c_j) psi(z_j)
Matrix target_scores(const ConditionalRepresentation& rep, const Matrix& t, const Matrix& z, const Matrix& c);
// scores(i, j) = nu(y_i)^T Q(c_j)^T V(c_j) psi(z_j)
Matrix outcome_scores(const ConditionalRepresentation& rep, const Matrix& y, const Matrix& z, const Matrix& c);

enum class TrainStage { iv, ivoc_x, ivoc_y, pcl_w, pcl_y };
TrainStage parse_stage(const std::string& s);
std::string to_string(TrainStage s);

struct RepTrainConfig {
  ContrastiveLoss loss = ContrastiveLoss::l2;
  AdamConfig adam;
  int epochs = 100;
  int batch_size = 256;
  std::uint64_t seed = 0;
  // Outcome stages keep psi, xi and p_v fixed at their first-stage values.
  bool freeze_shared = true;
};

struct RepTrainResult {
  std::vector<double> loss_trace;  // mean minibatch loss per epoch
};

RepTrainResult train_representation(TrainStage stage, IVRepresentation& rep, const Dataset& data,
                                    const Dataset* unlabeled, const RepTrainConfig& cfg);
RepTrainResult train_representation(TrainStage stage, ConditionalRepresentation& rep, const Dataset& data,
                                    const Dataset* unlabeled, const RepTrainConfig& cfg);

// Per-column standardization of network inputs from a data sample (unit scale for constant columns).
void standardize_inputs(FeatureNetwork& net, const Matrix& sample);

// Estimated p(x|z)/p(x) for all pairs. L2 scores are used as they are; MLE scores go
// through the softplus link and are normalized over the reference instrument sample,
// since that loss only identifies the ratio up to a factor depending on x.
Matrix density_ratio(const IVRepresentation& rep, ContrastiveLoss loss, const Matrix& x, const Matrix& z,
                     const Matrix& z_reference);

void save_representation(const IVRepresentation& rep, const std::filesystem::path& path);
void save_representation(const ConditionalRepresentation& rep, const std::filesystem::path& path);
IVRepresentation load_iv_representation(const std::filesystem::path& path);
ConditionalRepresentation load_conditional_representation(const std::filesystem::path& path);

}  // namespace speccausal
