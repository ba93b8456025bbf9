#pragma once

#include "speccausal/dataset.hpp"
#include "speccausal/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace speccausal {

struct DiscreteVariable {
  std::string name;
  Matrix support;  // one row per level; the row is what appears in the dataset column
  std::size_t cardinality() const { return static_cast<std::size_t>(support.rows()); }
};

DiscreteVariable one_hot_variable(const std::string& name, std::size_t k);
DiscreteVariable scalar_variable(const std::string& name, const std::vector<double>& levels);

// Full joint probability table, row-major over `variables` (last variable fastest).
// A variable named "u" is latent: it is never emitted as a dataset column.
struct DiscreteJointSpec {
  std::vector<DiscreteVariable> variables;
  std::vector<double> table;

  void validate() const;
  std::size_t index_of(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::size_t> cardinalities() const;
  std::size_t flat_index(const std::vector<std::size_t>& assignment) const;
  std::vector<std::size_t> unflatten(std::size_t flat) const;
  // Marginal over `names`, row-major in the order given.
  std::vector<double> marginal(const std::vector<std::string>& names) const;
};

using Assignment = std::vector<std::size_t>;

// Joint built from an unnormalized weight on assignments (in variable order).
DiscreteJointSpec make_joint(std::vector<DiscreteVariable> variables,
                             const std::function<double(const Assignment&)>& weight);

std::vector<Assignment> sample_assignments(const DiscreteJointSpec& spec, std::size_t n, Rng& rng);

// i.i.d. draws; setting inferred from the observed columns (o -> ivoc, w -> pcl, else iv).
Dataset gen_discrete_toy(const DiscreteJointSpec& spec, std::size_t n, std::uint64_t seed);
// One row per observed configuration with positive probability, weighted by that probability.
Dataset population_dataset(const DiscreteJointSpec& spec);

// p(x, z) / (p(x) p(z)) at level indices of the variables named x and z.
double discrete_ratio_oracle(const DiscreteJointSpec& spec, std::size_t x, std::size_t z);

// k x k one-hot pair with p(x, z) proportional to 1 + amplitude cos(2 pi (x - z) / k).
DiscreteJointSpec cosine_ratio_toy(std::size_t k, double amplitude = 0.8);

// Independent (x, z) with the given marginals.
DiscreteJointSpec independent_pair(const std::vector<double>& px, const std::vector<double>& pz);

struct BridgeSolution {
  Matrix h;                // |X| x |W|
  Vector effect;           // sum_w p(w) h(x, w)
  double max_residual = 0;  // max over (x, z) of |sum_w h p(w|x,z) - E[Y|x,z]|
};

// Solves sum_w h(x,w) p(w|x,z) = E[Y|x,z] for every z, one treatment level at a time.
BridgeSolution solve_bridge_exact(const DiscreteJointSpec& spec);

// sum_u p(u) E[Y | x, u]; requires a latent variable u.
Vector interventional_mean(const DiscreteJointSpec& spec);

// Latent-confounder proxy model u -> (z, x, w, y), x -> y with |u| = |w| = 2, |z| = 3.
DiscreteJointSpec default_pcl_spec();

// Samples with truth = exact causal effect at the sampled treatment.
Dataset gen_pcl_discrete(const DiscreteJointSpec& spec, std::size_t n, std::uint64_t seed);

// Minimum-norm solution of sum_x f(x,o) p(x|z,o) = E[Y|z,o] for all (z,o): |X| x |O| table.
// Without an o variable the table has a single column.
Matrix solve_iv_exact(const DiscreteJointSpec& spec);

// Additive-confounding IV-OC instance with |x| = |z| = 3, |o| = 2, binary latent u.
DiscreteJointSpec default_ivoc_spec();

// E[<level value of `target`> | given...] helpers used by the oracles.
// Returns, for each configuration of `given` (row-major), the conditional distribution of `target`.
Matrix conditional_table(const DiscreteJointSpec& spec, const std::string& target,
                         const std::vector<std::string>& given);

}  // namespace speccausal
