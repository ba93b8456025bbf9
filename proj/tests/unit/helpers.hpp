#pragma once

#include "speccausal/linalg.hpp"
#include "speccausal/rng.hpp"

namespace testutil {

inline speccausal::Matrix gaussian(Eigen::Index r, Eigen::Index c, speccausal::Rng& rng) {
  speccausal::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

inline speccausal::Vector gaussian_vec(Eigen::Index n, speccausal::Rng& rng) {
  speccausal::Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

inline double max_abs(const speccausal::Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace testutil
