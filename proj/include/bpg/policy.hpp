#pragma once

#include "bpg/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace bpg {

/// Feature vectors phi(s, a), one row per state-action pair.
///
/// Row index of (s, a) is s * n_actions + a, the same pair ordering used by
/// TabularMdp and StateActionChain. As an assembled matrix this is Phi.
template <typename Scalar = double>
struct FeatureMap {
  Index n_states = 0;
  Index n_actions = 0;
  Matrix<Scalar> table;

  Index dim() const { return table.cols(); }
  Index n_pairs() const { return n_states * n_actions; }
  Index pair(Index s, Index a) const { return s * n_actions + a; }

  auto phi(Index s, Index a) const { return table.row(pair(s, a)).transpose(); }
};

/// One-hot features over pairs (Phi = I).
template <typename Scalar = double>
FeatureMap<Scalar> tabular_features(Index n_states, Index n_actions) {
  FeatureMap<Scalar> fm{n_states, n_actions, Matrix<Scalar>::Identity(n_states * n_actions,
                                                                       n_states * n_actions)};
  return fm;
}

template <typename Scalar>
Scalar max_feature_norm(const FeatureMap<Scalar>& fm) {
  if (fm.table.size() == 0) return Scalar(0);
  return fm.table.rowwise().norm().maxCoeff();
}

/// Softmax-linear policy: pi(a|s) proportional to exp(theta' phi(s, a)).
template <typename Scalar = double>
struct SoftmaxPolicy {
  Vector<Scalar> theta;
  FeatureMap<Scalar> features;

  Index n_states() const { return features.n_states; }
  Index n_actions() const { return features.n_actions; }
  Index dim() const { return features.dim(); }
};

template <typename Scalar = double>
using PolicyTheta = SoftmaxPolicy<Scalar>;

template <typename Scalar>
SoftmaxPolicy<Scalar> with_theta(const SoftmaxPolicy<Scalar>& policy, const Vector<Scalar>& theta) {
  return SoftmaxPolicy<Scalar>{theta, policy.features};
}

template <typename Scalar>
Vector<Scalar> action_probs(const SoftmaxPolicy<Scalar>& policy, Index s) {
  const auto& fm = policy.features;
  Vector<Scalar> pref = fm.table.middleRows(s * fm.n_actions, fm.n_actions) * policy.theta;
  pref.array() -= pref.maxCoeff();
  Vector<Scalar> p = pref.array().exp();
  return p / p.sum();
}

/// pi(a|s) as an n_states x n_actions table.
template <typename Scalar>
Matrix<Scalar> policy_table(const SoftmaxPolicy<Scalar>& policy) {
  Matrix<Scalar> pi(policy.n_states(), policy.n_actions());
  for (Index s = 0; s < policy.n_states(); ++s) pi.row(s) = action_probs(policy, s).transpose();
  return pi;
}

/// Expected feature under pi(.|s).
template <typename Scalar>
Vector<Scalar> mean_feature(const SoftmaxPolicy<Scalar>& policy, Index s,
                            const Vector<Scalar>& probs) {
  const auto& fm = policy.features;
  return fm.table.middleRows(s * fm.n_actions, fm.n_actions).transpose() * probs;
}

/// grad_theta log pi(a|s) = phi(s,a) - E_pi[phi(s,.)].
template <typename Scalar>
Vector<Scalar> score(const SoftmaxPolicy<Scalar>& policy, Index s, Index a) {
  const Vector<Scalar> probs = action_probs(policy, s);
  return policy.features.phi(s, a) - mean_feature(policy, s, probs);
}

/// All scores, one row per pair.
template <typename Scalar>
Matrix<Scalar> score_table(const SoftmaxPolicy<Scalar>& policy) {
  const auto& fm = policy.features;
  Matrix<Scalar> out(fm.n_pairs(), fm.dim());
  for (Index s = 0; s < fm.n_states; ++s) {
    const Vector<Scalar> probs = action_probs(policy, s);
    const Vector<Scalar> mean = mean_feature(policy, s, probs);
    for (Index a = 0; a < fm.n_actions; ++a)
      out.row(fm.pair(s, a)) = (fm.phi(s, a) - mean).transpose();
  }
  return out;
}

/// Hessian of log pi(a|s) in theta: minus the feature covariance under
/// pi(.|s). Independent of a for softmax-linear.
template <typename Scalar>
Matrix<Scalar> score_jacobian(const SoftmaxPolicy<Scalar>& policy, Index s, Index /*a*/) {
  const auto& fm = policy.features;
  const Vector<Scalar> probs = action_probs(policy, s);
  const Vector<Scalar> mean = mean_feature(policy, s, probs);
  Matrix<Scalar> jac = Matrix<Scalar>::Zero(fm.dim(), fm.dim());
  for (Index b = 0; b < fm.n_actions; ++b) {
    const Vector<Scalar> c = fm.phi(s, b) - mean;
    jac.noalias() -= probs(b) * c * c.transpose();
  }
  return jac;
}

/// Spectral norm of a symmetric matrix.
template <typename Derived>
typename Derived::Scalar symmetric_norm(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) return Scalar(0);
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(m.eval(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Certified bounds on the score (G), its Jacobian (B) and the Jacobian's
/// Lipschitz constant (iota).
template <typename Scalar = double>
struct PolicyConstants {
  Scalar G = 0;
  Scalar B = 0;
  Scalar iota = 0;
};

template <typename Scalar>
PolicyConstants<Scalar> policy_constants(const SoftmaxPolicy<Scalar>& policy) {
  const auto& fm = policy.features;
  const Scalar c = max_feature_norm(fm);
  // Covariance spectral norm <= trace = E||X - X'||^2 / 2 <= diam^2 / 2.
  Scalar diam_sq = 0;
  for (Index s = 0; s < fm.n_states; ++s)
    for (Index a = 0; a < fm.n_actions; ++a)
      for (Index b = a + 1; b < fm.n_actions; ++b)
        diam_sq = std::max(diam_sq, (fm.phi(s, a) - fm.phi(s, b)).squaredNorm());
  return {Scalar(2) * c, diam_sq / Scalar(2), Scalar(8) * c * c * c};
}

}  // namespace bpg
