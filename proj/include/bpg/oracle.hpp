#pragma once

#include "bpg/core.hpp"
#include "bpg/mdp.hpp"
#include "bpg/policy.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

namespace bpg {

// ---------------------------------------------------------------------------
// Values, objective, visitation
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct ValueFunctions {
  Vector<Scalar> V;  // over states
  Vector<Scalar> Q;  // over pairs
};

/// Q = R + gamma K Q solved directly; V(s) = sum_a pi(a|s) Q(s, a).
template <typename Scalar>
ValueFunctions<Scalar> value_functions(const TabularMdp<Scalar>& mdp, const Matrix<Scalar>& pi) {
  const Index n = mdp.n_pairs();
  const Matrix<Scalar> k = pair_kernel(mdp, pi);
  const Matrix<Scalar> sys = Matrix<Scalar>::Identity(n, n) - mdp.gamma * k;
  const Vector<Scalar> r = mdp.reward_vector();
  Eigen::PartialPivLU<Matrix<Scalar>> lu(sys);
  ValueFunctions<Scalar> out;
  out.Q = lu.solve(r);
  const Scalar resid = (sys * out.Q - r).norm();
  if (!std::isfinite(static_cast<double>(resid)) ||
      resid > Scalar(1e-10) * std::max<Scalar>(Scalar(1), r.norm()))
    throw SingularError("value_functions: Bellman solve residual " +
                        detail::num(static_cast<double>(resid)));
  out.V.resize(mdp.n_states);
  for (Index s = 0; s < mdp.n_states; ++s)
    out.V(s) = pi.row(s).dot(out.Q.segment(s * mdp.n_actions, mdp.n_actions).transpose());
  return out;
}

template <typename Scalar>
ValueFunctions<Scalar> value_functions(const TabularMdp<Scalar>& mdp,
                                       const SoftmaxPolicy<Scalar>& policy) {
  return value_functions(mdp, policy_table(policy));
}

/// J(theta) = rho0' V.
template <typename Scalar>
Scalar objective(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy) {
  return mdp.rho0.dot(value_functions(mdp, policy).V);
}

/// d' (I - gamma P_pi) = rho0'. Total mass 1 / (1 - gamma).
template <typename Scalar>
Vector<Scalar> discounted_visitation(const TabularMdp<Scalar>& mdp, const Matrix<Scalar>& pi) {
  const Matrix<Scalar> p = state_transition(mdp, pi);
  const Matrix<Scalar> sys =
      (Matrix<Scalar>::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * p).transpose();
  return sys.partialPivLu().solve(mdp.rho0);
}

template <typename Scalar>
Vector<Scalar> discounted_visitation(const TabularMdp<Scalar>& mdp,
                                     const SoftmaxPolicy<Scalar>& policy) {
  return discounted_visitation(mdp, policy_table(policy));
}

/// sum_s d(s) sum_a pi(a|s) score(s, a) f(s, a) for a function f over pairs.
template <typename Scalar>
Vector<Scalar> weighted_score_sum(const TabularMdp<Scalar>& mdp, const Matrix<Scalar>& pi,
                                  const Matrix<Scalar>& scores, const Vector<Scalar>& state_w,
                                  const Vector<Scalar>& f) {
  Vector<Scalar> g = Vector<Scalar>::Zero(scores.cols());
  for (Index s = 0; s < mdp.n_states; ++s)
    for (Index a = 0; a < mdp.n_actions; ++a) {
      const Index x = mdp.pair(s, a);
      g.noalias() += (state_w(s) * pi(s, a) * f(x)) * scores.row(x).transpose();
    }
  return g;
}

/// Policy gradient theorem, summation form over the discounted visitation.
template <typename Scalar>
Vector<Scalar> exact_gradient(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy) {
  const Matrix<Scalar> pi = policy_table(policy);
  const auto vf = value_functions(mdp, pi);
  return weighted_score_sum(mdp, pi, score_table(policy), discounted_visitation(mdp, pi), vf.Q);
}

/// J_H = E[sum_{t<H} gamma^t R_t].
template <typename Scalar>
Scalar truncated_objective(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy,
                           Index horizon) {
  if (horizon < 1) throw ValidationError("truncated_objective: H must be >= 1");
  const Matrix<Scalar> pi = policy_table(policy);
  const Matrix<Scalar> p = state_transition(mdp, pi);
  Vector<Scalar> r_pi(mdp.n_states);
  for (Index s = 0; s < mdp.n_states; ++s) r_pi(s) = pi.row(s).dot(mdp.reward.row(s));
  Vector<Scalar> rho = mdp.rho0;
  Scalar j = 0, disc = 1;
  for (Index k = 0; k < horizon; ++k) {
    j += disc * rho.dot(r_pi);
    disc *= mdp.gamma;
    rho = p.transpose() * rho;
  }
  return j;
}

/// Exact gradient of J_H.
///
/// Evaluates sum_{k<H} gamma^k E[score(s_k, a_k) Q_{H-k}(s_k, a_k)], where
/// Q_n is the n-step truncated action value (Q_1 = R, Q_n = R + gamma K Q_{n-1}).
/// The cross terms t < k of the temporal double sum vanish because the score
/// has zero conditional mean.
template <typename Scalar>
Vector<Scalar> truncated_gradient(const TabularMdp<Scalar>& mdp,
                                  const SoftmaxPolicy<Scalar>& policy, Index horizon) {
  if (horizon < 1) throw ValidationError("truncated_gradient: H must be >= 1");
  const Matrix<Scalar> pi = policy_table(policy);
  const Matrix<Scalar> k = pair_kernel(mdp, pi);
  const Matrix<Scalar> p = state_transition(mdp, pi);
  const Matrix<Scalar> scores = score_table(policy);
  const Vector<Scalar> r = mdp.reward_vector();

  // q[n] = Q_n for n = 1 .. H.
  std::vector<Vector<Scalar>> q(static_cast<std::size_t>(horizon) + 1);
  q[1] = r;
  for (Index n = 2; n <= horizon; ++n)
    q[static_cast<std::size_t>(n)] = r + mdp.gamma * k * q[static_cast<std::size_t>(n - 1)];

  Vector<Scalar> g = Vector<Scalar>::Zero(policy.dim());
  Vector<Scalar> rho = mdp.rho0;
  Scalar disc = 1;
  for (Index step = 0; step < horizon; ++step) {
    g += disc * weighted_score_sum(mdp, pi, scores, rho,
                                   q[static_cast<std::size_t>(horizon - step)]);
    disc *= mdp.gamma;
    rho = p.transpose() * rho;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Curvature
// ---------------------------------------------------------------------------

/// Central finite differences of exact_gradient, column j = d grad / d theta_j.
/// Not symmetrized.
template <typename Scalar>
Matrix<Scalar> fd_hessian_raw(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy,
                              Scalar fd_step = Scalar(1e-4)) {
  if (!(fd_step >= Scalar(1e-7) && fd_step <= Scalar(1e-2)))
    throw ValidationError("hessian: fd_step must lie in [1e-7, 1e-2]");
  const Index m = policy.dim();
  Matrix<Scalar> h(m, m);
  for (Index j = 0; j < m; ++j) {
    Vector<Scalar> tp = policy.theta, tm = policy.theta;
    tp(j) += fd_step;
    tm(j) -= fd_step;
    h.col(j) = (exact_gradient(mdp, with_theta(policy, tp)) -
                exact_gradient(mdp, with_theta(policy, tm))) /
               (Scalar(2) * fd_step);
  }
  return h;
}

/// Symmetrized finite-difference Hessian of J.
template <typename Scalar>
Matrix<Scalar> hessian(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy,
                       Scalar fd_step = Scalar(1e-4)) {
  const Matrix<Scalar> raw = fd_hessian_raw(mdp, policy, fd_step);
  return (raw + raw.transpose()) / Scalar(2);
}

/// Eigen-decomposition with eigenvalues ascending; ties keep solver order.
template <typename Scalar>
Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> hessian_eigen(const Matrix<Scalar>& h) {
  return Eigen::SelfAdjointEigenSolver<Matrix<Scalar>>(h);
}

template <typename Scalar>
Scalar top_eigenvalue(const Matrix<Scalar>& h) {
  if (h.size() == 0) return Scalar(0);
  return Eigen::SelfAdjointEigenSolver<Matrix<Scalar>>(h, Eigen::EigenvaluesOnly)
      .eigenvalues()
      .maxCoeff();
}

template <typename Scalar = double>
struct SmoothnessConstants {
  Scalar L = 0;
  Scalar chi = 0;
};

/// Gradient (L) and Hessian (chi) Lipschitz constants from the bounds on
/// rewards and score derivatives.
template <typename Scalar>
SmoothnessConstants<Scalar> smoothness_constants(Scalar r_max, Scalar G, Scalar B, Scalar iota,
                                                 Scalar gamma) {
  const Scalar om = Scalar(1) - gamma;
  SmoothnessConstants<Scalar> c;
  c.L = r_max * B / (om * om) + (Scalar(1) + gamma) * r_max * G * G / (om * om * om);
  const Scalar inner = std::max({B, G * G * gamma / om, G > 0 ? iota / G : Scalar(0),
                                 B * gamma / om,
                                 (G * G * (Scalar(1) + gamma) + B * om * gamma) / (om * om)});
  c.chi = r_max * G * B / (om * om) + r_max * G * G * G * (Scalar(1) + gamma) / (om * om * om) +
          r_max * G / om * inner;
  return c;
}

// ---------------------------------------------------------------------------
// Region classification
// ---------------------------------------------------------------------------

enum class Region { LargeGradient, StrictSaddle, SecondOrderStationary };

inline const char* region_name(Region r) {
  switch (r) {
    case Region::LargeGradient: return "G";
    case Region::StrictSaddle: return "H";
    case Region::SecondOrderStationary: return "M";
  }
  return "?";
}

template <typename Scalar = double>
struct RegionThresholds {
  Scalar mu = 0;
  Scalar ell = 0;
  Scalar delta = 1;
  Scalar omega = 0;

  /// ||grad J||^2 at or above this puts theta in the large-gradient region.
  Scalar gradient_sq_threshold() const { return mu * ell * (Scalar(1) + Scalar(1) / delta); }
};

/// ell = L sigma^2 - D^2 mu.
template <typename Scalar>
Scalar default_ell(Scalar L, Scalar sigma, Scalar D, Scalar mu) {
  return L * sigma * sigma - D * D * mu;
}

template <typename Scalar>
Region classify_values(Scalar grad_norm, Scalar top_eig, const RegionThresholds<Scalar>& th) {
  if (grad_norm * grad_norm >= th.gradient_sq_threshold()) return Region::LargeGradient;
  return top_eig >= th.omega ? Region::StrictSaddle : Region::SecondOrderStationary;
}

template <typename Scalar = double>
struct StationarityReport {
  Scalar grad_norm = 0;
  Scalar hessian_top_eig = 0;
  Region region = Region::SecondOrderStationary;
  RegionThresholds<Scalar> thresholds;
};

template <typename Scalar>
StationarityReport<Scalar> classify(const TabularMdp<Scalar>& mdp,
                                    const SoftmaxPolicy<Scalar>& policy,
                                    const RegionThresholds<Scalar>& th,
                                    Scalar fd_step = Scalar(1e-4)) {
  if (!(th.mu > 0 && th.ell > 0 && th.delta > 0 && th.omega > 0))
    throw ValidationError("classify: mu, ell, delta, omega must be positive");
  StationarityReport<Scalar> rep;
  rep.thresholds = th;
  rep.grad_norm = exact_gradient(mdp, policy).norm();
  rep.hessian_top_eig = top_eigenvalue(hessian(mdp, policy, fd_step));
  rep.region = classify_values(rep.grad_norm, rep.hessian_top_eig, th);
  return rep;
}

// ---------------------------------------------------------------------------
// Linear critic
// ---------------------------------------------------------------------------

/// Throws SingularError naming the columns of Phi that depend on the others.
template <typename Scalar>
void require_full_column_rank(const FeatureMap<Scalar>& features) {
  Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(features.table);
  qr.setThreshold(Scalar(1e-10));
  if (qr.rank() == features.dim()) return;
  std::string cols;
  for (Index i = qr.rank(); i < features.dim(); ++i) {
    if (!cols.empty()) cols += ",";
    cols += std::to_string(qr.colsPermutation().indices()(i));
  }
  throw SingularError("critic features are rank deficient (rank " + std::to_string(qr.rank()) +
                      " of " + std::to_string(features.dim()) + "); dependent columns: " + cols);
}

template <typename Scalar = double>
struct CriticSystem {
  Matrix<Scalar> A;  // E_eta[phi (phi - gamma phi')']
  Vector<Scalar> b;  // E_eta[R phi]
  Scalar lambda_min_sym = 0;
};

template <typename Scalar>
CriticSystem<Scalar> critic_matrix(const TabularMdp<Scalar>& mdp,
                                   const StateActionChain<Scalar>& chain,
                                   const FeatureMap<Scalar>& features) {
  const Matrix<Scalar>& phi = features.table;
  const Index n = mdp.n_pairs();
  const auto d = chain.stationary.asDiagonal();
  CriticSystem<Scalar> cs;
  cs.A = phi.transpose() * d *
         (Matrix<Scalar>::Identity(n, n) - mdp.gamma * chain.kernel) * phi;
  cs.b = phi.transpose() * d * mdp.reward_vector();
  const Matrix<Scalar> sym = cs.A + cs.A.transpose();
  cs.lambda_min_sym = sym.size() ? Eigen::SelfAdjointEigenSolver<Matrix<Scalar>>(
                                       sym, Eigen::EigenvaluesOnly)
                                       .eigenvalues()
                                       .minCoeff()
                                 : Scalar(0);
  return cs;
}

template <typename Scalar>
CriticSystem<Scalar> critic_matrix(const TabularMdp<Scalar>& mdp,
                                   const SoftmaxPolicy<Scalar>& policy,
                                   const FeatureMap<Scalar>& features) {
  return critic_matrix(mdp, induced_chain(mdp, policy), features);
}

/// w* = A^{-1} b, the projected-Bellman fixed point.
template <typename Scalar>
Vector<Scalar> critic_fixed_point(const CriticSystem<Scalar>& cs,
                                  const FeatureMap<Scalar>& features) {
  require_full_column_rank(features);
  Eigen::FullPivLU<Matrix<Scalar>> lu(cs.A);
  lu.setThreshold(Scalar(1e-12));
  if (!lu.isInvertible()) throw SingularError("critic_fixed_point: A_theta is singular");
  return lu.solve(cs.b);
}

template <typename Scalar>
Vector<Scalar> critic_fixed_point(const TabularMdp<Scalar>& mdp,
                                  const SoftmaxPolicy<Scalar>& policy,
                                  const FeatureMap<Scalar>& features) {
  require_full_column_rank(features);
  return critic_fixed_point(critic_matrix(mdp, policy, features), features);
}

/// ||Phi w - Proj_Phi T^pi Phi w||_eta with the eta-weighted projection.
template <typename Scalar>
Scalar projected_bellman_residual(const TabularMdp<Scalar>& mdp,
                                  const StateActionChain<Scalar>& chain,
                                  const FeatureMap<Scalar>& features, const Vector<Scalar>& w) {
  const Matrix<Scalar>& phi = features.table;
  const auto d = chain.stationary.asDiagonal();
  const Vector<Scalar> qw = phi * w;
  const Vector<Scalar> tq = mdp.reward_vector() + mdp.gamma * chain.kernel * qw;
  const Matrix<Scalar> gram = phi.transpose() * d * phi;
  const Vector<Scalar> proj = phi * gram.ldlt().solve(phi.transpose() * d * tq);
  const Vector<Scalar> diff = qw - proj;
  return std::sqrt(diff.dot(chain.stationary.cwiseProduct(diff)));
}

/// ||Q_{w1} - Q_{w2}||^2_eta.
template <typename Scalar>
Scalar q_error_eta(const FeatureMap<Scalar>& features, const Vector<Scalar>& eta,
                   const Vector<Scalar>& w1, const Vector<Scalar>& w2) {
  const Vector<Scalar> diff = features.table * (w1 - w2);
  return diff.dot(eta.cwiseProduct(diff));
}

}  // namespace bpg
