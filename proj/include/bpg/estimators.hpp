#pragma once

#include "bpg/core.hpp"
#include "bpg/mdp.hpp"
#include "bpg/oracle.hpp"
#include "bpg/policy.hpp"
#include "bpg/rng.hpp"
#include "bpg/td0.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace bpg {

enum class EstimatorKind { Vanilla, ActorCritic, Exact };

inline const char* estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Vanilla: return "vanilla";
    case EstimatorKind::ActorCritic: return "actor-critic";
    case EstimatorKind::Exact: return "exact";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

/// GPOMDP: sum_h score(a_h|s_h) sum_{i>=h} gamma^i R_i. `scores` is the
/// per-pair score table of the policy.
template <typename Scalar>
Vector<Scalar> gpomdp(const Matrix<Scalar>& scores, Index n_actions, const Trajectory<Scalar>& tr,
                      Scalar gamma) {
  if (tr.horizon() < 1) throw ValidationError("gpomdp: empty trajectory");
  const auto H = tr.steps.size();
  std::vector<Scalar> disc(H);
  Scalar d = 1;
  for (std::size_t i = 0; i < H; ++i, d *= gamma) disc[i] = d;
  Vector<Scalar> g = Vector<Scalar>::Zero(scores.cols());
  Scalar to_go = 0;
  for (std::size_t h = H; h-- > 0;) {
    const auto& st = tr.steps[h];
    to_go += disc[h] * st.reward;
    g.noalias() += to_go * scores.row(st.state * n_actions + st.action).transpose();
  }
  return g;
}

template <typename Scalar>
Vector<Scalar> gpomdp(const SoftmaxPolicy<Scalar>& policy, const Trajectory<Scalar>& tr,
                      Scalar gamma) {
  return gpomdp(score_table(policy), policy.n_actions(), tr, gamma);
}

/// Actor-critic estimator: sum_{h<H} gamma^h Q_w(s_h, a_h) score(a_h|s_h).
template <typename Scalar>
Vector<Scalar> ac_estimator(const Matrix<Scalar>& scores, Index n_actions,
                            const Trajectory<Scalar>& tr, const Vector<Scalar>& w_bar,
                            const FeatureMap<Scalar>& critic, Scalar gamma) {
  if (tr.horizon() < 1) throw ValidationError("ac_estimator: empty trajectory");
  Vector<Scalar> g = Vector<Scalar>::Zero(scores.cols());
  Scalar d = 1;
  for (const auto& st : tr.steps) {
    const Scalar q = w_bar.dot(critic.phi(st.state, st.action));
    g.noalias() += (d * q) * scores.row(st.state * n_actions + st.action).transpose();
    d *= gamma;
  }
  return g;
}

template <typename Scalar>
Vector<Scalar> ac_estimator(const SoftmaxPolicy<Scalar>& policy, const Trajectory<Scalar>& tr,
                            const CriticW<Scalar>& w_bar, const FeatureMap<Scalar>& critic,
                            Scalar gamma) {
  return ac_estimator(score_table(policy), policy.n_actions(), tr, w_bar.w, critic, gamma);
}

// ---------------------------------------------------------------------------
// Exact quantities at one theta
// ---------------------------------------------------------------------------

/// Exact oracle values at a fixed theta, cached for decomposing many samples.
template <typename Scalar = double>
struct GradientOracle {
  Index horizon = 1;
  Matrix<Scalar> pi;
  Matrix<Scalar> scores;
  Vector<Scalar> visitation;
  std::vector<Vector<Scalar>> state_marginals;  // rho_0 .. rho_{H-1}
  Vector<Scalar> exact_grad;
  Vector<Scalar> truncated_grad;
  Scalar J = 0;
  const TabularMdp<Scalar>* mdp = nullptr;

  static GradientOracle make(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy,
                             Index horizon) {
    if (horizon < 1) throw ValidationError("horizon must be >= 1");
    GradientOracle o;
    o.mdp = &mdp;
    o.horizon = horizon;
    o.pi = policy_table(policy);
    o.scores = score_table(policy);
    o.visitation = discounted_visitation(mdp, o.pi);
    const auto vf = value_functions(mdp, o.pi);
    o.J = mdp.rho0.dot(vf.V);
    o.exact_grad = weighted_score_sum(mdp, o.pi, o.scores, o.visitation, vf.Q);
    o.truncated_grad = truncated_gradient(mdp, policy, horizon);
    const Matrix<Scalar> p = state_transition(mdp, o.pi);
    Vector<Scalar> rho = mdp.rho0;
    for (Index k = 0; k < horizon; ++k) {
      o.state_marginals.push_back(rho);
      rho = p.transpose() * rho;
    }
    return o;
  }

  /// G_H(theta) = E[actor-critic estimator] given critic weights w.
  Vector<Scalar> critic_truncated(const FeatureMap<Scalar>& critic, const Vector<Scalar>& w) const {
    const Vector<Scalar> qw = critic.table * w;
    Vector<Scalar> g = Vector<Scalar>::Zero(scores.cols());
    Scalar d = 1;
    for (const auto& rho : state_marginals) {
      g += d * weighted_score_sum(*mdp, pi, scores, rho, qw);
      d *= mdp->gamma;
    }
    return g;
  }

  /// G_inf(theta) through the discounted visitation measure.
  Vector<Scalar> critic_infinite(const FeatureMap<Scalar>& critic, const Vector<Scalar>& w) const {
    return weighted_score_sum(*mdp, pi, scores, visitation, Vector<Scalar>(critic.table * w));
  }
};

template <typename Scalar>
Vector<Scalar> critic_truncated_gradient(const TabularMdp<Scalar>& mdp,
                                         const SoftmaxPolicy<Scalar>& policy,
                                         const FeatureMap<Scalar>& critic, const Vector<Scalar>& w,
                                         Index horizon) {
  return GradientOracle<Scalar>::make(mdp, policy, horizon).critic_truncated(critic, w);
}

template <typename Scalar>
Vector<Scalar> critic_infinite_gradient(const TabularMdp<Scalar>& mdp,
                                        const SoftmaxPolicy<Scalar>& policy,
                                        const FeatureMap<Scalar>& critic, const Vector<Scalar>& w) {
  const Matrix<Scalar> pi = policy_table(policy);
  return weighted_score_sum(mdp, pi, score_table(policy), discounted_visitation(mdp, pi),
                            Vector<Scalar>(critic.table * w));
}

// ---------------------------------------------------------------------------
// Noise / bias decomposition
// ---------------------------------------------------------------------------

/// g_hat = exact_grad + noise_xi + bias_d; for actor-critic bias_d = p + q.
template <typename Scalar = double>
struct GradSample {
  Vector<Scalar> g_hat;
  Vector<Scalar> exact_grad;
  Vector<Scalar> mean_est;
  Vector<Scalar> noise_xi;
  Vector<Scalar> bias_d;
  std::optional<Vector<Scalar>> bias_p;
  std::optional<Vector<Scalar>> bias_q;
};

template <typename Scalar>
GradSample<Scalar> decompose_vanilla(const GradientOracle<Scalar>& o, const Vector<Scalar>& g_hat) {
  GradSample<Scalar> gs;
  gs.g_hat = g_hat;
  gs.exact_grad = o.exact_grad;
  gs.mean_est = o.truncated_grad;
  gs.noise_xi = g_hat - o.truncated_grad;
  gs.bias_d = o.truncated_grad - o.exact_grad;
  return gs;
}

template <typename Scalar>
GradSample<Scalar> decompose_vanilla(const TabularMdp<Scalar>& mdp,
                                     const SoftmaxPolicy<Scalar>& policy,
                                     const Trajectory<Scalar>& tr, Index horizon) {
  if (tr.horizon() != horizon)
    throw ValidationError("decompose_vanilla: trajectory horizon differs from H");
  const auto o = GradientOracle<Scalar>::make(mdp, policy, horizon);
  return decompose_vanilla(o, gpomdp(o.scores, mdp.n_actions, tr, mdp.gamma));
}

template <typename Scalar>
GradSample<Scalar> decompose_ac(const GradientOracle<Scalar>& o, const Vector<Scalar>& g_hat,
                                const FeatureMap<Scalar>& critic, const Vector<Scalar>& w_bar) {
  GradSample<Scalar> gs;
  const Vector<Scalar> g_h = o.critic_truncated(critic, w_bar);
  const Vector<Scalar> g_inf = o.critic_infinite(critic, w_bar);
  gs.g_hat = g_hat;
  gs.exact_grad = o.exact_grad;
  gs.mean_est = g_h;
  gs.noise_xi = g_hat - g_h;
  gs.bias_p = g_h - g_inf;
  gs.bias_q = g_inf - o.exact_grad;
  gs.bias_d = g_h - o.exact_grad;
  return gs;
}

template <typename Scalar>
GradSample<Scalar> decompose_ac(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy,
                                const Trajectory<Scalar>& tr, const CriticW<Scalar>& w_bar,
                                const FeatureMap<Scalar>& critic, Index horizon) {
  if (tr.horizon() != horizon)
    throw ValidationError("decompose_ac: trajectory horizon differs from H");
  const auto o = GradientOracle<Scalar>::make(mdp, policy, horizon);
  return decompose_ac(o, ac_estimator(o.scores, mdp.n_actions, tr, w_bar.w, critic, mdp.gamma),
                      critic, w_bar.w);
}

// ---------------------------------------------------------------------------
// Critic inner loop
// ---------------------------------------------------------------------------

/// Runs K projected TD(0) steps from rho0 x pi and returns the averaged critic.
template <typename Scalar>
CriticW<Scalar> ac_inner_loop(const TdProblem<Scalar>& prob, const Vector<Scalar>& w0, Index K,
                              const StepSchedule<Scalar>& schedule, Rng& rng) {
  TdRunOptions<Scalar> opt;
  opt.w0 = w0;
  opt.record_per_step = false;
  opt.check_bounds = false;
  const auto st = run_td0(prob, K, schedule, algorithm_start(prob), rng, opt);
  return {project_ball(st.w_bar, prob.radius), prob.radius};
}

template <typename Scalar>
CriticW<Scalar> ac_inner_loop(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy,
                              const FeatureMap<Scalar>& critic, const Vector<Scalar>& w0, Index K,
                              const StepSchedule<Scalar>& schedule, Rng& rng) {
  return ac_inner_loop(make_td_problem(mdp, policy, critic), w0, K, schedule, rng);
}

// ---------------------------------------------------------------------------
// Horizon, inner-loop length, constants
// ---------------------------------------------------------------------------

/// Smallest H >= 1 with (1/(1-gamma) + H)^{1/2} gamma^H <= mu.
template <typename Scalar>
Index horizon_for_mu(Scalar mu, Scalar gamma) {
  if (!(mu > 0 && mu < 1)) throw ValidationError("horizon_for_mu: mu must lie in (0,1)");
  if (!(gamma > 0 && gamma < 1)) throw ValidationError("horizon_for_mu: gamma must lie in (0,1)");
  const Scalar base = Scalar(1) / (Scalar(1) - gamma);
  Index H = 1;
  while (std::sqrt(base + static_cast<Scalar>(H)) * std::pow(gamma, static_cast<Scalar>(H)) > mu)
    ++H;
  return H;
}

/// Truncation envelope D (1/(1-gamma) + H)^{1/2} gamma^H.
template <typename Scalar>
Scalar truncation_bias_bound(Scalar D, Scalar gamma, Index H) {
  return D * std::sqrt(Scalar(1) / (Scalar(1) - gamma) + static_cast<Scalar>(H)) *
         std::pow(gamma, static_cast<Scalar>(H));
}

/// Smallest H >= 1 with gamma^H <= mu (actor-critic truncation).
template <typename Scalar>
Index ac_horizon_for_mu(Scalar mu, Scalar gamma) {
  if (!(mu > 0 && mu < 1)) throw ValidationError("ac_horizon_for_mu: mu must lie in (0,1)");
  Index H = 1;
  while (std::pow(gamma, static_cast<Scalar>(H)) > mu) ++H;
  return H;
}

/// K = ceil(c log^2(mu^-4) / mu^4).
template <typename Scalar>
Index inner_steps_for_mu(Scalar mu, Scalar c = Scalar(1)) {
  if (!(mu > 0 && mu < 1)) throw ValidationError("inner_steps_for_mu: mu must lie in (0,1)");
  const Scalar l = std::log(std::pow(mu, Scalar(-4)));
  return static_cast<Index>(std::ceil(c * l * l / std::pow(mu, Scalar(4))));
}

/// Critic-side constants needed for D_q.
template <typename Scalar = double>
struct CriticMixing {
  Scalar F = 0;
  Scalar varsigma = 0;
  Scalar r = 0;
};

template <typename Scalar = double>
struct BoundBundle {
  Scalar sigma = 0;
  Scalar D = 0;
  Scalar D_p = 0;
  Scalar D_q = 0;
  Index H_required = 1;
};

template <typename Scalar>
BoundBundle<Scalar> bound_bundle(EstimatorKind kind, Scalar G, Scalar r_max, Scalar R,
                                 Scalar gamma, Scalar mu,
                                 std::optional<CriticMixing<Scalar>> mixing = std::nullopt) {
  const Scalar om = Scalar(1) - gamma;
  BoundBundle<Scalar> b;
  switch (kind) {
    case EstimatorKind::Vanilla:
      b.sigma = G * r_max / (om * om);
      b.D = G * r_max / om;
      if (mu > 0 && mu < 1) b.H_required = horizon_for_mu(mu, gamma);
      break;
    case EstimatorKind::ActorCritic: {
      b.sigma = G * R / om;
      b.D_p = G * R / om;
      if (mixing) {
        const Scalar lr = std::log(Scalar(1) / mixing->r);
        const Scalar c = Scalar(192) * mixing->F * mixing->F * R * R /
                         (mixing->varsigma * mixing->varsigma * lr * lr);
        b.D_q = G * std::pow(c, Scalar(0.25));
      }
      const Scalar p4 = b.D_p * b.D_p * b.D_p * b.D_p;
      const Scalar q4 = b.D_q * b.D_q * b.D_q * b.D_q;
      b.D = Scalar(2) * std::pow(p4 + q4, Scalar(0.25));
      if (mu > 0 && mu < 1) b.H_required = ac_horizon_for_mu(mu, gamma);
      break;
    }
    case EstimatorKind::Exact:
      break;
  }
  return b;
}

}  // namespace bpg
