#pragma once

#include "bpg/core.hpp"
#include "bpg/mdp.hpp"
#include "bpg/oracle.hpp"
#include "bpg/policy.hpp"
#include "bpg/rng.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace bpg {

/// Critic parameter constrained to the centered ball of radius R.
template <typename Scalar = double>
struct CriticW {
  Vector<Scalar> w;
  Scalar radius = 1;
};

/// One observed transition ((s, a), (s', a')) of the pair chain.
struct PairTransition {
  Index s = 0;
  Index a = 0;
  Index s_next = 0;
  Index a_next = 0;
};

/// Euclidean projection onto {||w|| <= R}.
template <typename Derived>
Vector<typename Derived::Scalar> project_ball(const Eigen::MatrixBase<Derived>& w,
                                              typename Derived::Scalar radius) {
  using Scalar = typename Derived::Scalar;
  if (!(radius > 0)) throw ValidationError("project_ball: radius must be positive");
  const Scalar n = w.norm();
  if (n <= radius) return w;
  return w * (radius / n);
}

/// (R(s,a) + gamma w'phi(s',a') - w'phi(s,a)) phi(s,a).
template <typename Scalar>
Vector<Scalar> td_semigradient(const Vector<Scalar>& w, const PairTransition& tr,
                               const FeatureMap<Scalar>& features,
                               const TabularMdp<Scalar>& mdp) {
  const auto phi = features.phi(tr.s, tr.a);
  const auto phi_next = features.phi(tr.s_next, tr.a_next);
  const Scalar delta = mdp.reward(tr.s, tr.a) + mdp.gamma * w.dot(phi_next) - w.dot(phi);
  return delta * phi;
}

/// Exact E_eta[g(w)] by enumeration over eta and the pair kernel.
template <typename Scalar>
Vector<Scalar> mean_semigradient(const Vector<Scalar>& w, const StateActionChain<Scalar>& chain,
                                 const FeatureMap<Scalar>& features,
                                 const TabularMdp<Scalar>& mdp) {
  Vector<Scalar> g = Vector<Scalar>::Zero(features.dim());
  const Index n = mdp.n_pairs();
  for (Index x = 0; x < n; ++x)
    for (Index y = 0; y < n; ++y) {
      const Scalar p = chain.stationary(x) * chain.kernel(x, y);
      if (p == 0) continue;
      const PairTransition tr{x / mdp.n_actions, x % mdp.n_actions, y / mdp.n_actions,
                              y % mdp.n_actions};
      g.noalias() += p * td_semigradient(w, tr, features, mdp);
    }
  return g;
}

/// Markov-sampling bias term (g(w) - g_bar(w))'(w - w*).
template <typename Scalar>
Scalar zeta(const Vector<Scalar>& w, const PairTransition& tr, const Vector<Scalar>& w_star,
            const StateActionChain<Scalar>& chain, const FeatureMap<Scalar>& features,
            const TabularMdp<Scalar>& mdp) {
  return (td_semigradient(w, tr, features, mdp) - mean_semigradient(w, chain, features, mdp))
      .dot(w - w_star);
}

/// Constant alpha or diminishing alpha_t = 1 / ((t + 1) varsigma).
template <typename Scalar = double>
struct StepSchedule {
  enum class Kind { Constant, Diminishing };
  Kind kind = Kind::Constant;
  Scalar alpha = 0;
  Scalar varsigma = 0;

  static StepSchedule constant(Scalar a) { return {Kind::Constant, a, 0}; }
  static StepSchedule inverse_sqrt(Index k) {
    return constant(Scalar(1) / std::sqrt(static_cast<Scalar>(k)));
  }
  static StepSchedule diminishing(Scalar varsigma) {
    if (!(varsigma > 0))
      throw ValidationError("diminishing step schedule needs varsigma > 0, got " +
                            detail::num(static_cast<double>(varsigma)));
    return {Kind::Diminishing, 0, varsigma};
  }

  Scalar at(Index k) const {
    if (kind == Kind::Constant) return alpha;
    return Scalar(1) / (static_cast<Scalar>(k + 1) * varsigma);
  }
};

/// Everything about one (MDP, policy, features) critic problem that does not
/// depend on the random run: chain, A, b, w*, radius, F.
template <typename Scalar = double>
struct TdProblem {
  TabularMdp<Scalar> mdp;
  FeatureMap<Scalar> features;
  Matrix<Scalar> pi;
  StateActionChain<Scalar> chain;
  CriticSystem<Scalar> system;
  Vector<Scalar> w_star;
  Matrix<Scalar> gram;  // Phi' D_eta Phi
  Scalar radius = 0;
  Scalar F = 0;
};

/// Builds a TdProblem. The radius defaults to 2 ||w*|| + 1 so w* lies inside.
template <typename Scalar>
TdProblem<Scalar> make_td_problem(const TabularMdp<Scalar>& mdp,
                                  const SoftmaxPolicy<Scalar>& policy,
                                  const FeatureMap<Scalar>& features,
                                  std::optional<Scalar> radius = std::nullopt) {
  TdProblem<Scalar> p;
  p.mdp = mdp;
  p.features = features;
  p.pi = policy_table(policy);
  p.chain = induced_chain(mdp, p.pi);
  p.system = critic_matrix(mdp, p.chain, features);
  p.w_star = critic_fixed_point(p.system, features);
  p.gram = features.table.transpose() * p.chain.stationary.asDiagonal() * features.table;
  p.radius = radius ? *radius : Scalar(2) * p.w_star.norm() + Scalar(1);
  if (!(p.radius > 0)) throw ValidationError("critic radius must be positive");
  p.F = mdp.r_max + Scalar(2) * p.radius;
  return p;
}

/// Upper bound on E||Q_{w*} - Q_{w_bar_K}||^2_eta for constant
/// alpha = 1/sqrt(K) from an arbitrary start distribution.
template <typename Scalar>
Scalar theorem48_bound(Index K, Scalar w0_dist, Scalar F, Index tau_mix, Scalar m, Scalar r,
                       Scalar gamma) {
  const Scalar k = static_cast<Scalar>(K);
  const Scalar om = Scalar(1) - gamma;
  return (w0_dist * w0_dist + F * F * (Scalar(17) + Scalar(12) * static_cast<Scalar>(tau_mix))) /
             (Scalar(2) * om * std::sqrt(k)) +
         Scalar(10) * F * F * m / ((Scalar(1) - r) * om * k);
}

/// The stationary-start counterpart (constant 9, no 1/K term).
template <typename Scalar>
Scalar stationary_start_bound(Index K, Scalar w0_dist, Scalar F, Index tau_mix, Scalar gamma) {
  const Scalar k = static_cast<Scalar>(K);
  return (w0_dist * w0_dist + F * F * (Scalar(9) + Scalar(12) * static_cast<Scalar>(tau_mix))) /
         (Scalar(2) * (Scalar(1) - gamma) * std::sqrt(k));
}

/// Leading term of the diminishing-step fourth-moment envelope,
/// (log^2 K / K) * 192 F^2 R^2 / (varsigma^2 log^2(1/r)), natural logs.
template <typename Scalar>
Scalar fourth_moment_envelope(Scalar F, Scalar R, Scalar varsigma, Scalar r, Index K) {
  const Scalar lk = std::log(static_cast<Scalar>(K));
  const Scalar lr = std::log(Scalar(1) / r);
  return lk * lk / static_cast<Scalar>(K) * Scalar(192) * F * F * R * R /
         (varsigma * varsigma * lr * lr);
}

template <typename Scalar = double>
struct TdRunOptions {
  std::optional<Vector<Scalar>> w0;  // default zero
  bool record_per_step = true;
  bool check_bounds = true;  // track max ||g|| and |zeta| along the path
};

template <typename Scalar = double>
struct TdRunStats {
  Index K = 0;
  Vector<Scalar> w_bar;
  Vector<Scalar> w_star;
  std::vector<Scalar> per_step_sq_error;  // ||Q_{w*} - Q_{w_k}||^2_eta, k < K
  Scalar final_sq_error = 0;              // ||Q_{w*} - Q_{w_bar}||^2_eta
  Scalar fourth_moment = 0;               // ||w* - w_bar||^4 for this run
  Scalar bound_value = 0;                 // nonstationary bound at K
  Scalar stationary_bound_value = 0;      // constant-9 bound at K
  Scalar F_const = 0;
  Scalar radius = 0;
  Index tau_mix = 0;                      // tau_mix(1/sqrt(K))
  Scalar max_g_norm = 0;
  Scalar max_abs_zeta = 0;
  Scalar max_w_norm = 0;
  std::vector<Scalar> step_sizes;         // only with record_per_step
};

/// Projected TD(0) with Markovian sampling from `start` (a distribution over
/// pairs). Returns w_bar = mean of w_0 .. w_{K-1}.
template <typename Scalar>
TdRunStats<Scalar> run_td0(const TdProblem<Scalar>& prob, Index K,
                           const StepSchedule<Scalar>& schedule, const Vector<Scalar>& start,
                           Rng& rng, const TdRunOptions<Scalar>& opt = {}) {
  if (K < 1) throw ValidationError("run_td0: K must be >= 1");
  if (start.size() != prob.mdp.n_pairs())
    throw ValidationError("run_td0: start distribution has wrong length");
  const auto& mdp = prob.mdp;
  const auto& fm = prob.features;
  const Index n_a = mdp.n_actions;
  const TrajectorySampler<Scalar> sampler(mdp, prob.pi);
  Matrix<Scalar> start_cdf = detail::row_cdf(Matrix<Scalar>(start.transpose()));

  TdRunStats<Scalar> st;
  st.K = K;
  st.w_star = prob.w_star;
  st.radius = prob.radius;
  st.F_const = prob.F;

  Vector<Scalar> w = opt.w0 ? *opt.w0 : Vector<Scalar>::Zero(fm.dim());
  if (w.size() != fm.dim()) throw ValidationError("run_td0: w0 has wrong dimension");
  w = project_ball(w, prob.radius);
  const Scalar w0_dist = (prob.w_star - w).norm();

  Vector<Scalar> sum = Vector<Scalar>::Zero(fm.dim());
  Index x = sample_from_cdf(start_cdf.row(0), rng.uniform());
  if (opt.record_per_step) {
    st.per_step_sq_error.reserve(static_cast<std::size_t>(K));
    st.step_sizes.reserve(static_cast<std::size_t>(K));
  }
  for (Index k = 0; k < K; ++k) {
    sum += w;
    st.max_w_norm = std::max(st.max_w_norm, w.norm());
    if (opt.record_per_step) {
      const Vector<Scalar> diff = prob.w_star - w;
      st.per_step_sq_error.push_back(diff.dot(prob.gram * diff));
    }
    const Index s = x / n_a, a = x % n_a;
    const Index sn = sampler.next_state(s, a, rng);
    const Index an = sampler.action(sn, rng);
    const PairTransition tr{s, a, sn, an};
    const Vector<Scalar> g = td_semigradient(w, tr, fm, mdp);
    if (opt.check_bounds) {
      st.max_g_norm = std::max(st.max_g_norm, g.norm());
      const Vector<Scalar> gbar = prob.system.b - prob.system.A * w;
      st.max_abs_zeta = std::max(st.max_abs_zeta, std::abs((g - gbar).dot(w - prob.w_star)));
    }
    const Scalar alpha = schedule.at(k);
    if (opt.record_per_step) st.step_sizes.push_back(alpha);
    w = project_ball(w + alpha * g, prob.radius);
    x = mdp.pair(sn, an);
  }
  st.w_bar = project_ball(sum / static_cast<Scalar>(K), prob.radius);
  const Vector<Scalar> diff = prob.w_star - st.w_bar;
  st.final_sq_error = diff.dot(prob.gram * diff);
  const Scalar d2 = diff.squaredNorm();
  st.fourth_moment = d2 * d2;

  const Scalar eps = Scalar(1) / std::sqrt(static_cast<Scalar>(K));
  st.tau_mix = prob.chain.mixing_time(eps);
  st.bound_value = theorem48_bound(K, w0_dist, prob.F, st.tau_mix, prob.chain.mixing_m,
                                   prob.chain.mixing_r, mdp.gamma);
  st.stationary_bound_value = stationary_start_bound(K, w0_dist, prob.F, st.tau_mix, mdp.gamma);
  return st;
}

template <typename Scalar>
TdRunStats<Scalar> run_td0(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy,
                           const FeatureMap<Scalar>& features, Index K,
                           const StepSchedule<Scalar>& schedule, const Vector<Scalar>& start,
                           Rng& rng, const TdRunOptions<Scalar>& opt = {}) {
  return run_td0(make_td_problem(mdp, policy, features), K, schedule, start, rng, opt);
}

/// s0 ~ rho0, a0 ~ pi(.|s0) as a pair distribution.
template <typename Scalar>
Vector<Scalar> algorithm_start(const TdProblem<Scalar>& prob) {
  return pair_distribution(prob.mdp, prob.pi, prob.mdp.rho0);
}

template <typename Scalar>
Vector<Scalar> point_mass(Index n, Index x) {
  Vector<Scalar> v = Vector<Scalar>::Zero(n);
  v(x) = 1;
  return v;
}

/// Seed-averaged ||w* - w_bar_K||^4 under the diminishing schedule with
/// varsigma = lambda_min(A + A'), starting from rho0 x pi.
template <typename Scalar>
Scalar fourth_moment_estimate(const TdProblem<Scalar>& prob, Index K, Index seeds, Rng& rng) {
  if (seeds < 1) throw ValidationError("fourth_moment_estimate: seeds must be >= 1");
  const auto schedule = StepSchedule<Scalar>::diminishing(prob.system.lambda_min_sym);
  const Vector<Scalar> start = algorithm_start(prob);
  TdRunOptions<Scalar> opt;
  opt.record_per_step = false;
  opt.check_bounds = false;
  Scalar acc = 0;
  for (Index i = 0; i < seeds; ++i) {
    Rng child = rng.child(static_cast<std::uint64_t>(i));
    acc += run_td0(prob, K, schedule, start, child, opt).fourth_moment;
  }
  return acc / static_cast<Scalar>(seeds);
}

template <typename Scalar>
Scalar fourth_moment_estimate(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy,
                              const FeatureMap<Scalar>& features, Index K, Index seeds, Rng& rng) {
  return fourth_moment_estimate(make_td_problem(mdp, policy, features), K, seeds, rng);
}

/// |E v(X, Y) - E v(X', Y')| for X = x_t, Y = x_{t+tau} of the chain started
/// from `init`, with X', Y' independent copies of the marginals. Exact.
template <typename Scalar>
Scalar coupling_gap(const Matrix<Scalar>& kernel, const Vector<Scalar>& init, Index t, Index tau,
                    const Matrix<Scalar>& v) {
  Vector<Scalar> pt = init;
  for (Index i = 0; i < t; ++i) pt = kernel.transpose() * pt;
  Matrix<Scalar> ktau = Matrix<Scalar>::Identity(kernel.rows(), kernel.cols());
  for (Index i = 0; i < tau; ++i) ktau = ktau * kernel;
  const Vector<Scalar> ptau = ktau.transpose() * pt;
  const Scalar joint = (pt.asDiagonal() * ktau).cwiseProduct(v).sum();
  const Scalar indep = pt.dot(v * ptau);
  return std::abs(joint - indep);
}

}  // namespace bpg
