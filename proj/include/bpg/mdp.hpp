#pragma once

#include "bpg/core.hpp"
#include "bpg/policy.hpp"
#include "bpg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

namespace bpg {

/// Finite discounted MDP.
///
/// `transition` holds one row per state-action pair (row s * n_actions + a),
/// each row the distribution P(.|s, a) over next states. `r_max` is the
/// declared bound on |R(s, a)|.
template <typename Scalar = double>
struct TabularMdp {
  Index n_states = 0;
  Index n_actions = 0;
  Matrix<Scalar> transition;
  Matrix<Scalar> reward;
  Scalar gamma = Scalar(0.9);
  Vector<Scalar> rho0;
  Scalar r_max = 0;

  Index n_pairs() const { return n_states * n_actions; }
  Index pair(Index s, Index a) const { return s * n_actions + a; }

  /// R over pairs, in pair order.
  Vector<Scalar> reward_vector() const {
    Vector<Scalar> r(n_pairs());
    for (Index s = 0; s < n_states; ++s)
      for (Index a = 0; a < n_actions; ++a) r(pair(s, a)) = reward(s, a);
    return r;
  }
};

/// Sets r_max to max |R| (used when an instance does not declare one).
template <typename Scalar>
void infer_r_max(TabularMdp<Scalar>& mdp) {
  mdp.r_max = mdp.reward.size() ? mdp.reward.cwiseAbs().maxCoeff() : Scalar(0);
}

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

template <typename Scalar>
ValidationReport validate_mdp(const TabularMdp<Scalar>& mdp) {
  ValidationReport rep;
  auto& v = rep.violations;
  const double tol = 1e-12;
  if (mdp.n_states < 1) v.push_back("n_states must be positive");
  if (mdp.n_actions < 1) v.push_back("n_actions must be positive");
  if (!v.empty()) return rep;

  if (mdp.transition.rows() != mdp.n_pairs() || mdp.transition.cols() != mdp.n_states) {
    v.push_back("transitions have shape " + std::to_string(mdp.transition.rows()) + "x" +
                std::to_string(mdp.transition.cols()) + ", expected " +
                std::to_string(mdp.n_pairs()) + "x" + std::to_string(mdp.n_states));
  } else {
    for (Index s = 0; s < mdp.n_states; ++s) {
      for (Index a = 0; a < mdp.n_actions; ++a) {
        const auto row = mdp.transition.row(mdp.pair(s, a));
        for (Index sn = 0; sn < mdp.n_states; ++sn) {
          if (!(row(sn) >= 0))
            v.push_back("negative probability P[s=" + std::to_string(s) +
                        "][a=" + std::to_string(a) + "][s'=" + std::to_string(sn) +
                        "] = " + detail::num(static_cast<double>(row(sn))));
        }
        const double sum = static_cast<double>(row.sum());
        if (!(std::abs(sum - 1.0) <= tol))
          v.push_back("row (s=" + std::to_string(s) + ",a=" + std::to_string(a) + ") sums to " +
                      detail::num(sum));
      }
    }
  }

  if (mdp.reward.rows() != mdp.n_states || mdp.reward.cols() != mdp.n_actions) {
    v.push_back("rewards have shape " + std::to_string(mdp.reward.rows()) + "x" +
                std::to_string(mdp.reward.cols()) + ", expected " +
                std::to_string(mdp.n_states) + "x" + std::to_string(mdp.n_actions));
  } else {
    for (Index s = 0; s < mdp.n_states; ++s)
      for (Index a = 0; a < mdp.n_actions; ++a)
        if (!(std::abs(mdp.reward(s, a)) <= mdp.r_max))
          v.push_back("|R(s=" + std::to_string(s) + ",a=" + std::to_string(a) +
                      ")| exceeds r_max " + detail::num(static_cast<double>(mdp.r_max)));
  }

  if (!(mdp.gamma > 0 && mdp.gamma < 1)) v.push_back("gamma out of (0,1)");

  if (mdp.rho0.size() != mdp.n_states) {
    v.push_back("rho0 has length " + std::to_string(mdp.rho0.size()) + ", expected " +
                std::to_string(mdp.n_states));
  } else {
    for (Index s = 0; s < mdp.n_states; ++s)
      if (!(mdp.rho0(s) >= 0))
        v.push_back("negative probability rho0[" + std::to_string(s) + "] = " +
                    detail::num(static_cast<double>(mdp.rho0(s))));
    const double sum = static_cast<double>(mdp.rho0.sum());
    if (!(std::abs(sum - 1.0) <= tol)) v.push_back("rho0 sums to " + detail::num(sum));
  }
  return rep;
}

/// Throws ValidationError listing every violation.
template <typename Scalar>
void require_valid(const TabularMdp<Scalar>& mdp) {
  const auto rep = validate_mdp(mdp);
  if (rep.ok()) return;
  std::string msg = "invalid MDP:";
  for (const auto& e : rep.violations) msg += "\n  " + e;
  throw ValidationError(msg);
}

// ---------------------------------------------------------------------------
// Policy-induced kernels
// ---------------------------------------------------------------------------

/// P_pi(s, s') = sum_a pi(a|s) P(s'|s, a).
template <typename Scalar>
Matrix<Scalar> state_transition(const TabularMdp<Scalar>& mdp, const Matrix<Scalar>& pi) {
  Matrix<Scalar> p = Matrix<Scalar>::Zero(mdp.n_states, mdp.n_states);
  for (Index s = 0; s < mdp.n_states; ++s)
    for (Index a = 0; a < mdp.n_actions; ++a)
      p.row(s) += pi(s, a) * mdp.transition.row(mdp.pair(s, a));
  return p;
}

/// Kernel over pairs: ((s,a),(s',a')) -> P(s'|s,a) pi(a'|s').
template <typename Scalar>
Matrix<Scalar> pair_kernel(const TabularMdp<Scalar>& mdp, const Matrix<Scalar>& pi) {
  const Index n = mdp.n_pairs();
  Matrix<Scalar> k(n, n);
  for (Index x = 0; x < n; ++x)
    for (Index sn = 0; sn < mdp.n_states; ++sn)
      for (Index an = 0; an < mdp.n_actions; ++an)
        k(x, mdp.pair(sn, an)) = mdp.transition(x, sn) * pi(sn, an);
  return k;
}

/// Pair distribution s ~ dist, a ~ pi(.|s).
template <typename Scalar>
Vector<Scalar> pair_distribution(const TabularMdp<Scalar>& mdp, const Matrix<Scalar>& pi,
                                 const Vector<Scalar>& state_dist) {
  Vector<Scalar> d(mdp.n_pairs());
  for (Index s = 0; s < mdp.n_states; ++s)
    for (Index a = 0; a < mdp.n_actions; ++a) d(mdp.pair(s, a)) = state_dist(s) * pi(s, a);
  return d;
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct Step {
  Index state = 0;
  Index action = 0;
  Scalar reward = 0;
};

template <typename Scalar = double>
struct Trajectory {
  std::vector<Step<Scalar>> steps;
  Index horizon() const { return static_cast<Index>(steps.size()); }
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> row_cdf(const Matrix<Scalar>& m) {
  Matrix<Scalar> c(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    Scalar acc = 0;
    for (Index j = 0; j < m.cols(); ++j) c(i, j) = (acc += m(i, j));
  }
  return c;
}

}  // namespace detail

/// Cached inverse-CDF tables for sampling one (MDP, policy) pair many times.
///
/// Every state, action and next-state draw consumes exactly one uniform, so
/// two samplers fed the same stream stay aligned draw for draw.
template <typename Scalar = double>
class TrajectorySampler {
 public:
  TrajectorySampler(const TabularMdp<Scalar>& mdp, const Matrix<Scalar>& pi)
      : n_actions_(mdp.n_actions),
        reward_(mdp.reward),
        rho0_cdf_(detail::row_cdf(Matrix<Scalar>(mdp.rho0.transpose()))),
        pi_cdf_(detail::row_cdf(pi)),
        p_cdf_(detail::row_cdf(mdp.transition)) {}

  TrajectorySampler(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy)
      : TrajectorySampler(mdp, policy_table(policy)) {}

  Index initial_state(Rng& rng) const { return sample_from_cdf(rho0_cdf_.row(0), rng.uniform()); }
  Index action(Index s, Rng& rng) const { return sample_from_cdf(pi_cdf_.row(s), rng.uniform()); }
  Index next_state(Index s, Index a, Rng& rng) const {
    return sample_from_cdf(p_cdf_.row(s * n_actions_ + a), rng.uniform());
  }

  Trajectory<Scalar> sample(Index horizon, Rng& rng) const {
    if (horizon < 1) throw ValidationError("trajectory horizon must be >= 1");
    Trajectory<Scalar> tr;
    tr.steps.reserve(static_cast<std::size_t>(horizon));
    Index s = initial_state(rng);
    for (Index k = 0; k < horizon; ++k) {
      const Index a = action(s, rng);
      tr.steps.push_back({s, a, reward_(s, a)});
      if (k + 1 < horizon) s = next_state(s, a, rng);
    }
    return tr;
  }

 private:
  Index n_actions_;
  Matrix<Scalar> reward_;
  Matrix<Scalar> rho0_cdf_;
  Matrix<Scalar> pi_cdf_;
  Matrix<Scalar> p_cdf_;
};

/// s0 ~ rho0, a_k ~ pi(.|s_k), s_{k+1} ~ P(.|s_k, a_k).
template <typename Scalar>
Trajectory<Scalar> sample_trajectory(const TabularMdp<Scalar>& mdp,
                                     const SoftmaxPolicy<Scalar>& policy, Index horizon,
                                     Rng& rng) {
  if (horizon < 1) throw ValidationError("trajectory horizon must be >= 1");
  return TrajectorySampler<Scalar>(mdp, policy).sample(horizon, rng);
}

// ---------------------------------------------------------------------------
// Distances and mixing
// ---------------------------------------------------------------------------

template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar tv_distance(const Eigen::MatrixBase<DerivedP>& p,
                                      const Eigen::MatrixBase<DerivedQ>& q) {
  if (p.size() != q.size())
    throw ValidationError("tv_distance: length mismatch (" + std::to_string(p.size()) + " vs " +
                          std::to_string(q.size()) + ")");
  return typename DerivedP::Scalar(0.5) * (p - q).cwiseAbs().sum();
}

/// Smallest t >= 0 with m r^t <= eps.
template <typename Scalar>
Index mixing_time(Scalar m, Scalar r, Scalar eps) {
  if (!(eps > 0)) throw ValidationError("mixing_time: eps must be positive");
  if (!(r > 0 && r < 1)) throw ValidationError("mixing_time: r must be in (0,1)");
  Index t = 0;
  while (m * std::pow(r, static_cast<Scalar>(t)) > eps) ++t;
  return t;
}

/// Support-graph ergodicity certificate for a stochastic matrix.
///
/// Throws ErgodicityError naming an unreachable pair (reducible) or the period.
template <typename Scalar>
void require_ergodic(const Matrix<Scalar>& kernel, Index n_actions) {
  const Index n = kernel.rows();
  auto name = [n_actions](Index x) {
    return "(s=" + std::to_string(x / n_actions) + ",a=" + std::to_string(x % n_actions) + ")";
  };
  auto bfs = [&](bool forward) {
    std::vector<Index> level(static_cast<std::size_t>(n), -1);
    std::queue<Index> q;
    level[0] = 0;
    q.push(0);
    while (!q.empty()) {
      const Index u = q.front();
      q.pop();
      for (Index v = 0; v < n; ++v) {
        const Scalar w = forward ? kernel(u, v) : kernel(v, u);
        if (w > 0 && level[static_cast<std::size_t>(v)] < 0) {
          level[static_cast<std::size_t>(v)] = level[static_cast<std::size_t>(u)] + 1;
          q.push(v);
        }
      }
    }
    return level;
  };
  const auto fwd = bfs(true);
  const auto bwd = bfs(false);
  for (Index x = 0; x < n; ++x) {
    if (fwd[static_cast<std::size_t>(x)] < 0)
      throw ErgodicityError("chain is reducible: pair " + name(x) + " unreachable from pair " +
                            name(0));
    if (bwd[static_cast<std::size_t>(x)] < 0)
      throw ErgodicityError("chain is reducible: pair " + name(0) + " unreachable from pair " +
                            name(x));
  }
  // Period = gcd over support edges of (level[u] + 1 - level[v]).
  Index period = 0;
  for (Index u = 0; u < n; ++u)
    for (Index v = 0; v < n; ++v)
      if (kernel(u, v) > 0) {
        const Index diff =
            fwd[static_cast<std::size_t>(u)] + 1 - fwd[static_cast<std::size_t>(v)];
        period = std::gcd(period, diff < 0 ? -diff : diff);
      }
  if (period != 1)
    throw ErgodicityError("chain is periodic with period " + std::to_string(period));
}

/// Left fixed vector of a stochastic matrix, normalized to sum 1.
template <typename Scalar>
Vector<Scalar> stationary_distribution(const Matrix<Scalar>& kernel) {
  const Index n = kernel.rows();
  Matrix<Scalar> sys(n + 1, n);
  sys.topRows(n) = kernel.transpose() - Matrix<Scalar>::Identity(n, n);
  sys.row(n).setOnes();
  Vector<Scalar> rhs = Vector<Scalar>::Zero(n + 1);
  rhs(n) = 1;
  Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(sys);
  Vector<Scalar> eta = qr.solve(rhs);
  const Scalar resid = (sys * eta - rhs).norm();
  if (qr.rank() < n || !(resid < Scalar(1e-10))) {
    // Power iteration fallback.
    eta = Vector<Scalar>::Constant(n, Scalar(1) / static_cast<Scalar>(n));
    for (int it = 0; it < 100000; ++it) {
      Vector<Scalar> next = kernel.transpose() * eta;
      const Scalar diff = (next - eta).cwiseAbs().sum();
      eta = next;
      if (diff < Scalar(1e-15)) break;
    }
  }
  return eta / eta.sum();
}

/// Mixing certificate: sup-over-starts TV to eta is <= m r^t on the window.
template <typename Scalar = double>
struct MixingEnvelope {
  Scalar m = 0;
  Scalar r = 0;
  std::vector<Scalar> sup_tv;  // measured sup TV for t = 0 .. window end
};

/// Exact sup-over-starts TV distance to eta for t = 0 .. t_max.
template <typename Scalar>
std::vector<Scalar> sup_tv_profile(const Matrix<Scalar>& kernel, const Vector<Scalar>& eta,
                                   Index t_max) {
  const Index n = kernel.rows();
  std::vector<Scalar> out;
  Matrix<Scalar> kt = Matrix<Scalar>::Identity(n, n);
  for (Index t = 0; t <= t_max; ++t) {
    Scalar sup = 0;
    for (Index x = 0; x < n; ++x) sup = std::max(sup, tv_distance(kt.row(x).transpose(), eta));
    out.push_back(sup);
    kt = kt * kernel;
  }
  return out;
}

/// Fits (m, r): r = max successive TV ratio (clipped into [1e-6, 1 - 1e-9]),
/// m = max TV_t / r^t. The window ends where TV reaches numerical floor.
template <typename Scalar>
MixingEnvelope<Scalar> fit_mixing_envelope(const Matrix<Scalar>& kernel, const Vector<Scalar>& eta,
                                           Index t_fit = 200) {
  const Scalar floor = Scalar(1e-12);
  auto prof = sup_tv_profile(kernel, eta, t_fit);
  std::size_t end = 1;
  while (end < prof.size() && prof[end - 1] >= floor) ++end;
  prof.resize(end);

  Scalar r = Scalar(1e-6);
  for (std::size_t t = 1; t < prof.size(); ++t)
    if (prof[t - 1] > 0) r = std::max(r, prof[t] / prof[t - 1]);
  r = std::min(r, Scalar(1) - Scalar(1e-9));

  Scalar m = 0;
  for (std::size_t t = 0; t < prof.size(); ++t)
    m = std::max(m, prof[t] / std::pow(r, static_cast<Scalar>(t)));
  return {m, r, std::move(prof)};
}

template <typename Scalar = double>
struct StateActionChain {
  Index n_states = 0;
  Index n_actions = 0;
  Matrix<Scalar> kernel;
  Vector<Scalar> stationary;
  Scalar mixing_m = 0;
  Scalar mixing_r = 0;
  std::vector<Scalar> sup_tv;

  Index mixing_time(Scalar eps) const { return bpg::mixing_time(mixing_m, mixing_r, eps); }
};

template <typename Scalar>
Index mixing_time(const StateActionChain<Scalar>& chain, Scalar eps) {
  return chain.mixing_time(eps);
}

/// Markov chain over pairs induced by a policy, certified ergodic.
template <typename Scalar>
StateActionChain<Scalar> induced_chain(const TabularMdp<Scalar>& mdp, const Matrix<Scalar>& pi,
                                       Index t_fit = 200) {
  StateActionChain<Scalar> c;
  c.n_states = mdp.n_states;
  c.n_actions = mdp.n_actions;
  c.kernel = pair_kernel(mdp, pi);
  require_ergodic(c.kernel, mdp.n_actions);
  c.stationary = stationary_distribution(c.kernel);
  for (Index x = 0; x < c.stationary.size(); ++x)
    if (!(c.stationary(x) > 0))
      throw ErgodicityError("stationary mass of pair (s=" + std::to_string(x / mdp.n_actions) +
                            ",a=" + std::to_string(x % mdp.n_actions) + ") is not positive");
  auto env = fit_mixing_envelope(c.kernel, c.stationary, t_fit);
  c.mixing_m = env.m;
  c.mixing_r = env.r;
  c.sup_tv = std::move(env.sup_tv);
  return c;
}

template <typename Scalar>
StateActionChain<Scalar> induced_chain(const TabularMdp<Scalar>& mdp,
                                       const SoftmaxPolicy<Scalar>& policy, Index t_fit = 200) {
  return induced_chain(mdp, policy_table(policy), t_fit);
}

/// Start pair with the slowest approach to stationarity (largest summed TV).
template <typename Scalar>
Index slowest_start_pair(const StateActionChain<Scalar>& chain) {
  const Index n = chain.kernel.rows();
  Vector<Scalar> acc = Vector<Scalar>::Zero(n);
  Matrix<Scalar> kt = Matrix<Scalar>::Identity(n, n);
  for (std::size_t t = 0; t < std::max<std::size_t>(chain.sup_tv.size(), 1); ++t) {
    for (Index x = 0; x < n; ++x) acc(x) += tv_distance(kt.row(x).transpose(), chain.stationary);
    kt = kt * chain.kernel;
  }
  Index best = 0;
  acc.maxCoeff(&best);
  return best;
}

}  // namespace bpg
