#pragma once

#include "bpg/core.hpp"
#include "bpg/mdp.hpp"
#include "bpg/policy.hpp"
#include "bpg/rng.hpp"

#include <string>

namespace bpg {

/// An MDP bundled with its policy features, critic features and start theta.
template <typename Scalar = double>
struct Instance {
  std::string name;
  TabularMdp<Scalar> mdp;
  FeatureMap<Scalar> policy_features;
  FeatureMap<Scalar> critic_features;
  Vector<Scalar> theta0;

  SoftmaxPolicy<Scalar> policy() const { return {theta0, policy_features}; }
  SoftmaxPolicy<Scalar> policy(const Vector<Scalar>& theta) const {
    return {theta, policy_features};
  }
};

namespace detail {

template <typename Scalar>
FeatureMap<Scalar> feature_map(Index n_states, Index n_actions, Matrix<Scalar> table) {
  return FeatureMap<Scalar>{n_states, n_actions, std::move(table)};
}

/// phi(s, a) = +-scale e_s: theta_s is the logit gap between the two actions.
template <typename Scalar>
FeatureMap<Scalar> signed_state_features(Index n_states, Scalar scale) {
  Matrix<Scalar> t = Matrix<Scalar>::Zero(2 * n_states, n_states);
  for (Index s = 0; s < n_states; ++s) {
    t(2 * s, s) = scale;
    t(2 * s + 1, s) = -scale;
  }
  return feature_map<Scalar>(n_states, 2, std::move(t));
}

}  // namespace detail

/// Three states, two actions, every transition row strictly positive.
template <typename Scalar = double>
Instance<Scalar> chain3_instance() {
  Instance<Scalar> in;
  in.name = "chain3";
  auto& m = in.mdp;
  m.n_states = 3;
  m.n_actions = 2;
  m.gamma = Scalar(0.8);
  m.transition.resize(6, 3);
  m.transition << 0.7, 0.2, 0.1,  //
      0.1, 0.6, 0.3,              //
      0.3, 0.5, 0.2,              //
      0.2, 0.1, 0.7,              //
      0.5, 0.1, 0.4,              //
      0.1, 0.3, 0.6;
  m.reward.resize(3, 2);
  m.reward << 1.0, 0.0,  //
      0.0, 0.5,          //
      -0.5, 1.0;
  m.rho0.resize(3);
  m.rho0 << 0.5, 0.3, 0.2;
  m.r_max = 1;
  in.policy_features = detail::signed_state_features<Scalar>(3, Scalar(0.5));
  Matrix<Scalar> c(6, 3);
  c << 1.0, 0.0, 0.0,  //
      0.6, 0.8, 0.0,   //
      0.0, 1.0, 0.0,   //
      0.0, 0.6, 0.8,   //
      0.0, 0.0, 1.0,   //
      0.8, 0.0, 0.6;
  in.critic_features = detail::feature_map<Scalar>(3, 2, std::move(c));
  in.theta0 = Vector<Scalar>::Zero(3);
  return in;
}

/// One state, two actions with identical reward: J = reward / (1 - gamma).
template <typename Scalar = double>
Instance<Scalar> one_state_instance(Scalar reward = 1, Scalar gamma = Scalar(0.9)) {
  Instance<Scalar> in;
  in.name = "one_state";
  auto& m = in.mdp;
  m.n_states = 1;
  m.n_actions = 2;
  m.gamma = gamma;
  m.transition = Matrix<Scalar>::Ones(2, 1);
  m.reward = Matrix<Scalar>::Constant(1, 2, reward);
  m.rho0 = Vector<Scalar>::Ones(1);
  m.r_max = std::abs(reward);
  in.policy_features = detail::signed_state_features<Scalar>(1, Scalar(0.5));
  in.critic_features = tabular_features<Scalar>(1, 2);
  in.theta0 = Vector<Scalar>::Zero(1);
  return in;
}

/// Two-stage symmetric bandit. The first choice picks state 1 or 2, the second
/// choice (shared parameter) pays +-1 with opposite signs in the two states,
/// then the process returns to state 0. J = gamma / (1 - gamma^2) *
/// tanh(theta_1 / 2) tanh(theta_2 / 2), so theta = 0 is a saddle.
template <typename Scalar = double>
Instance<Scalar> saddle_instance(Scalar gamma = Scalar(0.5)) {
  Instance<Scalar> in;
  in.name = "saddle";
  auto& m = in.mdp;
  m.n_states = 3;
  m.n_actions = 2;
  m.gamma = gamma;
  m.transition = Matrix<Scalar>::Zero(6, 3);
  m.transition(0, 1) = 1;
  m.transition(1, 2) = 1;
  for (Index x = 2; x < 6; ++x) m.transition(x, 0) = 1;
  m.reward.resize(3, 2);
  m.reward << 0, 0,  //
      1, -1,         //
      -1, 1;
  m.rho0 = Vector<Scalar>::Zero(3);
  m.rho0(0) = 1;
  m.r_max = 1;
  Matrix<Scalar> p = Matrix<Scalar>::Zero(6, 2);
  p(0, 0) = 0.5;
  p(1, 0) = -0.5;
  for (Index s = 1; s < 3; ++s) {
    p(2 * s, 1) = 0.5;
    p(2 * s + 1, 1) = -0.5;
  }
  in.policy_features = detail::feature_map<Scalar>(3, 2, std::move(p));
  in.critic_features = tabular_features<Scalar>(3, 2);
  in.theta0 = Vector<Scalar>::Zero(2);
  return in;
}

/// Deterministic two-state MDP: action a moves from s to (s + a) mod 2.
template <typename Scalar = double>
Instance<Scalar> deterministic_instance() {
  Instance<Scalar> in;
  in.name = "deterministic";
  auto& m = in.mdp;
  m.n_states = 2;
  m.n_actions = 2;
  m.gamma = Scalar(0.9);
  m.transition.resize(4, 2);
  m.transition << 1, 0,  //
      0, 1,              //
      0, 1,              //
      1, 0;
  m.reward.resize(2, 2);
  m.reward << 0.2, 1.0,  //
      0.5, -0.3;
  m.rho0.resize(2);
  m.rho0 << 1, 0;
  m.r_max = 1;
  in.policy_features = detail::signed_state_features<Scalar>(2, Scalar(0.5));
  in.critic_features = tabular_features<Scalar>(2, 2);
  in.theta0 = Vector<Scalar>::Zero(2);
  return in;
}

/// Random instance with strictly positive transitions, rewards in [-1, 1],
/// policy features of norm <= 0.5 and critic features of norm <= 1.
template <typename Scalar = double>
Instance<Scalar> random_instance(Rng& rng, Index n_states, Index n_actions, Scalar gamma,
                                 Index policy_dim, Index critic_dim) {
  if (n_states < 1 || n_actions < 1 || policy_dim < 1 || critic_dim < 1)
    throw ValidationError("random_instance: sizes must be positive");
  if (critic_dim > n_states * n_actions)
    throw ValidationError("random_instance: critic_dim exceeds the number of pairs");
  Instance<Scalar> in;
  in.name = "random";
  auto& m = in.mdp;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  const Index n = n_states * n_actions;
  m.transition.resize(n, n_states);
  for (Index x = 0; x < n; ++x) {
    for (Index s = 0; s < n_states; ++s) m.transition(x, s) = Scalar(0.05 + rng.uniform());
    m.transition.row(x) /= m.transition.row(x).sum();
  }
  m.reward.resize(n_states, n_actions);
  for (Index s = 0; s < n_states; ++s)
    for (Index a = 0; a < n_actions; ++a) m.reward(s, a) = Scalar(2 * rng.uniform() - 1);
  m.rho0.resize(n_states);
  for (Index s = 0; s < n_states; ++s) m.rho0(s) = Scalar(0.05 + rng.uniform());
  m.rho0 /= m.rho0.sum();
  infer_r_max(m);

  auto random_rows = [&](Index dim, Scalar max_norm) {
    Matrix<Scalar> t(n, dim);
    for (Index x = 0; x < n; ++x) {
      for (Index j = 0; j < dim; ++j) t(x, j) = Scalar(rng.normal());
      const Scalar len = Scalar(0.2 + 0.8 * rng.uniform()) * max_norm;
      t.row(x) *= len / t.row(x).norm();
    }
    return t;
  };
  in.policy_features = detail::feature_map<Scalar>(n_states, n_actions,
                                                   random_rows(policy_dim, Scalar(0.5)));
  in.critic_features = detail::feature_map<Scalar>(n_states, n_actions,
                                                   random_rows(critic_dim, Scalar(1)));
  in.theta0 = Vector<Scalar>::Zero(policy_dim);
  for (Index j = 0; j < policy_dim; ++j) in.theta0(j) = Scalar(rng.normal());
  return in;
}

}  // namespace bpg
