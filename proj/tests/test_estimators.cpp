#include "bpg/estimators.hpp"
#include "bpg/instances.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace bpg;

namespace {

Vector<double> random_vec(Rng& rng, Index n, double scale = 1.0) {
  Vector<double> v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

// Calls f(trajectory, probability) for every (state, action) path of length H.
void enumerate_paths(const TabularMdp<double>& m, const Matrix<double>& pi, Index H,
                     const std::function<void(const Trajectory<double>&, double)>& f) {
  Trajectory<double> tr;
  std::function<void(Index, double)> rec = [&](Index s, double prob) {
    for (Index a = 0; a < m.n_actions; ++a) {
      const double pa = prob * pi(s, a);
      if (pa == 0) continue;
      tr.steps.push_back({s, a, m.reward(s, a)});
      if (tr.horizon() == H) {
        f(tr, pa);
      } else {
        for (Index s2 = 0; s2 < m.n_states; ++s2) {
          const double p = m.transition(s * m.n_actions + a, s2);
          if (p > 0) rec(s2, pa * p);
        }
      }
      tr.steps.pop_back();
    }
  };
  for (Index s = 0; s < m.n_states; ++s)
    if (m.rho0(s) > 0) rec(s, m.rho0(s));
}

Instance<double> small_instance(std::uint64_t seed) {
  Rng rng(seed);
  auto in = random_instance<double>(rng, 2, 2, 0.8, 2, 3);
  in.theta0 = random_vec(rng, 2);
  return in;
}

}  // namespace

TEST(Gpomdp, SingleStep) {
  const auto in = chain3_instance<double>();
  const auto pol = in.policy(Vector<double>::Constant(3, 0.4));
  Trajectory<double> tr;
  tr.steps.push_back({2, 1, in.mdp.reward(2, 1)});
  EXPECT_TRUE(gpomdp(pol, tr, in.mdp.gamma).isApprox(score(pol, 2, 1) * in.mdp.reward(2, 1)));
  EXPECT_THROW(gpomdp(pol, Trajectory<double>{}, 0.9), ValidationError);
}

TEST(Gpomdp, ZeroRewardIsZero) {
  auto in = chain3_instance<double>();
  in.mdp.reward.setZero();
  Rng rng(61);
  const auto tr = sample_trajectory(in.mdp, in.policy(), 20, rng);
  EXPECT_EQ(gpomdp(in.policy(), tr, in.mdp.gamma).norm(), 0.0);
}

TEST(Gpomdp, EnumerationReproducesTruncatedGradient) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto in = small_instance(seed);
    const auto pol = in.policy();
    const Matrix<double> pi = policy_table(pol);
    for (Index H = 1; H <= 4; ++H) {
      Vector<double> mean = Vector<double>::Zero(2);
      double mass = 0;
      enumerate_paths(in.mdp, pi, H, [&](const Trajectory<double>& tr, double p) {
        mean += p * gpomdp(pol, tr, in.mdp.gamma);
        mass += p;
      });
      EXPECT_NEAR(mass, 1.0, 1e-12);
      EXPECT_LT((mean - truncated_gradient(in.mdp, pol, H)).norm(), 1e-10) << "H " << H;
    }
  }
}

TEST(Gpomdp, MonteCarloUnbiasedForTruncatedObjective) {
  const auto in = chain3_instance<double>();
  const auto pol = in.policy(Vector<double>::Constant(3, -0.5));
  const Index H = 10;
  const TrajectorySampler<double> sampler(in.mdp, pol);
  const Matrix<double> sc = score_table(pol);
  const int n = 200000;
  Vector<double> sum = Vector<double>::Zero(3), sum_sq = Vector<double>::Zero(3);
  Rng rng(62);
  for (int i = 0; i < n; ++i) {
    const Vector<double> g = gpomdp(sc, 2, sampler.sample(H, rng), in.mdp.gamma);
    sum += g;
    sum_sq += g.cwiseProduct(g);
  }
  const Vector<double> mean = sum / n;
  const Vector<double> exact = truncated_gradient(in.mdp, pol, H);
  for (Index j = 0; j < 3; ++j)
    EXPECT_LE(std::abs(mean(j) - exact(j)), 3 * std::sqrt((sum_sq(j) / n - mean(j) * mean(j)) / n)) << j;
}

TEST(AcEstimator, ZeroCriticAndSingleStep) {
  const auto in = chain3_instance<double>();
  const auto pol = in.policy(Vector<double>::Constant(3, 0.2));
  Rng rng(63);
  const auto tr = sample_trajectory(in.mdp, pol, 15, rng);
  EXPECT_EQ(ac_estimator(pol, tr, CriticW<double>{Vector<double>::Zero(3), 1.0}, in.critic_features, 0.8).norm(), 0.0);
  Trajectory<double> one;
  one.steps.push_back(tr.steps[0]);
  const Vector<double> w = random_vec(rng, 3);
  const Index s = one.steps[0].state, a = one.steps[0].action;
  EXPECT_TRUE(ac_estimator(pol, one, CriticW<double>{w, 10.0}, in.critic_features, 0.8)
                  .isApprox(w.dot(in.critic_features.phi(s, a)) * score(pol, s, a)));
}

TEST(AcEstimator, EnumerationMatchesCriticTruncatedGradient) {
  const auto in = small_instance(4);
  const auto pol = in.policy();
  const Matrix<double> pi = policy_table(pol);
  Rng rng(64);
  const Vector<double> w = random_vec(rng, 3);
  for (Index H = 1; H <= 4; ++H) {
    Vector<double> mean = Vector<double>::Zero(2);
    enumerate_paths(in.mdp, pi, H, [&](const Trajectory<double>& tr, double p) {
      mean += p * ac_estimator(pol, tr, CriticW<double>{w, 10.0}, in.critic_features, in.mdp.gamma);
    });
    EXPECT_LT((mean - critic_truncated_gradient(in.mdp, pol, in.critic_features, w, H)).norm(), 1e-12);
  }
}

TEST(Estimators, PathwiseNormBounds) {
  const auto in = chain3_instance<double>();
  const auto prob = make_td_problem(in.mdp, in.policy(), in.critic_features);
  const double G = policy_constants(in.policy()).G;
  const auto bv = bound_bundle(EstimatorKind::Vanilla, G, in.mdp.r_max, prob.radius, in.mdp.gamma, 0.01);
  const auto ba = bound_bundle(EstimatorKind::ActorCritic, G, in.mdp.r_max, prob.radius, in.mdp.gamma, 0.01);
  Rng rng(65);
  double worst_v = 0, worst_a = 0;
  for (int i = 0; i < 100000; ++i) {
    const auto pol = in.policy(random_vec(rng, 3, 2.0));
    Vector<double> w = random_vec(rng, 3);
    w *= prob.radius * rng.uniform() / w.norm();
    const auto tr = sample_trajectory(in.mdp, pol, 1 + static_cast<Index>(rng.uniform() * 40), rng);
    worst_v = std::max(worst_v, gpomdp(pol, tr, in.mdp.gamma).norm());
    worst_a = std::max(worst_a, ac_estimator(pol, tr, CriticW<double>{w, prob.radius}, in.critic_features,
                                             in.mdp.gamma)
                                    .norm());
  }
  EXPECT_LE(worst_v, bv.sigma);
  EXPECT_LE(worst_a, ba.sigma);
}

TEST(Estimators, NoiseMomentsWithinBounds) {
  const auto in = chain3_instance<double>();
  const auto pol = in.policy(Vector<double>::Constant(3, 0.3));
  const double sigma = bound_bundle(EstimatorKind::Vanilla, policy_constants(pol).G, in.mdp.r_max, 0.0,
                                    in.mdp.gamma, 0.01)
                           .sigma;
  const Index H = 30;
  const auto o = GradientOracle<double>::make(in.mdp, pol, H);
  const TrajectorySampler<double> sampler(in.mdp, pol);
  const int n = 100000;
  double m2 = 0, m2sq = 0, m4 = 0, m4sq = 0;
  Rng rng(66);
  for (int i = 0; i < n; ++i) {
    const auto gs = decompose_vanilla(o, gpomdp(o.scores, 2, sampler.sample(H, rng), in.mdp.gamma));
    const double x2 = gs.noise_xi.squaredNorm();
    m2 += x2;
    m2sq += x2 * x2;
    m4 += x2 * x2;
    m4sq += x2 * x2 * x2 * x2;
  }
  m2 /= n;
  m4 /= n;
  const double se2 = std::sqrt((m2sq / n - m2 * m2) / n), se4 = std::sqrt((m4sq / n - m4 * m4) / n);
  EXPECT_LE(m2, sigma * sigma + 3 * se2);
  EXPECT_LE(m4, 4 * std::pow(sigma, 4) + 3 * se4);
}

TEST(InnerLoop, SingleStepReturnsInitialCritic) {
  const auto in = chain3_instance<double>();
  const auto prob = make_td_problem(in.mdp, in.policy(), in.critic_features);
  Rng rng(67);
  const Vector<double> w0 = 0.3 * prob.w_star;
  const auto w = ac_inner_loop(prob, w0, 1, StepSchedule<double>::constant(1.0), rng);
  EXPECT_EQ(w.w, w0);
  EXPECT_EQ(w.radius, prob.radius);
}

TEST(InnerLoop, ZeroRewardStaysAtZero) {
  auto in = chain3_instance<double>();
  in.mdp.reward.setZero();
  Rng rng(68);
  const auto w = ac_inner_loop(in.mdp, in.policy(), in.critic_features, Vector<double>(Vector<double>::Zero(3)),
                               1000, StepSchedule<double>::constant(0.1), rng);
  EXPECT_EQ(w.w.norm(), 0.0);
}

TEST(InnerLoop, TabularCriticContracts) {
  const auto in = chain3_instance<double>();
  const auto prob = make_td_problem(in.mdp, in.policy(), tabular_features<double>(3, 2));
  const Vector<double> w0 = Vector<double>::Zero(6);
  const Index K = 100000;
  Rng root(69);
  double mean_dist = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng = root.child(static_cast<std::uint64_t>(seed));
    mean_dist += (ac_inner_loop(prob, w0, K, StepSchedule<double>::inverse_sqrt(K), rng).w - prob.w_star).norm() / 20;
  }
  EXPECT_LT(mean_dist, 0.1 * (w0 - prob.w_star).norm());
}

TEST(DecomposeVanilla, IdentityAndVanishingBias) {
  const auto in = chain3_instance<double>();
  const auto pol = in.policy(Vector<double>::Constant(3, 0.7));
  Index H = 1;
  while (std::pow(in.mdp.gamma, static_cast<double>(H)) >= 1e-14) ++H;
  Rng rng(70);
  const auto gs = decompose_vanilla(in.mdp, pol, sample_trajectory(in.mdp, pol, H, rng), H);
  EXPECT_LT((gs.g_hat - (gs.exact_grad + gs.noise_xi + gs.bias_d)).norm(), 1e-13);
  EXPECT_LT(gs.bias_d.norm(), 1e-10);
  EXPECT_FALSE(gs.bias_p.has_value());
  EXPECT_THROW(decompose_vanilla(in.mdp, pol, sample_trajectory(in.mdp, pol, 3, rng), 4), ValidationError);
}

TEST(DecomposeVanilla, NoiseHasZeroMean) {
  const auto in = chain3_instance<double>();
  const auto pol = in.policy(Vector<double>::Constant(3, 0.7));
  const Index H = 12;
  const auto o = GradientOracle<double>::make(in.mdp, pol, H);
  const TrajectorySampler<double> sampler(in.mdp, pol);
  const int n = 100000;
  Vector<double> sum = Vector<double>::Zero(3), sum_sq = Vector<double>::Zero(3);
  Rng rng(71);
  for (int i = 0; i < n; ++i) {
    const Vector<double> xi = decompose_vanilla(o, gpomdp(o.scores, 2, sampler.sample(H, rng), 0.8)).noise_xi;
    sum += xi;
    sum_sq += xi.cwiseProduct(xi);
  }
  const Vector<double> mean = sum / n;
  for (Index j = 0; j < 3; ++j)
    EXPECT_LE(std::abs(mean(j)), 3 * std::sqrt((sum_sq(j) / n - mean(j) * mean(j)) / n)) << j;
}

TEST(DecomposeVanilla, BiasWithinTruncationEnvelope) {
  Rng rng(72);
  for (double gamma : {0.5, 0.9}) {
    const auto in = random_instance<double>(rng, 3, 2, gamma, 2, 2);
    const auto pol = in.policy(random_vec(rng, 2, 1.5));
    const double D = bound_bundle(EstimatorKind::Vanilla, policy_constants(pol).G, in.mdp.r_max, 0.0, gamma, 0.1).D;
    for (Index H = 1; H <= 60; ++H) {
      const auto o = GradientOracle<double>::make(in.mdp, pol, H);
      EXPECT_LE(decompose_vanilla(o, o.truncated_grad).bias_d.norm(), truncation_bias_bound(D, gamma, H) + 1e-13);
    }
  }
}

TEST(DecomposeAc, PerfectTabularCriticHasNoCriticBias) {
  const auto in = chain3_instance<double>();
  const auto pol = in.policy(Vector<double>::Constant(3, -0.3));
  const auto fm = tabular_features<double>(3, 2);
  const Vector<double> ws = critic_fixed_point(in.mdp, pol, fm);
  const auto o = GradientOracle<double>::make(in.mdp, pol, 20);
  const auto gs = decompose_ac(o, o.critic_truncated(fm, ws), fm, ws);
  ASSERT_TRUE(gs.bias_q.has_value());
  EXPECT_LT(gs.bias_q->norm(), 1e-9);
}

TEST(DecomposeAc, AdditivityAndTruncationBound) {
  const auto in = chain3_instance<double>();
  const auto prob = make_td_problem(in.mdp, in.policy(), in.critic_features);
  const double G = policy_constants(in.policy()).G;
  Rng rng(73);
  for (int trial = 0; trial < 5; ++trial) {
    const auto pol = in.policy(random_vec(rng, 3));
    Vector<double> w = random_vec(rng, 3);
    w *= prob.radius * rng.uniform() / w.norm();
    for (Index H = 1; H <= 60; ++H) {
      const auto gs = decompose_ac(in.mdp, pol, sample_trajectory(in.mdp, pol, H, rng),
                                   CriticW<double>{w, prob.radius}, in.critic_features, H);
      EXPECT_LT((gs.bias_d - (*gs.bias_p + *gs.bias_q)).norm(), 1e-13);
      EXPECT_LT((gs.g_hat - (gs.exact_grad + gs.noise_xi + gs.bias_d)).norm(), 1e-12);
      EXPECT_LE(gs.bias_p->norm(),
                G * prob.radius / (1 - in.mdp.gamma) * std::pow(in.mdp.gamma, static_cast<double>(H)) + 1e-13);
    }
  }
}

// With Phi w* = Q, q = sum_s d(s) sum_a pi score Phi (w - w*) and d has mass 1/(1-gamma).
TEST(DecomposeAc, CriticBiasControlledByWeightError) {
  const auto in = chain3_instance<double>();
  const auto fm = tabular_features<double>(3, 2);
  Rng rng(74);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pol = in.policy(random_vec(rng, 3, 2.0));
    const double G = policy_constants(pol).G;
    const Vector<double> ws = critic_fixed_point(in.mdp, pol, fm);
    const Vector<double> w = ws + random_vec(rng, 6, 0.5);
    const auto o = GradientOracle<double>::make(in.mdp, pol, 10);
    const auto gs = decompose_ac(o, o.critic_truncated(fm, w), fm, w);
    EXPECT_LE(gs.bias_q->norm(), G * (w - ws).norm() / (1 - in.mdp.gamma) + 1e-12);
  }
}

TEST(HorizonForMu, Examples) {
  EXPECT_EQ(horizon_for_mu(0.1, 0.9), 41);
  EXPECT_GT(std::sqrt(10.0 + 40) * std::pow(0.9, 40), 0.1);
  EXPECT_LE(std::sqrt(10.0 + 41) * std::pow(0.9, 41), 0.1);
  EXPECT_EQ(horizon_for_mu(0.99, 0.5), 1);
  EXPECT_THROW(horizon_for_mu(1.0, 0.5), ValidationError);
  EXPECT_THROW(horizon_for_mu(0.0, 0.5), ValidationError);
}

TEST(HorizonForMu, Minimality) {
  Rng rng(75);
  for (int i = 0; i < 200; ++i) {
    const double gamma = 0.05 + 0.9 * rng.uniform();
    const double mu = std::pow(10.0, -4 * rng.uniform());
    const Index H = horizon_for_mu(mu, gamma);
    const auto lhs = [&](Index h) { return std::sqrt(1 / (1 - gamma) + static_cast<double>(h)) * std::pow(gamma, static_cast<double>(h)); };
    EXPECT_LE(lhs(H), mu);
    if (H > 1) EXPECT_GT(lhs(H - 1), mu);
  }
}

TEST(InnerSteps, Formula) {
  const double l = std::log(std::pow(0.5, -4.0));
  EXPECT_EQ(inner_steps_for_mu(0.5), static_cast<Index>(std::ceil(l * l * 16)));
  EXPECT_EQ(ac_horizon_for_mu(0.1, 0.5), 4);
}

TEST(BoundBundle, Examples) {
  const auto v = bound_bundle(EstimatorKind::Vanilla, 2.0, 1.0, 0.0, 0.9, 0.1);
  EXPECT_NEAR(v.sigma, 200.0, 1e-10);
  EXPECT_NEAR(v.D, 20.0, 1e-12);
  EXPECT_EQ(v.H_required, 41);
  const auto a = bound_bundle(EstimatorKind::ActorCritic, 1.0, 1.0, 1.0, 0.5, 0.1);
  EXPECT_DOUBLE_EQ(a.sigma, 2.0);
  EXPECT_DOUBLE_EQ(a.D_p, 2.0);
  EXPECT_DOUBLE_EQ(a.D, 4.0);
  EXPECT_NEAR(bound_bundle(EstimatorKind::Vanilla, 1.5, 2.0, 0.0, 1e-12, 0.1).sigma, 3.0, 1e-9);
}

TEST(BoundBundle, CriticTermUsesFourthRoot) {
  const CriticMixing<double> mix{2.0, 0.5, 0.5};
  const auto b = bound_bundle(EstimatorKind::ActorCritic, 1.0, 1.0, 1.0, 0.5, 0.1, std::optional(mix));
  const double c = 192.0 * 4 / (0.25 * std::log(2.0) * std::log(2.0));
  EXPECT_NEAR(b.D_q, std::pow(c, 0.25), 1e-12);
  EXPECT_NEAR(b.D, 2 * std::pow(std::pow(2.0, 4) + c, 0.25), 1e-10);
}
