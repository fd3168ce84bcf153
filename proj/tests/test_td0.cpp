#include "bpg/instances.hpp"
#include "bpg/td0.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace bpg;

namespace {

Vector<double> random_vec(Rng& rng, Index n, double scale = 1.0) {
  Vector<double> v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

Vector<double> random_in_ball(Rng& rng, Index n, double radius) {
  Vector<double> v = random_vec(rng, n);
  return v * (radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(n)) / v.norm());
}

// Draws (x, x') with x ~ eta and x' from the pair kernel.
struct StationaryTuples {
  const TdProblem<double>& prob;
  Vector<double> eta_cdf;
  Matrix<double> kernel_cdf;

  explicit StationaryTuples(const TdProblem<double>& p)
      : prob(p), eta_cdf(p.chain.stationary.size()), kernel_cdf(p.chain.kernel) {
    std::partial_sum(p.chain.stationary.begin(), p.chain.stationary.end(), eta_cdf.begin());
    for (Index i = 0; i < kernel_cdf.rows(); ++i)
      for (Index j = 1; j < kernel_cdf.cols(); ++j) kernel_cdf(i, j) += kernel_cdf(i, j - 1);
  }

  PairTransition draw(Rng& rng) const {
    const Index na = prob.mdp.n_actions;
    const Index x = sample_from_cdf(eta_cdf, rng.uniform());
    const Index y = sample_from_cdf(Vector<double>(kernel_cdf.row(x).transpose()), rng.uniform());
    return {x / na, x % na, y / na, y % na};
  }
};

TdProblem<double> chain3_problem() {
  const auto in = chain3_instance<double>();
  return make_td_problem(in.mdp, in.policy(), in.critic_features);
}

}  // namespace

TEST(Semigradient, ZeroWeightIsRewardTimesFeature) {
  const auto prob = chain3_problem();
  const PairTransition tr{2, 1, 0, 1};
  const Vector<double> g = td_semigradient(Vector<double>(Vector<double>::Zero(3)), tr, prob.features, prob.mdp);
  EXPECT_TRUE(g.isApprox(prob.mdp.reward(2, 1) * prob.features.phi(2, 1)));
}

TEST(Semigradient, NormBoundedByF) {
  const auto prob = chain3_problem();
  EXPECT_DOUBLE_EQ(prob.F, prob.mdp.r_max + 2 * prob.radius);
  const StationaryTuples tuples(prob);
  Rng rng(41);
  double worst = 0;
  for (int i = 0; i < 100000; ++i) {
    const Vector<double> w = random_in_ball(rng, 3, prob.radius);
    PairTransition tr;
    if (i % 2) {
      tr = tuples.draw(rng);
    } else {
      tr = {static_cast<Index>(rng.uniform() * 3), static_cast<Index>(rng.uniform() * 2),
            static_cast<Index>(rng.uniform() * 3), static_cast<Index>(rng.uniform() * 2)};
    }
    worst = std::max(worst, td_semigradient(w, tr, prob.features, prob.mdp).norm());
  }
  EXPECT_LE(worst, prob.F);
}

TEST(ProjectBall, Examples) {
  Vector<double> w(2);
  w << 3, 4;
  const Vector<double> p = project_ball(w, 1.0);
  EXPECT_DOUBLE_EQ(p(0), 0.6);
  EXPECT_DOUBLE_EQ(p(1), 0.8);
  EXPECT_EQ(project_ball(w, 5.0), w);
  EXPECT_EQ(project_ball(w, 6.0), w);
  EXPECT_THROW(project_ball(w, 0.0), ValidationError);
}

TEST(ProjectBall, IdempotentAndNonexpansive) {
  Rng rng(42);
  for (int i = 0; i < 10000; ++i) {
    const Vector<double> u = random_vec(rng, 4, 3.0), v = random_vec(rng, 4, 3.0);
    const Vector<double> pu = project_ball(u, 2.0), pv = project_ball(v, 2.0);
    EXPECT_LE((pu - pv).norm(), (u - v).norm() + 1e-14);
    EXPECT_LE((project_ball(pu, 2.0) - pu).norm(), 1e-15);
  }
}

TEST(MeanSemigradient, LinearIdentity) {
  const auto prob = chain3_problem();
  EXPECT_LT(mean_semigradient(prob.w_star, prob.chain, prob.features, prob.mdp).norm(), 1e-10);
  EXPECT_LT((mean_semigradient(Vector<double>(Vector<double>::Zero(3)), prob.chain, prob.features, prob.mdp) -
             prob.system.b)
                .norm(),
            1e-14);
  Rng rng(43);
  for (int i = 0; i < 100; ++i) {
    const Vector<double> w = random_vec(rng, 3, 2.0);
    const Vector<double> expect = prob.system.b - prob.system.A * w;
    EXPECT_LT((mean_semigradient(w, prob.chain, prob.features, prob.mdp) - expect).norm(), 1e-10);
  }
}

TEST(MeanSemigradient, MatchesMonteCarlo) {
  const auto prob = chain3_problem();
  const StationaryTuples tuples(prob);
  Rng rng(44);
  const Vector<double> w = random_in_ball(rng, 3, prob.radius);
  const int n = 1000000;
  Vector<double> sum = Vector<double>::Zero(3), sum_sq = Vector<double>::Zero(3);
  for (int i = 0; i < n; ++i) {
    const Vector<double> g = td_semigradient(w, tuples.draw(rng), prob.features, prob.mdp);
    sum += g;
    sum_sq += g.cwiseProduct(g);
  }
  const Vector<double> mean = sum / n;
  const Vector<double> exact = mean_semigradient(w, prob.chain, prob.features, prob.mdp);
  for (Index j = 0; j < 3; ++j) {
    const double se = std::sqrt((sum_sq(j) / n - mean(j) * mean(j)) / n);
    EXPECT_LE(std::abs(mean(j) - exact(j)), 3 * se) << j;
  }
}

TEST(Zeta, VanishesAtFixedPoint) {
  const auto prob = chain3_problem();
  EXPECT_EQ(zeta(prob.w_star, PairTransition{1, 0, 2, 1}, prob.w_star, prob.chain, prob.features, prob.mdp), 0.0);
}

TEST(Zeta, CenteredUnderStationaryDraws) {
  const auto prob = chain3_problem();
  const StationaryTuples tuples(prob);
  Rng rng(45);
  const Vector<double> w = random_in_ball(rng, 3, prob.radius);
  const Vector<double> gbar = mean_semigradient(w, prob.chain, prob.features, prob.mdp);
  const Vector<double> dw = w - prob.w_star;
  const int n = 1000000;
  double sum = 0, sum_sq = 0;
  for (int i = 0; i < n; ++i) {
    const double z = (td_semigradient(w, tuples.draw(rng), prob.features, prob.mdp) - gbar).dot(dw);
    sum += z;
    sum_sq += z * z;
  }
  const double mean = sum / n;
  EXPECT_LE(std::abs(mean), 3 * std::sqrt((sum_sq / n - mean * mean) / n));
}

TEST(Zeta, BoundedAndLipschitz) {
  const auto prob = chain3_problem();
  const double F = prob.F;
  Rng rng(46);
  for (int i = 0; i < 10000; ++i) {
    const Vector<double> w1 = random_in_ball(rng, 3, prob.radius), w2 = random_in_ball(rng, 3, prob.radius);
    const PairTransition tr{static_cast<Index>(rng.uniform() * 3), static_cast<Index>(rng.uniform() * 2),
                            static_cast<Index>(rng.uniform() * 3), static_cast<Index>(rng.uniform() * 2)};
    const double z1 = zeta(w1, tr, prob.w_star, prob.chain, prob.features, prob.mdp);
    const double z2 = zeta(w2, tr, prob.w_star, prob.chain, prob.features, prob.mdp);
    EXPECT_LE(std::abs(z1), 2 * F * F);
    EXPECT_LE(std::abs(z1 - z2), 6 * F * (w1 - w2).norm() + 1e-12);
  }
}

TEST(StepSchedule, Values) {
  EXPECT_DOUBLE_EQ(StepSchedule<double>::inverse_sqrt(100).at(7), 0.1);
  const auto d = StepSchedule<double>::diminishing(0.5);
  EXPECT_DOUBLE_EQ(d.at(0), 2.0);
  EXPECT_DOUBLE_EQ(d.at(3), 0.5);
  EXPECT_THROW(StepSchedule<double>::diminishing(0.0), ValidationError);
  EXPECT_THROW(StepSchedule<double>::diminishing(-1.0), ValidationError);
}

TEST(RunTd0, SingleStepAveragesInitialIterate) {
  const auto prob = chain3_problem();
  Rng rng(47);
  const auto st = run_td0(prob, 1, StepSchedule<double>::constant(1.0), algorithm_start(prob), rng);
  EXPECT_EQ(st.w_bar.norm(), 0.0);
  ASSERT_EQ(st.per_step_sq_error.size(), 1u);
  EXPECT_NEAR(st.per_step_sq_error[0], prob.w_star.dot(prob.gram * prob.w_star), 1e-14);
  EXPECT_THROW(run_td0(prob, 0, StepSchedule<double>::constant(1.0), algorithm_start(prob), rng), ValidationError);
}

TEST(RunTd0, PathwiseInvariants) {
  const auto prob = chain3_problem();
  Rng rng(48);
  const auto st = run_td0(prob, 20000, StepSchedule<double>::inverse_sqrt(20000), algorithm_start(prob), rng);
  EXPECT_LE(st.max_w_norm, prob.radius * (1 + 1e-12));
  EXPECT_LE(st.max_g_norm, prob.F);
  EXPECT_LE(st.max_abs_zeta, 2 * prob.F * prob.F);
  for (double e : st.per_step_sq_error) EXPECT_GE(e, 0.0);
  EXPECT_LE(st.w_bar.norm(), prob.radius * (1 + 1e-12));
}

TEST(RunTd0, DeterministicGivenSeed) {
  const auto prob = chain3_problem();
  Rng a(49), b(49);
  const auto sa = run_td0(prob, 500, StepSchedule<double>::constant(0.05), algorithm_start(prob), a);
  const auto sb = run_td0(prob, 500, StepSchedule<double>::constant(0.05), algorithm_start(prob), b);
  EXPECT_EQ(sa.w_bar, sb.w_bar);
  EXPECT_EQ(sa.per_step_sq_error, sb.per_step_sq_error);
}

TEST(RunTd0, TabularLargeKBelowBound) {
  const auto in = chain3_instance<double>();
  const auto prob = make_td_problem(in.mdp, in.policy(), tabular_features<double>(3, 2));
  const Index K = 100000;
  TdRunOptions<double> opt;
  opt.record_per_step = false;
  Rng root(50);
  double mean = 0, bound = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng = root.child(static_cast<std::uint64_t>(seed));
    const auto st = run_td0(prob, K, StepSchedule<double>::inverse_sqrt(K), algorithm_start(prob), rng, opt);
    mean += st.final_sq_error / 20;
    bound = st.bound_value;
  }
  EXPECT_LT(mean, bound);
}

TEST(RunTd0, BothStartsBelowBound) {
  const auto prob = chain3_problem();
  const Vector<double> eta = prob.chain.stationary;
  const Vector<double> corner = point_mass<double>(6, slowest_start_pair(prob.chain));
  TdRunOptions<double> opt;
  opt.record_per_step = false;
  Rng root(51);
  for (Index K : {100, 1000}) {
    double e_stat = 0, e_point = 0, b_non = 0, b_stat = 0;
    for (int seed = 0; seed < 20; ++seed) {
      Rng r1 = root.child(static_cast<std::uint64_t>(seed)), r2 = r1;
      const auto s1 = run_td0(prob, K, StepSchedule<double>::inverse_sqrt(K), eta, r1, opt);
      const auto s2 = run_td0(prob, K, StepSchedule<double>::inverse_sqrt(K), corner, r2, opt);
      e_stat += s1.final_sq_error / 20;
      e_point += s2.final_sq_error / 20;
      b_non = s1.bound_value;
      b_stat = s1.stationary_bound_value;
    }
    EXPECT_LE(e_stat, b_stat) << K;
    EXPECT_LE(e_stat, b_non) << K;
    EXPECT_LE(e_point, b_non) << K;
  }
}

TEST(Theorem48Bound, WorkedExample) {
  EXPECT_NEAR(theorem48_bound<double>(100, 1.0, 2.0, 5, 1.0, 0.5, 0.5), 32.5, 1e-12);
}

TEST(Theorem48Bound, DoublingMDoublesOnlySecondTerm) {
  const double base = theorem48_bound<double>(100, 1.0, 2.0, 5, 1.0, 0.5, 0.5);
  const double doubled = theorem48_bound<double>(100, 1.0, 2.0, 5, 2.0, 0.5, 0.5);
  EXPECT_NEAR(doubled - base, 1.6, 1e-12);
}

TEST(Theorem48Bound, DecreasesInKWithFixedTau) {
  double prev = theorem48_bound<double>(10, 1.0, 2.0, 5, 1.0, 0.5, 0.5);
  for (Index k = 20; k <= 1000000; k *= 2) {
    const double b = theorem48_bound<double>(k, 1.0, 2.0, 5, 1.0, 0.5, 0.5);
    EXPECT_LT(b, prev);
    prev = b;
  }
  EXPECT_LT(prev, 0.5);
  EXPECT_LT(stationary_start_bound<double>(100, 1.0, 2.0, 5, 0.5), 30.9);
}

TEST(FourthMoment, EnvelopeFormula) {
  const double lk = std::log(1e4);
  const double expect = 192.0 * 4 / (0.25 * std::log(2.0) * std::log(2.0)) * lk * lk / 1e4;
  EXPECT_NEAR(fourth_moment_envelope(2.0, 1.0, 0.5, 0.5, 10000), expect, 1e-12);
  EXPECT_NEAR(fourth_moment_envelope(2.0, 1.0, 0.5, 0.5, 10000), 54.240, 5e-4);
}

TEST(FourthMoment, ZeroRewardIsZero) {
  auto in = chain3_instance<double>();
  in.mdp.reward.setZero();
  Rng rng(52);
  EXPECT_EQ(fourth_moment_estimate(in.mdp, in.policy(), in.critic_features, 500, 3, rng), 0.0);
}

TEST(FourthMoment, DecreasesWithKAndStaysBelowEnvelope) {
  const auto prob = chain3_problem();
  Rng r1(53), r2(53);
  const double m3 = fourth_moment_estimate(prob, 1000, 50, r1);
  const double m4 = fourth_moment_estimate(prob, 10000, 50, r2);
  EXPECT_LT(m4, m3);
  const double R = prob.radius;
  const double s = prob.system.lambda_min_sym;
  EXPECT_LT(m3, fourth_moment_envelope(prob.F, R, s, prob.chain.mixing_r, 1000));
  EXPECT_LT(m4, fourth_moment_envelope(prob.F, R, s, prob.chain.mixing_r, 10000));
}

TEST(Coupling, GapWithinMixingEnvelope) {
  TabularMdp<double> m;
  m.n_states = 2;
  m.n_actions = 1;
  m.transition.resize(2, 2);
  m.transition << 0.8, 0.2, 0.35, 0.65;
  m.reward = Matrix<double>::Zero(2, 1);
  m.rho0 = Vector<double>::Constant(2, 0.5);
  m.gamma = 0.9;
  m.r_max = 1;
  const auto chain = induced_chain(m, Matrix<double>(Matrix<double>::Ones(2, 1)));
  Rng rng(54);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix<double> v(2, 2);
    for (Index i = 0; i < 4; ++i) v(i) = 2 * rng.uniform() - 1;
    Vector<double> init(2);
    init(0) = rng.uniform();
    init(1) = 1 - init(0);
    for (Index tau = 0; tau <= 12; ++tau) {
      const double gap = coupling_gap(chain.kernel, init, trial % 5, tau, v);
      EXPECT_LE(gap, 4 * chain.mixing_m * std::pow(chain.mixing_r, static_cast<double>(tau)) + 1e-14);
    }
  }
}
