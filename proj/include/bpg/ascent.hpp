#pragma once

#include "bpg/core.hpp"
#include "bpg/estimators.hpp"
#include "bpg/instances.hpp"
#include "bpg/mdp.hpp"
#include "bpg/oracle.hpp"
#include "bpg/policy.hpp"
#include "bpg/rng.hpp"
#include "bpg/td0.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bpg {

/// Instance plus every constant derived from it once.
template <typename Scalar = double>
struct Lab {
  Instance<Scalar> inst;
  PolicyConstants<Scalar> pc;
  SmoothnessConstants<Scalar> sc;

  static Lab make(Instance<Scalar> in) {
    require_valid(in.mdp);
    Lab lab;
    lab.inst = std::move(in);
    lab.pc = policy_constants(lab.inst.policy());
    lab.sc = smoothness_constants(lab.inst.mdp.r_max, lab.pc.G, lab.pc.B, lab.pc.iota,
                                  lab.inst.mdp.gamma);
    return lab;
  }

  const TabularMdp<Scalar>& mdp() const { return inst.mdp; }
  Index dim() const { return inst.policy_features.dim(); }
  Scalar j_bound() const { return inst.mdp.r_max / (Scalar(1) - inst.mdp.gamma); }
};

/// Step sizes for the critic inner loop.
enum class CriticStep { InverseSqrt, Diminishing, Constant };

template <typename Scalar = double>
struct RunConfig {
  EstimatorKind estimator = EstimatorKind::Vanilla;
  Scalar mu = Scalar(1e-3);
  Index T = 100;
  std::optional<Index> H;  // empty: derived from mu
  Index K = 1000;
  CriticStep critic_step = CriticStep::InverseSqrt;
  Scalar critic_alpha = Scalar(0.1);  // used by CriticStep::Constant
  std::optional<Scalar> critic_radius;
  bool warm_start = true;
  Scalar delta = 1;
  Scalar omega = Scalar(0.1);
  std::vector<std::uint64_t> seeds{0};
  Index batch = 1;
  std::optional<Vector<Scalar>> theta0;  // empty: the instance's theta0
  Scalar inject_noise = 0;              // variance of isotropic noise added to each estimate
  Index hessian_every = 50;
};

/// Every invalid field, or empty.
template <typename Scalar>
std::vector<std::string> config_errors(const Lab<Scalar>& lab, const RunConfig<Scalar>& c) {
  std::vector<std::string> e;
  const Scalar inv_l = Scalar(1) / lab.sc.L;
  if (!(c.mu >= 0)) e.push_back("mu must be >= 0, got " + detail::num(c.mu));
  else if (!(c.mu < inv_l))
    e.push_back("mu = " + detail::num(c.mu) + " must be below 1/L = " + detail::num(inv_l));
  if (c.T < 0) e.push_back("T must be >= 0");
  if (c.H && *c.H < 1) e.push_back("H must be >= 1");
  if (!c.H && c.estimator != EstimatorKind::Exact && !(c.mu > 0 && c.mu < 1))
    e.push_back("H = auto needs mu in (0,1)");
  if (c.estimator == EstimatorKind::ActorCritic) {
    if (c.K < 1) e.push_back("K must be >= 1");
    if (c.critic_step == CriticStep::Constant && !(c.critic_alpha > 0))
      e.push_back("critic_alpha must be positive");
    if (c.critic_radius && !(*c.critic_radius > 0)) e.push_back("critic_radius must be positive");
  }
  if (!(c.delta > 0)) e.push_back("delta must be positive");
  if (!(c.omega > 0)) e.push_back("omega must be positive");
  if (c.seeds.empty()) e.push_back("seeds must be nonempty");
  if (c.batch < 1) e.push_back("batch must be >= 1");
  if (c.theta0 && c.theta0->size() != lab.dim())
    e.push_back("theta0 has dimension " + std::to_string(c.theta0->size()) + ", expected " +
                std::to_string(lab.dim()));
  if (!(c.inject_noise >= 0)) e.push_back("inject_noise must be >= 0");
  if (c.hessian_every < 1) e.push_back("hessian_every must be >= 1");
  return e;
}

template <typename Scalar>
void validate_config(const Lab<Scalar>& lab, const RunConfig<Scalar>& c) {
  const auto e = config_errors(lab, c);
  if (e.empty()) return;
  std::string msg = "invalid run config:";
  for (const auto& s : e) msg += "\n  " + s;
  throw ValidationError(msg);
}

/// sigma and D for the configured estimator. The exact-gradient control uses
/// the vanilla constants so regions and margins match the noisy runs.
template <typename Scalar>
BoundBundle<Scalar> run_bounds(const Lab<Scalar>& lab, const RunConfig<Scalar>& c,
                               Scalar critic_radius = 0) {
  const auto& m = lab.mdp();
  const auto kind =
      c.estimator == EstimatorKind::ActorCritic ? EstimatorKind::ActorCritic : EstimatorKind::Vanilla;
  return bound_bundle(kind, lab.pc.G, m.r_max, critic_radius, m.gamma, c.mu);
}

template <typename Scalar>
RegionThresholds<Scalar> run_thresholds(const Lab<Scalar>& lab, const RunConfig<Scalar>& c,
                                        Scalar critic_radius = 0) {
  const auto b = run_bounds(lab, c, critic_radius);
  return {c.mu, default_ell(lab.sc.L, b.sigma, b.D, c.mu), c.delta, c.omega};
}

/// mu^2 (L sigma^2 + D^2 mu), the scale of the one-step ascent guarantees.
template <typename Scalar>
Scalar ascent_scale(Scalar L, Scalar sigma, Scalar D, Scalar mu) {
  return mu * mu * (L * sigma * sigma + D * D * mu);
}

// ---------------------------------------------------------------------------
// One gradient step
// ---------------------------------------------------------------------------

/// Independent random streams for one run.
struct RunStreams {
  Rng actor;
  Rng critic;
  Rng noise;

  explicit RunStreams(const Rng& root) : actor(root.child(1)), critic(root.child(2)), noise(root.child(3)) {}
  explicit RunStreams(std::uint64_t seed) : RunStreams(Rng(seed)) {}
};

/// Draws one estimate and its decomposition against the exact oracle.
template <typename Scalar = double>
class GradientStepper {
 public:
  GradientStepper(const Lab<Scalar>& lab, const RunConfig<Scalar>& cfg) : lab_(lab), cfg_(cfg) {
    validate_config(lab, cfg);
    const auto& m = lab.mdp();
    switch (cfg.estimator) {
      case EstimatorKind::Vanilla:
        horizon_ = cfg.H ? *cfg.H : horizon_for_mu(cfg.mu, m.gamma);
        break;
      case EstimatorKind::ActorCritic:
        horizon_ = cfg.H ? *cfg.H : ac_horizon_for_mu(cfg.mu, m.gamma);
        radius_ = cfg.critic_radius
                      ? *cfg.critic_radius
                      : make_td_problem(m, lab.inst.policy(theta0()), lab.inst.critic_features).radius;
        break;
      case EstimatorKind::Exact:
        horizon_ = cfg.H ? *cfg.H : 1;
        break;
    }
    thresholds_ = run_thresholds(lab, cfg, radius_);
    bounds_ = run_bounds(lab, cfg, radius_);
  }

  Vector<Scalar> theta0() const { return cfg_.theta0 ? *cfg_.theta0 : lab_.inst.theta0; }
  Index horizon() const { return horizon_; }
  Scalar critic_radius() const { return radius_; }
  const RegionThresholds<Scalar>& thresholds() const { return thresholds_; }
  const BoundBundle<Scalar>& bounds() const { return bounds_; }

  struct Result {
    GradSample<Scalar> sample;
    GradientOracle<Scalar> oracle;
    std::optional<CriticW<Scalar>> critic;
  };

  /// `warm` carries the previous critic between calls when warm starts are on.
  Result step(const Vector<Scalar>& theta, RunStreams& rs,
              std::optional<Vector<Scalar>>* warm = nullptr) const {
    const auto& m = lab_.mdp();
    const auto policy = lab_.inst.policy(theta);
    Result res{{}, GradientOracle<Scalar>::make(m, policy, horizon_), std::nullopt};
    const auto& o = res.oracle;
    const Scalar nb = static_cast<Scalar>(cfg_.batch);
    switch (cfg_.estimator) {
      case EstimatorKind::Vanilla: {
        const TrajectorySampler<Scalar> ts(m, o.pi);
        Vector<Scalar> g = Vector<Scalar>::Zero(theta.size());
        for (Index b = 0; b < cfg_.batch; ++b)
          g += gpomdp(o.scores, m.n_actions, ts.sample(horizon_, rs.actor), m.gamma);
        res.sample = decompose_vanilla(o, Vector<Scalar>(g / nb));
        break;
      }
      case EstimatorKind::ActorCritic: {
        const auto& cf = lab_.inst.critic_features;
        const auto prob = make_td_problem(m, policy, cf, std::optional<Scalar>(radius_));
        Vector<Scalar> w0 = Vector<Scalar>::Zero(cf.dim());
        if (cfg_.warm_start && warm && *warm) w0 = **warm;
        const auto w_bar = ac_inner_loop(prob, w0, cfg_.K, critic_schedule(prob), rs.critic);
        if (warm) *warm = w_bar.w;
        const TrajectorySampler<Scalar> ts(m, o.pi);
        Vector<Scalar> g = Vector<Scalar>::Zero(theta.size());
        for (Index b = 0; b < cfg_.batch; ++b)
          g += ac_estimator(o.scores, m.n_actions, ts.sample(horizon_, rs.actor), w_bar.w, cf,
                            m.gamma);
        res.sample = decompose_ac(o, Vector<Scalar>(g / nb), cf, w_bar.w);
        res.critic = w_bar;
        break;
      }
      case EstimatorKind::Exact: {
        auto& gs = res.sample;
        gs.g_hat = o.exact_grad;
        gs.exact_grad = o.exact_grad;
        gs.mean_est = o.exact_grad;
        gs.noise_xi = Vector<Scalar>::Zero(theta.size());
        gs.bias_d = Vector<Scalar>::Zero(theta.size());
        break;
      }
    }
    if (cfg_.inject_noise > 0) {
      const Scalar sd = std::sqrt(cfg_.inject_noise);
      Vector<Scalar> z(theta.size());
      for (Index j = 0; j < z.size(); ++j) z(j) = sd * Scalar(rs.noise.normal());
      res.sample.g_hat += z;
      res.sample.noise_xi += z;
    }
    return res;
  }

  StepSchedule<Scalar> critic_schedule(const TdProblem<Scalar>& prob) const {
    switch (cfg_.critic_step) {
      case CriticStep::InverseSqrt: return StepSchedule<Scalar>::inverse_sqrt(cfg_.K);
      case CriticStep::Diminishing:
        return StepSchedule<Scalar>::diminishing(prob.system.lambda_min_sym);
      case CriticStep::Constant: return StepSchedule<Scalar>::constant(cfg_.critic_alpha);
    }
    return StepSchedule<Scalar>::inverse_sqrt(cfg_.K);
  }

  /// Region from exact quantities at theta.
  StationarityReport<Scalar> report(const Vector<Scalar>& theta) const {
    const auto policy = lab_.inst.policy(theta);
    StationarityReport<Scalar> rep;
    rep.thresholds = thresholds_;
    rep.grad_norm = exact_gradient(lab_.mdp(), policy).norm();
    rep.hessian_top_eig = top_eigenvalue(hessian(lab_.mdp(), policy));
    rep.region = classify_values(rep.grad_norm, rep.hessian_top_eig, thresholds_);
    return rep;
  }

 private:
  const Lab<Scalar>& lab_;
  RunConfig<Scalar> cfg_;
  Index horizon_ = 1;
  Scalar radius_ = 0;
  RegionThresholds<Scalar> thresholds_;
  BoundBundle<Scalar> bounds_;
};

template <typename Scalar>
std::string describe(const StationarityReport<Scalar>& r) {
  return std::string("region ") + region_name(r.region) + " (||grad J|| = " +
         detail::num(r.grad_norm) + ", top Hessian eigenvalue = " + detail::num(r.hessian_top_eig) +
         ", gradient threshold = " + detail::num(std::sqrt(r.thresholds.gradient_sq_threshold())) +
         ", omega = " + detail::num(r.thresholds.omega) + ")";
}

// ---------------------------------------------------------------------------
// Outer loop
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct IterationRecord {
  Index t = 0;
  Vector<Scalar> theta;
  Scalar J = 0;
  Scalar grad_norm = 0;
  std::optional<Scalar> top_eig;  // only on Hessian-cadence iterations
  std::optional<Region> region;   // likewise; otherwise unlabeled
  Scalar xi_norm = 0;
  Scalar d_norm = 0;
  std::optional<Scalar> p_norm;
  std::optional<Scalar> q_norm;
  GradSample<Scalar> sample;
};

template <typename Scalar = double>
struct RunLog {
  Index run_id = 0;
  std::uint64_t seed = 0;
  EstimatorKind estimator = EstimatorKind::Vanilla;
  Scalar mu = 0;
  Index H = 1;
  Index K = 0;
  RegionThresholds<Scalar> thresholds;
  Scalar j_bound = 0;
  std::vector<IterationRecord<Scalar>> records;
  Vector<Scalar> theta_final;
  Scalar J_final = 0;
  Scalar grad_norm_final = 0;
  std::uint64_t actor_key = 0;
  std::uint64_t critic_key = 0;
  std::uint64_t noise_key = 0;
};

template <typename Scalar>
RunLog<Scalar> run_one(const Lab<Scalar>& lab, const RunConfig<Scalar>& cfg, std::uint64_t seed,
                       Index run_id = 0) {
  const GradientStepper<Scalar> stepper(lab, cfg);
  RunLog<Scalar> log;
  log.run_id = run_id;
  log.seed = seed;
  log.estimator = cfg.estimator;
  log.mu = cfg.mu;
  log.H = stepper.horizon();
  log.K = cfg.estimator == EstimatorKind::ActorCritic ? cfg.K : 0;
  log.thresholds = stepper.thresholds();
  log.j_bound = lab.j_bound();

  RunStreams rs(seed);
  log.actor_key = rs.actor.key();
  log.critic_key = rs.critic.key();
  log.noise_key = rs.noise.key();

  Vector<Scalar> theta = stepper.theta0();
  std::optional<Vector<Scalar>> warm;
  log.records.reserve(static_cast<std::size_t>(cfg.T));
  for (Index t = 0; t < cfg.T; ++t) {
    auto res = stepper.step(theta, rs, &warm);
    IterationRecord<Scalar> rec;
    rec.t = t;
    rec.theta = theta;
    rec.J = res.oracle.J;
    rec.grad_norm = res.oracle.exact_grad.norm();
    if (t % cfg.hessian_every == 0 || t + 1 == cfg.T) {
      rec.top_eig = top_eigenvalue(hessian(lab.mdp(), lab.inst.policy(theta)));
      rec.region = classify_values(rec.grad_norm, *rec.top_eig, log.thresholds);
    }
    rec.xi_norm = res.sample.noise_xi.norm();
    rec.d_norm = res.sample.bias_d.norm();
    if (res.sample.bias_p) rec.p_norm = res.sample.bias_p->norm();
    if (res.sample.bias_q) rec.q_norm = res.sample.bias_q->norm();
    theta = theta + cfg.mu * res.sample.g_hat;
    rec.sample = std::move(res.sample);
    log.records.push_back(std::move(rec));
    if (!theta.allFinite())
      throw Error("divergence at iteration " + std::to_string(t) + ": theta is not finite (mu = " +
                  detail::num(cfg.mu) + ", last ||G_hat|| = " +
                  detail::num(log.records.back().sample.g_hat.norm()) + ")");
  }
  log.theta_final = theta;
  const auto policy = lab.inst.policy(theta);
  log.J_final = objective(lab.mdp(), policy);
  log.grad_norm_final = exact_gradient(lab.mdp(), policy).norm();
  return log;
}

/// One run per configured seed, in seed-list order.
template <typename Scalar>
std::vector<RunLog<Scalar>> run(const Lab<Scalar>& lab, const RunConfig<Scalar>& cfg) {
  validate_config(lab, cfg);
  std::vector<RunLog<Scalar>> out;
  out.reserve(cfg.seeds.size());
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
    out.push_back(run_one(lab, cfg, cfg.seeds[i], static_cast<Index>(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Budget
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct IterationBudget {
  Scalar T_budget = 0;
  Scalar script_T = 0;
};

/// script_T = ln(2 M sigma^2 / sigma_l^2 + 1) / ln(1 + 2 mu omega) and
/// T_budget = 4 R_max / (mu^2 (1 - gamma) (L sigma^2 + D^2 mu) delta) * script_T.
template <typename Scalar>
IterationBudget<Scalar> iteration_budget(Scalar r_max, Scalar gamma, Scalar mu, Scalar L,
                                         Scalar sigma, Scalar D, Scalar delta, Scalar omega,
                                         Index M, Scalar sigma_sq_over_sigma_l_sq) {
  std::vector<std::string> e;
  if (!(r_max > 0)) e.push_back("r_max");
  if (!(gamma > 0 && gamma < 1)) e.push_back("gamma (must lie in (0,1))");
  if (!(mu > 0)) e.push_back("mu");
  if (!(L > 0)) e.push_back("L");
  if (!(sigma > 0)) e.push_back("sigma");
  if (!(D >= 0)) e.push_back("D");
  if (!(delta > 0)) e.push_back("delta");
  if (!(omega > 0)) e.push_back("omega");
  if (M < 1) e.push_back("M");
  if (!(sigma_sq_over_sigma_l_sq > 0)) e.push_back("sigma^2/sigma_l^2");
  if (!e.empty()) {
    std::string msg = "iteration_budget: invalid";
    for (const auto& s : e) msg += " " + s;
    throw ValidationError(msg);
  }
  IterationBudget<Scalar> b;
  b.script_T = std::log(Scalar(2) * static_cast<Scalar>(M) * sigma_sq_over_sigma_l_sq + Scalar(1)) /
               std::log(Scalar(1) + Scalar(2) * mu * omega);
  b.T_budget = Scalar(4) * r_max /
               (mu * mu * (Scalar(1) - gamma) * (L * sigma * sigma + D * D * mu) * delta) *
               b.script_T;
  return b;
}

// ---------------------------------------------------------------------------
// Saddle escape
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct EscapeRun {
  std::uint64_t seed = 0;
  std::optional<Index> first_exit;  // iterations taken when the exit was observed
  Scalar J_end = 0;
  Region region_end = Region::StrictSaddle;
  Vector<Scalar> theta_end;
};

template <typename Scalar = double>
struct EscapeStats {
  StationarityReport<Scalar> start_report;
  Scalar J0 = 0;
  Scalar margin = 0;
  Index escaped = 0;
  Scalar fraction = 0;
  std::vector<EscapeRun<Scalar>> runs;
  std::optional<Scalar> exit_q25, exit_median, exit_q75;  // over all runs, non-escapes last
  std::optional<Scalar> script_T;
};

namespace detail {

/// Nearest-rank quantile over a sorted list where missing values count as +inf.
inline std::optional<double> quantile_with_misses(std::vector<Index> hits, std::size_t total,
                                                  double q) {
  if (total == 0) return std::nullopt;
  std::sort(hits.begin(), hits.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(total)));
  const std::size_t idx = rank == 0 ? 0 : rank - 1;
  if (idx >= hits.size()) return std::nullopt;
  return static_cast<double>(hits[idx]);
}

}  // namespace detail

/// Runs the ascent from a verified strict saddle, one run per configured
/// seed, stopping each run once J has risen by mu M sigma^2 / 4 and theta has
/// left the strict-saddle region. Exits are checked every `check_every`
/// iterations and after the last one.
template <typename Scalar>
EscapeStats<Scalar> escape_experiment(const Lab<Scalar>& lab, const RunConfig<Scalar>& cfg,
                                      Index check_every = 10,
                                      std::optional<Scalar> sigma_sq_over_sigma_l_sq = std::nullopt) {
  if (check_every < 1) throw ValidationError("check_every must be >= 1");
  const GradientStepper<Scalar> stepper(lab, cfg);
  const Vector<Scalar> theta0 = stepper.theta0();
  EscapeStats<Scalar> st;
  st.start_report = stepper.report(theta0);
  if (st.start_report.region != Region::StrictSaddle)
    throw PreconditionError("escape start is not a strict saddle: " + describe(st.start_report));
  st.J0 = objective(lab.mdp(), lab.inst.policy(theta0));
  const Scalar sigma = stepper.bounds().sigma;
  st.margin = cfg.mu * static_cast<Scalar>(lab.dim()) * sigma * sigma / Scalar(4);
  if (sigma_sq_over_sigma_l_sq)
    st.script_T = iteration_budget(lab.mdp().r_max, lab.mdp().gamma, cfg.mu, lab.sc.L, sigma,
                                   stepper.bounds().D, cfg.delta, cfg.omega, lab.dim(),
                                   *sigma_sq_over_sigma_l_sq)
                      .script_T;

  std::vector<Index> exits;
  for (auto seed : cfg.seeds) {
    RunStreams rs(seed);
    std::optional<Vector<Scalar>> warm;
    EscapeRun<Scalar> er;
    er.seed = seed;
    Vector<Scalar> theta = theta0;
    for (Index t = 1; t <= cfg.T; ++t) {
      theta = theta + cfg.mu * stepper.step(theta, rs, &warm).sample.g_hat;
      if (!theta.allFinite())
        throw Error("divergence in escape run seed " + std::to_string(seed) + " at iteration " +
                    std::to_string(t));
      if (t % check_every != 0 && t != cfg.T) continue;
      const Scalar j = objective(lab.mdp(), lab.inst.policy(theta));
      if (j < st.J0 + st.margin) continue;
      if (stepper.report(theta).region != Region::StrictSaddle) {
        er.first_exit = t;
        break;
      }
    }
    er.theta_end = theta;
    er.J_end = objective(lab.mdp(), lab.inst.policy(theta));
    er.region_end = stepper.report(theta).region;
    if (er.first_exit) {
      ++st.escaped;
      exits.push_back(*er.first_exit);
    }
    st.runs.push_back(std::move(er));
  }
  const std::size_t n = st.runs.size();
  st.fraction = n ? static_cast<Scalar>(st.escaped) / static_cast<Scalar>(n) : Scalar(0);
  st.exit_q25 = detail::quantile_with_misses(exits, n, 0.25);
  st.exit_median = detail::quantile_with_misses(exits, n, 0.5);
  st.exit_q75 = detail::quantile_with_misses(exits, n, 0.75);
  return st;
}

// ---------------------------------------------------------------------------
// Sufficient ascent
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct AscentReport {
  StationarityReport<Scalar> report;
  Index samples = 0;
  Scalar mean_change = 0;
  Scalar se = 0;
  Scalar bound = 0;  // guaranteed mean change for the region
  bool pass = false;
};

/// Monte-Carlo estimate of E[J(theta + mu G_hat) - J(theta)] at a point that
/// must classify as `region` (large gradient or second-order stationary).
template <typename Scalar>
AscentReport<Scalar> sufficient_ascent_check(const Lab<Scalar>& lab, const RunConfig<Scalar>& cfg,
                                             const Vector<Scalar>& theta, Region region,
                                             Index samples, const Rng& rng) {
  if (region == Region::StrictSaddle)
    throw ValidationError("sufficient_ascent_check covers the large-gradient and "
                          "second-order-stationary regions only");
  if (samples < 2) throw ValidationError("sufficient_ascent_check needs at least 2 samples");
  const GradientStepper<Scalar> stepper(lab, cfg);
  AscentReport<Scalar> rep;
  rep.report = stepper.report(theta);
  if (rep.report.region != region)
    throw PreconditionError(std::string("point is not in region ") + region_name(region) + ": " +
                            describe(rep.report));
  const auto& b = stepper.bounds();
  const Scalar scale = ascent_scale(lab.sc.L, b.sigma, b.D, cfg.mu);
  rep.bound = region == Region::LargeGradient ? scale / (Scalar(2) * cfg.delta) : -scale / Scalar(2);

  const Scalar j0 = objective(lab.mdp(), lab.inst.policy(theta));
  Scalar sum = 0, sum_sq = 0;
  for (Index i = 0; i < samples; ++i) {
    RunStreams rs(rng.child(static_cast<std::uint64_t>(i)));
    const auto res = stepper.step(theta, rs);
    const Vector<Scalar> next = theta + cfg.mu * res.sample.g_hat;
    const Scalar change = objective(lab.mdp(), lab.inst.policy(next)) - j0;
    sum += change;
    sum_sq += change * change;
  }
  const Scalar n = static_cast<Scalar>(samples);
  rep.samples = samples;
  rep.mean_change = sum / n;
  const Scalar var = std::max(Scalar(0), (sum_sq - n * rep.mean_change * rep.mean_change) / (n - 1));
  rep.se = std::sqrt(var / n);
  rep.pass = rep.mean_change >= rep.bound - Scalar(3) * rep.se;
  return rep;
}

// ---------------------------------------------------------------------------
// Noise diagnostics
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct NoiseDiagnostics {
  std::optional<Scalar> sigma_l_sq_est;  // empty when no point has positive curvature
  Scalar sigma_l_sq_se = 0;
  std::optional<Scalar> beta_R_est;
  std::optional<Scalar> nu_est;  // clamped into (0, 4]
  std::optional<Scalar> nu_raw;
  Index n_samples = 0;
  Index pairs_used = 0;
  std::vector<Matrix<Scalar>> covariances;
  std::vector<Region> regions;
  std::vector<std::string> notes;
};

/// Estimates the noise covariance R_xi at each point (sample second moment of
/// xi, centered at the exact estimator mean), the smallest noise variance
/// along positive-curvature directions at strict-saddle points, and a
/// power-law fit ||R(theta1) - R(theta2)|| ~ beta ||theta1 - theta2||^nu.
/// Every point reuses the same random streams.
template <typename Scalar>
NoiseDiagnostics<Scalar> noise_diagnostics(const Lab<Scalar>& lab, const RunConfig<Scalar>& cfg,
                                           const std::vector<Vector<Scalar>>& points,
                                           Index samples, const Rng& rng) {
  if (points.size() < 2) throw ValidationError("noise_diagnostics needs at least 2 points");
  if (samples < 2) throw ValidationError("noise_diagnostics needs at least 2 samples per point");
  const GradientStepper<Scalar> stepper(lab, cfg);
  const Index m = lab.dim();
  NoiseDiagnostics<Scalar> nd;
  nd.n_samples = samples;

  for (std::size_t p = 0; p < points.size(); ++p) {
    const auto& theta = points[p];
    if (theta.size() != m) throw ValidationError("noise_diagnostics: point has wrong dimension");
    std::vector<Vector<Scalar>> xs;
    xs.reserve(static_cast<std::size_t>(samples));
    Matrix<Scalar> cov = Matrix<Scalar>::Zero(m, m);
    for (Index i = 0; i < samples; ++i) {
      RunStreams rs(rng.child(static_cast<std::uint64_t>(i)));
      xs.push_back(stepper.step(theta, rs).sample.noise_xi);
      cov.noalias() += xs.back() * xs.back().transpose();
    }
    cov /= static_cast<Scalar>(samples);
    nd.covariances.push_back(cov);

    const auto rep = stepper.report(theta);
    nd.regions.push_back(rep.region);
    if (rep.region != Region::StrictSaddle) continue;
    const auto es = hessian_eigen(hessian(lab.mdp(), lab.inst.policy(theta)));
    std::vector<Index> pos;
    for (Index j = 0; j < m; ++j)
      if (es.eigenvalues()(j) > Scalar(1e-8)) pos.push_back(j);
    if (pos.empty()) {
      nd.notes.push_back("point " + std::to_string(p) + ": no positive-curvature direction");
      continue;
    }
    Matrix<Scalar> v(m, static_cast<Index>(pos.size()));
    for (std::size_t j = 0; j < pos.size(); ++j) v.col(static_cast<Index>(j)) = es.eigenvectors().col(pos[j]);
    const Matrix<Scalar> proj = v.transpose() * cov * v;
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> pe(proj);
    const Scalar lmin = pe.eigenvalues()(0);
    if (!nd.sigma_l_sq_est || lmin < *nd.sigma_l_sq_est) {
      nd.sigma_l_sq_est = lmin;
      const Vector<Scalar> u = v * pe.eigenvectors().col(0);
      Scalar s1 = 0, s2 = 0;
      for (const auto& x : xs) {
        const Scalar q = u.dot(x) * u.dot(x);
        s1 += q;
        s2 += q * q;
      }
      const Scalar n = static_cast<Scalar>(samples);
      const Scalar mean = s1 / n;
      nd.sigma_l_sq_se = std::sqrt(std::max(Scalar(0), (s2 - n * mean * mean) / (n - 1)) / n);
    }
  }
  if (!nd.sigma_l_sq_est) nd.notes.push_back("sigma_l undefined: no strict-saddle point supplied");

  std::vector<Scalar> lx, ly;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      const Scalar dt = (points[i] - points[j]).norm();
      const Scalar dr = symmetric_norm(nd.covariances[i] - nd.covariances[j]);
      if (!(dt > 0) || !(dr > 0)) continue;
      lx.push_back(std::log(dt));
      ly.push_back(std::log(dr));
    }
  nd.pairs_used = static_cast<Index>(lx.size());
  if (lx.size() < 2) {
    nd.notes.push_back("covariance Lipschitz fit needs two pairs at distinct positive distance");
    return nd;
  }
  const Scalar n = static_cast<Scalar>(lx.size());
  Scalar mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  Scalar sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0)) {
    nd.notes.push_back("covariance Lipschitz fit needs pairs at distinct distances");
    return nd;
  }
  nd.nu_raw = sxy / sxx;
  const Scalar nu = std::clamp(*nd.nu_raw, Scalar(1e-6), Scalar(4));
  if (nu != *nd.nu_raw) nd.notes.push_back("nu fit " + detail::num(*nd.nu_raw) + " clamped into (0,4]");
  nd.nu_est = nu;
  nd.beta_R_est = std::exp(my - nu * mx);
  return nd;
}

}  // namespace bpg
