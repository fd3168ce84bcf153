#pragma once

#include "bpg/ascent.hpp"
#include "bpg/estimators.hpp"
#include "bpg/instances.hpp"
#include "bpg/oracle.hpp"

#include <string>
#include <vector>

namespace bpg {

struct CheckResult {
  std::string name;
  bool pass = false;
  bool skipped = false;
  std::string detail;
};

namespace detail {

template <typename Scalar>
Vector<Scalar> random_theta(Rng& rng, Index dim, Scalar scale) {
  Vector<Scalar> v(dim);
  for (Index j = 0; j < dim; ++j) v(j) = scale * Scalar(rng.normal());
  return v;
}

}  // namespace detail

/// Invariants that must hold on any valid instance: value and gradient
/// bounds, smoothness envelopes, truncation envelope and, when the induced
/// chain is ergodic, the critic fixed point.
template <typename Scalar>
std::vector<CheckResult> run_checks(const Instance<Scalar>& in, Index pairs, Rng rng) {
  std::vector<CheckResult> out;
  auto add = [&](std::string name, bool pass, std::string detail) {
    out.push_back({std::move(name), pass, false, std::move(detail)});
  };

  const auto rep = validate_mdp(in.mdp);
  add("mdp_valid", rep.ok(), rep.ok() ? "" : rep.violations.front());
  if (!rep.ok()) return out;

  const auto lab = Lab<Scalar>::make(in);
  const auto& m = lab.mdp();
  const Index dim = lab.dim();
  const Scalar jb = lab.j_bound();

  Scalar worst_j = 0, worst_fd = 0, worst_score = 0, worst_jac = 0, worst_L = 0, worst_chi = 0;
  for (Index i = 0; i < pairs; ++i) {
    const Vector<Scalar> t1 = detail::random_theta<Scalar>(rng, dim, Scalar(2));
    const Vector<Scalar> t2 = t1 + detail::random_theta<Scalar>(rng, dim, Scalar(0.5));
    const auto p1 = lab.inst.policy(t1), p2 = lab.inst.policy(t2);
    worst_j = std::max(worst_j, std::abs(objective(m, p1)) / jb);
    const Vector<Scalar> g1 = exact_gradient(m, p1), g2 = exact_gradient(m, p2);
    const Scalar dt = (t1 - t2).norm();
    worst_L = std::max(worst_L, (g1 - g2).norm() / (lab.sc.L * dt));
    const Matrix<Scalar> h1 = hessian(m, p1), h2 = hessian(m, p2);
    worst_chi = std::max(worst_chi, symmetric_norm(h1 - h2) / (lab.sc.chi * dt));
    if (i < 20) {
      Vector<Scalar> fd(dim);
      const Scalar e = Scalar(1e-6);
      for (Index j = 0; j < dim; ++j) {
        Vector<Scalar> tp = t1, tm = t1;
        tp(j) += e;
        tm(j) -= e;
        fd(j) = (objective(m, lab.inst.policy(tp)) - objective(m, lab.inst.policy(tm))) / (2 * e);
      }
      worst_fd = std::max(worst_fd, (fd - g1).norm() / std::max(g1.norm(), Scalar(1e-3)));
    }
    const Matrix<Scalar> sc = score_table(p1);
    worst_score = std::max(worst_score, sc.rowwise().norm().maxCoeff() / lab.pc.G);
    for (Index s = 0; s < m.n_states; ++s)
      worst_jac = std::max(worst_jac, symmetric_norm(score_jacobian(p1, s, 0)) /
                                          std::max(lab.pc.B, Scalar(1e-300)));
  }
  add("objective_bound", worst_j <= 1, "max |J| / (R_max/(1-gamma)) = " + detail::num(worst_j));
  add("gradient_vs_finite_difference", worst_fd < Scalar(1e-5), "max relative error = " + detail::num(worst_fd));
  add("score_bound_G", worst_score <= 1 + Scalar(1e-12), "max ||score|| / G = " + detail::num(worst_score));
  add("score_jacobian_bound_B", worst_jac <= 1 + Scalar(1e-9), "max ||Jacobian|| / B = " + detail::num(worst_jac));
  add("gradient_lipschitz_L", worst_L <= 1, "max ratio to L = " + detail::num(worst_L));
  add("hessian_lipschitz_chi", worst_chi <= 1, "max ratio to chi = " + detail::num(worst_chi));

  {
    const auto pol = lab.inst.policy();
    const Vector<Scalar> g = exact_gradient(m, pol);
    const Scalar D = lab.pc.G * m.r_max / (Scalar(1) - m.gamma);
    Index bad = 0;
    for (Index H = 1; H <= 60; ++H)
      if ((g - truncated_gradient(m, pol, H)).norm() > truncation_bias_bound(D, m.gamma, H)) ++bad;
    add("truncation_envelope", bad == 0, std::to_string(bad) + " violations for H = 1..60");
    const Scalar vsum = discounted_visitation(m, pol).sum();
    add("visitation_mass", std::abs(vsum * (Scalar(1) - m.gamma) - 1) < Scalar(1e-10),
        "(1-gamma) sum d = " + detail::num(vsum * (Scalar(1) - m.gamma)));
  }

  try {
    const auto prob = make_td_problem(m, lab.inst.policy(), in.critic_features);
    const Scalar res = projected_bellman_residual(m, prob.chain, in.critic_features, prob.w_star);
    add("critic_fixed_point", res < Scalar(1e-9), "projected Bellman residual = " + detail::num(res));
    add("critic_positive_definite", prob.system.lambda_min_sym > 0,
        "lambda_min(A + A') = " + detail::num(prob.system.lambda_min_sym));
    bool env_ok = true;
    for (std::size_t t = 0; t < prob.chain.sup_tv.size(); ++t)
      if (prob.chain.sup_tv[t] >
          prob.chain.mixing_m * std::pow(prob.chain.mixing_r, Scalar(t)) * (1 + Scalar(1e-9)))
        env_ok = false;
    add("mixing_envelope", env_ok,
        "m = " + detail::num(prob.chain.mixing_m) + ", r = " + detail::num(prob.chain.mixing_r));
  } catch (const ErgodicityError& e) {
    out.push_back({"critic_fixed_point", true, true, std::string("skipped: ") + e.what()});
  }
  return out;
}

}  // namespace bpg
