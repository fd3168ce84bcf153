#include "bpg/ascent.hpp"
#include "bpg/checks.hpp"
#include "bpg/io.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bpg;

namespace {

/// Settings shared by every subcommand; file values first, flags override.
struct Settings {
  std::string config_path;
  std::string instance_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::optional<double> mu;
  std::optional<long> T;
  std::string H;
  std::optional<long> K;
  std::optional<double> inject_noise;
  std::optional<double> delta;
  std::optional<double> omega;
  std::optional<long> batch;
  std::vector<long> td_K;
  std::vector<std::string> starts;
  std::optional<long> check_every;
  std::optional<double> sigma_ratio;
  std::optional<long> samples;
  std::string points;
  bool per_step = false;
};

const std::set<std::string> kConfigKeys = {
    "instance",     "out",         "seeds",         "mu",           "T",
    "H",            "K",           "delta",         "omega",        "batch",
    "theta0",       "inject_noise", "hessian_every", "critic_step", "critic_alpha",
    "critic_radius", "warm_start", "td_K",          "td_starts",    "check_every",
    "sigma_ratio",  "points",      "samples",       "estimator"};

struct Context {
  json config = json::object();
  fs::path config_dir = ".";
  Instance<double> instance;
  std::string instance_source;
};

Context load_context(const Settings& s) {
  Context c;
  if (!s.config_path.empty()) {
    c.config = io::parse_json(io::read_file(s.config_path), s.config_path);
    if (!c.config.is_object()) throw ValidationError(s.config_path + ": config root must be an object");
    std::vector<std::string> unknown;
    for (auto it = c.config.begin(); it != c.config.end(); ++it)
      if (!kConfigKeys.count(it.key())) unknown.push_back(it.key());
    if (!unknown.empty()) {
      std::string msg = s.config_path + ": unknown config field(s):";
      for (const auto& k : unknown) msg += " '" + k + "'";
      throw ValidationError(msg);
    }
    c.config_dir = fs::path(s.config_path).parent_path();
  }
  std::string inst = s.instance_path;
  if (inst.empty() && c.config.contains("instance")) {
    inst = c.config["instance"].get<std::string>();
    if (fs::path(inst).is_relative()) inst = (c.config_dir / inst).string();
  }
  if (inst.empty()) throw ValidationError("no instance given (use --instance or the config field 'instance')");
  c.instance = io::load_instance(inst);
  c.instance_source = inst;
  return c;
}

template <typename T>
std::optional<T> cfg_get(const Context& c, const char* key) {
  if (!c.config.contains(key)) return std::nullopt;
  try {
    return c.config[key].get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config field '") + key + "' has the wrong type");
  }
}

std::vector<std::uint64_t> seeds_of(const Settings& s, const Context& c) {
  if (!s.seeds.empty()) return s.seeds;
  if (auto v = cfg_get<std::vector<std::uint64_t>>(c, "seeds")) {
    if (v->empty()) throw ValidationError("config field 'seeds' must be nonempty");
    return *v;
  }
  return {0};
}

fs::path out_dir_of(const Settings& s, const Context& c) {
  std::string d = s.out_dir;
  if (d.empty()) d = cfg_get<std::string>(c, "out").value_or("");
  if (d.empty()) return {};
  fs::path p(d);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw ValidationError("output directory '" + d + "' is not writable");
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw Error(p.string() + ": write failed");
}

RunConfig<double> run_config(const Settings& s, const Context& c, EstimatorKind kind) {
  RunConfig<double> cfg;
  cfg.estimator = kind;
  cfg.mu = s.mu ? *s.mu : cfg_get<double>(c, "mu").value_or(cfg.mu);
  cfg.T = s.T ? *s.T : cfg_get<long>(c, "T").value_or(cfg.T);
  cfg.K = s.K ? *s.K : cfg_get<long>(c, "K").value_or(cfg.K);
  cfg.delta = s.delta ? *s.delta : cfg_get<double>(c, "delta").value_or(cfg.delta);
  cfg.omega = s.omega ? *s.omega : cfg_get<double>(c, "omega").value_or(cfg.omega);
  cfg.batch = s.batch ? *s.batch : cfg_get<long>(c, "batch").value_or(cfg.batch);
  cfg.inject_noise = s.inject_noise ? *s.inject_noise : cfg_get<double>(c, "inject_noise").value_or(0.0);
  cfg.hessian_every = cfg_get<long>(c, "hessian_every").value_or(cfg.hessian_every);
  cfg.warm_start = cfg_get<bool>(c, "warm_start").value_or(cfg.warm_start);
  cfg.critic_alpha = cfg_get<double>(c, "critic_alpha").value_or(cfg.critic_alpha);
  if (auto r = cfg_get<double>(c, "critic_radius")) cfg.critic_radius = *r;
  if (auto st = cfg_get<std::string>(c, "critic_step")) {
    static const std::map<std::string, CriticStep> m{{"inverse_sqrt", CriticStep::InverseSqrt},
                                                     {"diminishing", CriticStep::Diminishing},
                                                     {"constant", CriticStep::Constant}};
    auto it = m.find(*st);
    if (it == m.end()) throw ValidationError("critic_step must be inverse_sqrt, diminishing or constant");
    cfg.critic_step = it->second;
  }
  std::string h = s.H;
  if (h.empty() && c.config.contains("H"))
    h = c.config["H"].is_string() ? c.config["H"].get<std::string>() : std::to_string(c.config["H"].get<long>());
  if (!h.empty() && h != "auto") {
    try {
      std::size_t used = 0;
      cfg.H = std::stol(h, &used);
      if (used != h.size()) throw std::invalid_argument(h);
    } catch (const std::exception&) {
      throw ValidationError("H must be 'auto' or an integer, got '" + h + "'");
    }
  }
  if (auto th = cfg_get<std::vector<double>>(c, "theta0"))
    cfg.theta0 = Eigen::Map<const Vector<double>>(th->data(), static_cast<Index>(th->size()));
  cfg.seeds = seeds_of(s, c);
  return cfg;
}

std::string vec_str(const Vector<double>& v) {
  std::string out = "[";
  for (Index i = 0; i < v.size(); ++i) out += (i ? ", " : "") + detail::num(v(i));
  return out + "]";
}

json vec_json(const Vector<double>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// ---------------------------------------------------------------------------

int cmd_oracle(const Settings& s) {
  const auto c = load_context(s);
  const auto lab = Lab<double>::make(c.instance);
  RunConfig<double> cfg = run_config(s, c, EstimatorKind::Vanilla);
  const auto& m = lab.mdp();
  const auto pol = lab.inst.policy(cfg.theta0 ? *cfg.theta0 : lab.inst.theta0);
  const double J = objective(m, pol);
  const Vector<double> g = exact_gradient(m, pol);
  const auto es = hessian_eigen(hessian(m, pol));
  json j;
  j["instance"] = c.instance_source;
  j["J"] = J;
  j["grad_norm"] = g.norm();
  j["grad"] = vec_json(g);
  j["hessian_eigenvalues"] = vec_json(es.eigenvalues());
  j["L"] = lab.sc.L;
  j["chi"] = lab.sc.chi;
  j["G"] = lab.pc.G;
  j["B"] = lab.pc.B;
  std::cout << "J            = " << io::fmt(J) << "\n";
  std::cout << "||grad J||   = " << io::fmt(g.norm()) << "\n";
  std::cout << "Hessian eig  = " << vec_str(es.eigenvalues()) << "\n";
  if (cfg.mu > 0) {
    const auto th = run_thresholds(lab, cfg);
    const auto region = classify_values(g.norm(), es.eigenvalues().maxCoeff(), th);
    j["region"] = region_name(region);
    std::cout << "region       = " << region_name(region) << " (mu = " << detail::num(cfg.mu)
              << ", delta = " << detail::num(cfg.delta) << ", omega = " << detail::num(cfg.omega) << ")\n";
  }
  std::cout << "L            = " << io::fmt(lab.sc.L) << "\n";
  std::cout << "chi          = " << io::fmt(lab.sc.chi) << "\n";
  try {
    const auto prob = make_td_problem(m, pol, lab.inst.critic_features);
    j["w_star"] = vec_json(prob.w_star);
    j["varsigma"] = prob.system.lambda_min_sym;
    j["mixing_m"] = prob.chain.mixing_m;
    j["mixing_r"] = prob.chain.mixing_r;
    std::cout << "w*           = " << vec_str(prob.w_star) << "\n";
    std::cout << "varsigma     = " << io::fmt(prob.system.lambda_min_sym) << "\n";
    std::cout << "m            = " << io::fmt(prob.chain.mixing_m) << "\n";
    std::cout << "r            = " << io::fmt(prob.chain.mixing_r) << "\n";
  } catch (const ErgodicityError& e) {
    j["critic"] = std::string("unavailable: ") + e.what();
    std::cout << "critic       = unavailable (" << e.what() << ")\n";
  }
  if (const auto out = out_dir_of(s, c); !out.empty()) write_file(out / "oracle.json", j.dump(2) + "\n");
  return 0;
}

int cmd_ascent(const Settings& s, EstimatorKind kind) {
  const auto c = load_context(s);
  const auto lab = Lab<double>::make(c.instance);
  const auto cfg = run_config(s, c, kind);
  const auto logs = run(lab, cfg);
  const auto out = out_dir_of(s, c);
  std::ostringstream csv;
  io::write_ascent_csv(csv, logs);
  if (!out.empty()) {
    write_file(out / "ascent_log.csv", csv.str());
    for (const auto& log : logs) {
      std::ostringstream gs;
      io::write_grad_sample_csv(gs, log);
      write_file(out / ("grad_samples_run" + std::to_string(log.run_id) + ".csv"), gs.str());
    }
  }
  for (const auto& log : logs) {
    const double j0 = log.records.empty() ? log.J_final : log.records.front().J;
    std::cout << "run " << log.run_id << " seed " << log.seed << ": J " << detail::num(j0) << " -> "
              << detail::num(log.J_final) << ", ||grad J|| " << detail::num(log.grad_norm_final)
              << " (T = " << cfg.T << ", H = " << log.H << ")\n";
  }
  if (out.empty()) std::cout << csv.str();
  return 0;
}

int cmd_td0(const Settings& s) {
  const auto c = load_context(s);
  const auto& in = c.instance;
  std::vector<long> Ks = s.td_K;
  if (Ks.empty()) Ks = cfg_get<std::vector<long>>(c, "td_K").value_or(std::vector<long>{100, 400, 1600});
  std::vector<std::string> starts = s.starts;
  if (starts.empty())
    starts = cfg_get<std::vector<std::string>>(c, "td_starts").value_or(std::vector<std::string>{"stationary", "point"});
  for (long k : Ks)
    if (k < 1) throw ValidationError("every K must be >= 1");
  const auto seeds = seeds_of(s, c);
  const auto policy = in.policy();
  const auto prob = make_td_problem(in.mdp, policy, in.critic_features);
  const Index n = in.mdp.n_pairs();

  std::vector<io::TdSweepRow> rows;
  std::vector<io::TdLogRow> steps;
  long run_id = 0;
  for (long K : Ks)
    for (const auto& start : starts) {
      Vector<double> init;
      if (start == "stationary") init = prob.chain.stationary;
      else if (start == "point") init = point_mass<double>(n, slowest_start_pair(prob.chain));
      else if (start == "initial") init = algorithm_start(prob);
      else throw ValidationError("unknown start '" + start + "' (use stationary, point or initial)");
      for (auto seed : seeds) {
        Rng rng(seed);
        TdRunOptions<double> opt;
        opt.record_per_step = s.per_step;
        const auto st = run_td0(prob, K, StepSchedule<double>::inverse_sqrt(K), init, rng, opt);
        rows.push_back({K, start, seed, st.final_sq_error, st.bound_value});
        for (std::size_t k = 0; k < st.per_step_sq_error.size(); ++k)
          steps.push_back({run_id, static_cast<long>(k), st.per_step_sq_error[k], st.step_sizes[k], seed});
        ++run_id;
      }
    }
  std::ostringstream csv;
  io::write_td_sweep_csv(csv, rows);
  const auto out = out_dir_of(s, c);
  if (!out.empty()) {
    write_file(out / "td_sweep.csv", csv.str());
    if (s.per_step) {
      std::ostringstream log;
      io::write_td_log_csv(log, steps);
      write_file(out / "td_log.csv", log.str());
    }
  } else {
    std::cout << csv.str();
  }
  return 0;
}

int cmd_escape(const Settings& s) {
  const auto c = load_context(s);
  const auto lab = Lab<double>::make(c.instance);
  const auto cfg = run_config(s, c, EstimatorKind::Vanilla);
  const long every = s.check_every ? *s.check_every : cfg_get<long>(c, "check_every").value_or(10);
  std::optional<double> ratio = s.sigma_ratio ? s.sigma_ratio : cfg_get<double>(c, "sigma_ratio");
  const auto st = escape_experiment(lab, cfg, every, ratio);
  const json rep = io::escape_report(st, cfg);
  if (const auto out = out_dir_of(s, c); !out.empty()) write_file(out / "escape_report.json", rep.dump(2) + "\n");
  std::cout << "escaped " << st.escaped << " of " << st.runs.size() << " runs (margin "
            << detail::num(st.margin) << ")\n";
  if (st.exit_median) std::cout << "median first exit: " << *st.exit_median << " iterations\n";
  if (st.script_T) std::cout << "budget script_T: " << detail::num(*st.script_T) << "\n";
  return 0;
}

std::vector<Vector<double>> parse_points(const std::string& text, Index dim) {
  std::vector<Vector<double>> pts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    std::vector<double> v;
    std::stringstream is(item);
    std::string tok;
    while (std::getline(is, tok, ',')) v.push_back(std::stod(tok));
    if (static_cast<Index>(v.size()) != dim)
      throw ValidationError("point '" + item + "' has dimension " + std::to_string(v.size()) +
                            ", expected " + std::to_string(dim));
    pts.push_back(Eigen::Map<Vector<double>>(v.data(), dim));
  }
  return pts;
}

int cmd_diagnose(const Settings& s) {
  const auto c = load_context(s);
  const auto lab = Lab<double>::make(c.instance);
  const auto cfg = run_config(s, c, cfg_get<std::string>(c, "estimator").value_or("vanilla") == "exact"
                                        ? EstimatorKind::Exact
                                        : EstimatorKind::Vanilla);
  std::vector<Vector<double>> pts;
  if (!s.points.empty()) {
    pts = parse_points(s.points, lab.dim());
  } else if (auto v = cfg_get<std::vector<std::vector<double>>>(c, "points")) {
    for (auto& p : *v) {
      if (static_cast<Index>(p.size()) != lab.dim()) throw ValidationError("config point has wrong dimension");
      pts.push_back(Eigen::Map<Vector<double>>(p.data(), lab.dim()));
    }
  } else {
    throw ValidationError("diagnose needs points (--points or config field 'points')");
  }
  const long n = s.samples ? *s.samples : cfg_get<long>(c, "samples").value_or(2000);
  const auto nd = noise_diagnostics(lab, cfg, pts, n, Rng(cfg.seeds.front()));
  auto opt_json = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["sigma_l_sq_est"] = opt_json(nd.sigma_l_sq_est);
  j["sigma_l_sq_se"] = nd.sigma_l_sq_se;
  j["beta_R_est"] = opt_json(nd.beta_R_est);
  j["nu_est"] = opt_json(nd.nu_est);
  j["nu_raw"] = opt_json(nd.nu_raw);
  j["n_samples"] = nd.n_samples;
  j["pairs_used"] = nd.pairs_used;
  json regions = json::array();
  for (auto r : nd.regions) regions.push_back(region_name(r));
  j["regions"] = regions;
  j["notes"] = nd.notes;
  if (const auto out = out_dir_of(s, c); !out.empty()) write_file(out / "diagnostics.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_check(const Settings& s) {
  const auto c = load_context(s);
  const auto results = run_checks(c.instance, 1000, Rng(s.seeds.empty() ? 0 : s.seeds.front()));
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.skipped ? "SKIP " : r.pass ? "PASS " : "FAIL ") << r.name;
    if (!r.detail.empty()) std::cout << "  " << r.detail;
    std::cout << "\n";
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Policy-gradient landscape and TD(0) critic experiments on tabular MDPs"};
  app.require_subcommand(1);
  Settings s;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", s.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--instance", s.instance_path, "instance JSON file")->check(CLI::ExistingFile);
    sub->add_option("--out", s.out_dir, "output directory");
    sub->add_option("--seeds", s.seeds, "comma-separated seed list")->delimiter(',');
  };
  auto ascent_flags = [&](CLI::App* sub) {
    sub->add_option("--mu", s.mu, "step size");
    sub->add_option("--T", s.T, "outer iterations");
    sub->add_option("--H", s.H, "horizon: auto or an integer");
    sub->add_option("--delta", s.delta, "region threshold delta");
    sub->add_option("--omega", s.omega, "region threshold omega");
    sub->add_option("--batch", s.batch, "trajectories per estimate");
    sub->add_option("--inject-noise", s.inject_noise, "variance of isotropic noise added to each estimate");
  };

  auto* oracle = app.add_subcommand("oracle", "exact quantities for an instance");
  common(oracle);
  ascent_flags(oracle);
  auto* vpg = app.add_subcommand("vpg", "policy-gradient ascent with the GPOMDP estimator");
  common(vpg);
  ascent_flags(vpg);
  auto* ac = app.add_subcommand("ac", "policy-gradient ascent with the actor-critic estimator");
  common(ac);
  ascent_flags(ac);
  ac->add_option("--K", s.K, "inner TD(0) steps per iteration");
  auto* td = app.add_subcommand("td0", "TD(0) sweeps over K and start distributions");
  common(td);
  td->add_option("--K", s.td_K, "comma-separated K list")->delimiter(',');
  td->add_option("--starts", s.starts, "stationary, point, initial")->delimiter(',');
  td->add_flag("--per-step", s.per_step, "also write per-step errors");
  auto* esc = app.add_subcommand("escape", "saddle-escape experiment");
  common(esc);
  ascent_flags(esc);
  esc->add_option("--check-every", s.check_every, "iterations between exit checks");
  esc->add_option("--sigma-ratio", s.sigma_ratio, "sigma^2 / sigma_l^2 for the budget comparison");
  auto* diag = app.add_subcommand("diagnose", "noise covariance diagnostics");
  common(diag);
  ascent_flags(diag);
  diag->add_option("--points", s.points, "points as 'a,b;c,d'");
  diag->add_option("--samples", s.samples, "samples per point");
  auto* chk = app.add_subcommand("check", "invariant suite on an instance");
  common(chk);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*oracle) return cmd_oracle(s);
    if (*vpg) return cmd_ascent(s, EstimatorKind::Vanilla);
    if (*ac) return cmd_ascent(s, EstimatorKind::ActorCritic);
    if (*td) return cmd_td0(s);
    if (*esc) return cmd_escape(s);
    if (*diag) return cmd_diagnose(s);
    if (*chk) return cmd_check(s);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
