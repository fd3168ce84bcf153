#include "bpg/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace bpg::io {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError(path + ": cannot open file");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    const auto pos = what.find("syntax error");
    if (pos != std::string::npos) what = what.substr(pos);
    throw ValidationError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " +
                          what);
  }
}

namespace {

/// Collects every problem with a document before giving up.
class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  std::vector<std::string> errors;

  const json* field(const char* name, bool required = true) {
    if (!doc_.is_object()) {
      if (required) fail("document root must be an object");
      return nullptr;
    }
    auto it = doc_.find(name);
    if (it == doc_.end()) {
      if (required) fail(std::string("missing field '") + name + "'");
      return nullptr;
    }
    return &*it;
  }

  std::optional<double> number(const char* name, bool required = true) {
    const json* j = field(name, required);
    if (!j) return std::nullopt;
    if (!j->is_number()) {
      fail(std::string("field '") + name + "' must be a number");
      return std::nullopt;
    }
    return j->get<double>();
  }

  std::optional<long> integer(const char* name) {
    const json* j = field(name);
    if (!j) return std::nullopt;
    if (!j->is_number_integer()) {
      fail(std::string("field '") + name + "' must be an integer");
      return std::nullopt;
    }
    return j->get<long>();
  }

  /// Reads a nested numeric array of the given shape; an empty shape entry
  /// (-1) accepts any length but requires it to be uniform.
  std::optional<std::vector<double>> array(const json* j, const std::string& name,
                                           std::vector<long>& shape) {
    if (!j) return std::nullopt;
    std::vector<double> out;
    const auto before = errors.size();
    walk(*j, name, shape, 0, out);
    if (errors.size() != before) return std::nullopt;
    return out;
  }

  void fail(std::string msg) { errors.push_back(std::move(msg)); }

 private:
  void walk(const json& j, const std::string& path, std::vector<long>& shape, std::size_t depth,
            std::vector<double>& out) {
    if (depth == shape.size()) {
      if (!j.is_number()) {
        fail(path + " must be a number");
        return;
      }
      out.push_back(j.get<double>());
      return;
    }
    if (!j.is_array()) {
      fail(path + " must be an array");
      return;
    }
    const long n = static_cast<long>(j.size());
    if (shape[depth] < 0) {
      shape[depth] = n;
    } else if (n != shape[depth]) {
      fail(path + " has length " + std::to_string(n) + ", expected " + std::to_string(shape[depth]));
      return;
    }
    for (long i = 0; i < n; ++i)
      walk(j[static_cast<std::size_t>(i)], path + "[" + std::to_string(i) + "]", shape, depth + 1,
           out);
  }

  const json& doc_;
};

FeatureMap<double> features_from(const std::vector<double>& flat, long ns, long na, long dim) {
  FeatureMap<double> fm{ns, na, Matrix<double>(ns * na, dim)};
  for (long x = 0; x < ns * na; ++x)
    for (long j = 0; j < dim; ++j) fm.table(x, j) = flat[static_cast<std::size_t>(x * dim + j)];
  return fm;
}

void check_features(const FeatureMap<double>& fm, const std::string& name, bool full_rank,
                    std::vector<std::string>& errors) {
  if (fm.dim() < 1) {
    errors.push_back(name + " must have at least one column");
    return;
  }
  if (!fm.table.allFinite()) errors.push_back(name + " contains a non-finite entry");
  if (!full_rank) return;
  try {
    require_full_column_rank(fm);
  } catch (const ValidationError& e) {
    errors.push_back(name + ": " + e.what());
  }
}

json features_to_json(const FeatureMap<double>& fm) {
  json out = json::array();
  for (Index s = 0; s < fm.n_states; ++s) {
    json row = json::array();
    for (Index a = 0; a < fm.n_actions; ++a) {
      json v = json::array();
      for (Index j = 0; j < fm.dim(); ++j) v.push_back(fm.table(fm.pair(s, a), j));
      row.push_back(v);
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace

Instance<double> parse_instance(const std::string& text, const std::string& source) {
  const json doc = parse_json(text, source);
  Reader r(doc);
  Instance<double> in;
  if (const json* nm = r.field("name", false); nm && nm->is_string()) in.name = nm->get<std::string>();

  const auto ns = r.integer("n_states");
  const auto na = r.integer("n_actions");
  const auto gamma = r.number("gamma");
  if (ns && *ns < 1) r.fail("n_states must be positive");
  if (na && *na < 1) r.fail("n_actions must be positive");
  const bool sized = ns && na && *ns >= 1 && *na >= 1;
  const long S = sized ? *ns : -1, A = sized ? *na : -1;

  std::vector<long> rho_shape{S};
  const auto rho = r.array(r.field("rho0"), "rho0", rho_shape);
  std::vector<long> rew_shape{S, A};
  const auto rew = r.array(r.field("rewards"), "rewards", rew_shape);
  std::vector<long> tr_shape{S, A, S};
  const auto tr = r.array(r.field("transitions"), "transitions", tr_shape);
  std::vector<long> pf_shape{S, A, -1};
  const json* pf_j = r.field("policy_features", false);
  const auto pf = r.array(pf_j, "policy_features", pf_shape);
  std::vector<long> cf_shape{S, A, -1};
  const json* cf_j = r.field("critic_features", false);
  const auto cf = r.array(cf_j, "critic_features", cf_shape);
  const auto r_max = r.number("r_max", false);

  if (!sized || !gamma || !rho || !rew || !tr || (pf_j && !pf) || (cf_j && !cf)) {
    std::string msg = source + ": invalid instance:";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }

  auto& m = in.mdp;
  m.n_states = S;
  m.n_actions = A;
  m.gamma = *gamma;
  m.rho0 = Eigen::Map<const Vector<double>>(rho->data(), S);
  m.reward.resize(S, A);
  for (long s = 0; s < S; ++s)
    for (long a = 0; a < A; ++a) m.reward(s, a) = (*rew)[static_cast<std::size_t>(s * A + a)];
  m.transition.resize(S * A, S);
  for (long x = 0; x < S * A; ++x)
    for (long t = 0; t < S; ++t) m.transition(x, t) = (*tr)[static_cast<std::size_t>(x * S + t)];
  infer_r_max(m);
  if (r_max) {
    if (!(*r_max >= m.r_max))
      r.fail("r_max = " + detail::num(*r_max) + " is below max |R| = " + detail::num(m.r_max));
    m.r_max = *r_max;
  }
  for (const auto& v : validate_mdp(m).violations) r.fail(v);

  in.policy_features = pf ? features_from(*pf, S, A, pf_shape[2]) : tabular_features<double>(S, A);
  in.critic_features = cf ? features_from(*cf, S, A, cf_shape[2]) : tabular_features<double>(S, A);
  check_features(in.policy_features, "policy_features", false, r.errors);
  check_features(in.critic_features, "critic_features", true, r.errors);

  const Index M = in.policy_features.dim();
  if (const json* th = r.field("theta0", false)) {
    std::vector<long> th_shape{M};
    if (auto v = r.array(th, "theta0", th_shape)) in.theta0 = Eigen::Map<const Vector<double>>(v->data(), M);
  } else {
    in.theta0 = Vector<double>::Zero(M);
  }

  if (!r.errors.empty()) {
    std::string msg = source + ": invalid instance:";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return in;
}

Instance<double> load_instance(const std::string& path) { return parse_instance(read_file(path), path); }

json instance_to_json(const Instance<double>& in) {
  const auto& m = in.mdp;
  json j;
  if (!in.name.empty()) j["name"] = in.name;
  j["n_states"] = m.n_states;
  j["n_actions"] = m.n_actions;
  j["gamma"] = m.gamma;
  j["r_max"] = m.r_max;
  j["rho0"] = std::vector<double>(m.rho0.data(), m.rho0.data() + m.rho0.size());
  json rew = json::array();
  for (Index s = 0; s < m.n_states; ++s) {
    json row = json::array();
    for (Index a = 0; a < m.n_actions; ++a) row.push_back(m.reward(s, a));
    rew.push_back(row);
  }
  j["rewards"] = rew;
  json tr = json::array();
  for (Index s = 0; s < m.n_states; ++s) {
    json row = json::array();
    for (Index a = 0; a < m.n_actions; ++a) {
      json p = json::array();
      for (Index t = 0; t < m.n_states; ++t) p.push_back(m.transition(m.pair(s, a), t));
      row.push_back(p);
    }
    tr.push_back(row);
  }
  j["transitions"] = tr;
  j["policy_features"] = features_to_json(in.policy_features);
  j["critic_features"] = features_to_json(in.critic_features);
  j["theta0"] = std::vector<double>(in.theta0.data(), in.theta0.data() + in.theta0.size());
  return j;
}

std::string serialize_instance(const Instance<double>& in) {
  const json j = instance_to_json(in);
  static const char* order[] = {"name",    "n_states",    "n_actions",       "gamma",
                                "r_max",   "rho0",        "rewards",         "transitions",
                                "policy_features", "critic_features", "theta0"};
  std::string out = "{\n";
  bool first = true;
  for (const char* key : order) {
    if (!j.contains(key)) continue;
    out += first ? "" : ",\n";
    first = false;
    out += "  \"" + std::string(key) + "\": " + j[key].dump();
  }
  return out + "\n}\n";
}

void save_instance(const Instance<double>& in, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(path + ": cannot open for writing");
  f << serialize_instance(in);
  if (!f) throw Error(path + ": write failed");
}

std::string fmt(double x) { return detail::num17(x); }

namespace {

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

void write_ascent_csv(std::ostream& os, const std::vector<RunLog<double>>& logs) {
  os << "run_id,seed,t,J,grad_norm,top_eig,region,xi_norm,d_norm,p_norm,q_norm\n";
  for (const auto& log : logs)
    for (const auto& r : log.records)
      os << log.run_id << ',' << log.seed << ',' << r.t << ',' << fmt(r.J) << ',' << fmt(r.grad_norm)
         << ',' << opt(r.top_eig) << ',' << (r.region ? region_name(*r.region) : "unlabeled") << ','
         << fmt(r.xi_norm) << ',' << fmt(r.d_norm) << ',' << opt(r.p_norm) << ',' << opt(r.q_norm)
         << '\n';
}

void write_grad_sample_csv(std::ostream& os, const RunLog<double>& log) {
  os << "t,xi_norm,d_norm,p_norm,q_norm,grad_norm,J\n";
  for (const auto& r : log.records)
    os << r.t << ',' << fmt(r.xi_norm) << ',' << fmt(r.d_norm) << ',' << opt(r.p_norm) << ','
       << opt(r.q_norm) << ',' << fmt(r.grad_norm) << ',' << fmt(r.J) << '\n';
}

void write_td_log_csv(std::ostream& os, const std::vector<TdLogRow>& rows) {
  os << "run_id,k,sq_error,step_size,seed\n";
  for (const auto& r : rows)
    os << r.run_id << ',' << r.k << ',' << fmt(r.sq_error) << ',' << fmt(r.step_size) << ','
       << r.seed << '\n';
}

void write_td_sweep_csv(std::ostream& os, const std::vector<TdSweepRow>& rows) {
  os << "K,start,seed,sq_error,theorem48_bound\n";
  for (const auto& r : rows)
    os << r.K << ',' << r.start << ',' << r.seed << ',' << fmt(r.sq_error) << ','
       << fmt(r.theorem48_bound) << '\n';
}

json escape_report(const EscapeStats<double>& st, const RunConfig<double>& cfg) {
  auto opt_json = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["mu"] = cfg.mu;
  j["T"] = cfg.T;
  j["start"] = {{"region", region_name(st.start_report.region)},
                {"grad_norm", st.start_report.grad_norm},
                {"top_eig", st.start_report.hessian_top_eig},
                {"J", st.J0}};
  j["margin"] = st.margin;
  j["runs"] = st.runs.size();
  j["escaped"] = st.escaped;
  j["escape_fraction"] = st.fraction;
  j["first_exit_quantiles"] = {
      {"q25", opt_json(st.exit_q25)}, {"median", opt_json(st.exit_median)}, {"q75", opt_json(st.exit_q75)}};
  json budget;
  budget["script_T"] = opt_json(st.script_T);
  budget["median_exit_before_script_T"] =
      (st.script_T && st.exit_median) ? json(*st.exit_median < *st.script_T) : json(nullptr);
  j["budget"] = budget;
  json runs = json::array();
  for (const auto& r : st.runs)
    runs.push_back({{"seed", r.seed},
                    {"first_exit", r.first_exit ? json(*r.first_exit) : json(nullptr)},
                    {"J_end", r.J_end},
                    {"region_end", region_name(r.region_end)}});
  j["per_run"] = runs;
  return j;
}

}  // namespace bpg::io
