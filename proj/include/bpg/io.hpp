#pragma once

#include "bpg/ascent.hpp"
#include "bpg/instances.hpp"
#include "bpg/td0.hpp"

#include "json.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace bpg::io {

/// Parses an instance document. Parse errors carry line and column; every
/// missing field and invariant violation is listed in one ValidationError.
Instance<double> parse_instance(const std::string& text, const std::string& source = "<string>");
Instance<double> load_instance(const std::string& path);

nlohmann::json instance_to_json(const Instance<double>& in);
std::string serialize_instance(const Instance<double>& in);
void save_instance(const Instance<double>& in, const std::string& path);

/// Parses JSON text, reporting errors as "source:line:column: message".
nlohmann::json parse_json(const std::string& text, const std::string& source);
std::string read_file(const std::string& path);

/// 17 significant digits.
std::string fmt(double x);

void write_ascent_csv(std::ostream& os, const std::vector<RunLog<double>>& logs);
void write_grad_sample_csv(std::ostream& os, const RunLog<double>& log);

struct TdLogRow {
  long run_id = 0;
  long k = 0;
  double sq_error = 0;
  double step_size = 0;
  std::uint64_t seed = 0;
};
void write_td_log_csv(std::ostream& os, const std::vector<TdLogRow>& rows);

struct TdSweepRow {
  long K = 0;
  std::string start;
  std::uint64_t seed = 0;
  double sq_error = 0;
  double theorem48_bound = 0;
};
void write_td_sweep_csv(std::ostream& os, const std::vector<TdSweepRow>& rows);

nlohmann::json escape_report(const EscapeStats<double>& st, const RunConfig<double>& cfg);

}  // namespace bpg::io
