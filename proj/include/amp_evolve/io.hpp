#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "amp_evolve/amp.hpp"
#include "amp_evolve/error.hpp"
#include "amp_evolve/state_evolution.hpp"
#include "amp_evolve/verification.hpp"

namespace amp_evolve {

inline constexpr const char* kCsvSchemaLine = "# amp-evolve schema v1";

/// Writes to a sibling temp file, then renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::InvalidInput, "cannot open " + tmp.string());
    out << contents;
    out.flush();
    require(static_cast<bool>(out), ErrorKind::InvalidInput, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::InvalidInput, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void add_row(const std::vector<std::string>& cells) {
    require(cells.size() == columns_.size(), ErrorKind::InvalidInput, "CsvTable: row width mismatch");
    rows_.push_back(cells);
  }

  std::string str() const {
    std::string out = std::string(kCsvSchemaLine) + "\n";
    auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t k = 0; k < cells.size(); ++k) {
        if (k) out += ',';
        out += cells[k];
      }
      out += '\n';
    };
    line(columns_);
    for (const auto& r : rows_) line(r);
    return out;
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

inline std::string trajectory_csv(const AmpTrajectory& traj) {
  CsvTable t({"t", "qq", "bb", "hh", "mm", "lambda", "xi"});
  for (const auto& s : traj.summaries) {
    t.add_row({std::to_string(s.t), format_double(s.qq), format_double(s.bb), format_double(s.hh), format_double(s.mm),
               format_double(s.lambda), format_double(s.xi)});
  }
  return t.str();
}

inline std::string se_csv(const SeTrajectory& se) {
  CsvTable t({"t", "sigma_sq", "tau_sq"});
  for (std::size_t k = 0; k < se.sigma_sq.size(); ++k) {
    t.add_row({std::to_string(k), format_double(se.sigma_sq[k]), format_double(se.tau_sq[k])});
  }
  return t.str();
}

inline nlohmann::json to_json(const CheckRecord& c) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(std::to_string(v)); };
  return {{"name", c.name}, {"statistic", num(c.statistic)}, {"threshold", num(c.threshold)}, {"pass", c.pass},
          {"n", c.n},       {"N", c.N},                       {"reps", c.reps},                {"seed", c.seed}};
}

inline nlohmann::json to_json(const VerificationReport& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  nlohmann::json diag = nlohmann::json::object();
  for (const auto& [k, v] : r.diagnostics) diag[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(std::to_string(v));
  return {{"pass", r.pass()}, {"failures", r.failures()}, {"checks", checks}, {"diagnostics", diag}};
}

}  // namespace amp_evolve
