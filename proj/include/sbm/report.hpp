#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "sbm/diagnostics.hpp"
#include "sbm/io.hpp"

namespace sbm {

inline std::string status_of(const CheckResult& r) {
  if (r.negative_control) return r.pass ? "expected-fail" : "FAIL";
  return r.pass ? "pass" : "FAIL";
}

/// A row that is not a z-test (structural or trend); z is reported as NaN.
inline CheckResult gate_row(std::string id, double estimate, double reference, bool pass, double se = 0.0) {
  CheckResult r;
  r.id = std::move(id);
  r.estimate = estimate;
  r.reference = reference;
  r.std_error = se;
  r.z = std::numeric_limits<double>::quiet_NaN();
  r.pass = pass;
  return r;
}

inline Json check_json(const CheckResult& r) {
  Json j;
  j["id"] = r.id;
  j["estimate"] = r.estimate;
  j["reference"] = r.reference;
  j["std_error"] = r.std_error;
  j["z"] = std::isfinite(r.z) ? Json(r.z) : Json(nullptr);
  j["pass"] = r.pass;
  j["status"] = status_of(r);
  return j;
}

inline void write_check_csv(const std::filesystem::path& path, const std::vector<CheckResult>& rows) {
  CsvWriter w(path, {"id", "estimate", "reference", "std_error", "z", "pass", "status"});
  for (const auto& r : rows) w.row(r.id, r.estimate, r.reference, r.std_error, r.z, r.pass, status_of(r));
}

inline std::string time_label(double t) { return "t=" + format_number(t); }

}  // namespace sbm
