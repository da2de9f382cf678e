// One pass/fail line per acceptance criterion, tolerances pinned in
// suites.hpp. Exits nonzero if any criterion outside the known-failure
// list fails.
//
//   acceptance [--only N,...] [--out DIR] [--seed S] [--threads T]

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>

#include "sbm/suites.hpp"

namespace {

// Second moment and collision rows at rho = -0.5 from unit masses: the
// summands are squared exit coordinates whose tail exponent is 3, so their
// variance is infinite and the z gate has no calibrated meaning there.
const std::set<int> known_failures{4, 5};

}  // namespace

int main(int argc, char** argv) {
  using namespace sbm;
  std::set<int> only;
  std::filesystem::path out;
  SuiteOptions opt;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "missing value for %s\n", a.c_str());
        std::exit(2);
      }
      return argv[++i];
    };
    if (a == "--only") {
      std::stringstream ss(next());
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (a == "--out") {
      out = next();
    } else if (a == "--seed") {
      opt.seed = std::stoull(next());
    } else if (a == "--threads") {
      opt.threads = static_cast<unsigned>(std::stoul(next()));
    } else {
      std::fprintf(stderr, "unknown argument %s\n", a.c_str());
      return 2;
    }
  }

  Json summary;
  summary["seed"] = opt.seed;
  summary["criteria"] = Json::array();
  std::vector<CheckResult> rows;
  int unexpected = 0;
  double total = 0.0;
  for (int c = 1; c <= 10; ++c) {
    if (!only.empty() && !only.count(c)) continue;
    const auto rep = run_criterion(c, opt);
    total += rep.seconds;
    const bool known = !rep.pass && known_failures.count(c);
    if (!rep.pass && !known) ++unexpected;
    std::printf("criterion %2d %s  %s (%.1f s)%s\n", c, rep.pass ? "PASS" : "FAIL", rep.title.c_str(), rep.seconds,
                known ? "  [known failure, see README]" : "");
    for (const auto& r : rep.rows) {
      std::printf("      %-56s est=%-12.6g ref=%-12.6g se=%-10.3g z=%-8.3g %s\n", r.id.c_str(), r.estimate, r.reference,
                  r.std_error, r.z, status_of(r).c_str());
      CheckResult tagged = r;
      tagged.id = "c" + std::to_string(c) + " " + r.id;
      rows.push_back(tagged);
    }
    std::fflush(stdout);
    auto j = criterion_json(rep);
    j["known_failure"] = known;
    summary["criteria"].push_back(j);
  }
  summary["unexpected_failures"] = unexpected;
  std::printf("total %.1f s, %d unexpected failure(s)\n", total, unexpected);
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_check_csv(out / "acceptance.csv", rows);
    write_json(out / "acceptance.json", summary);
  }
  return unexpected == 0 ? 0 : 1;
}
