// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Usage: acceptance [work_dir] [criterion ids...]

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "reload/acceptance.hpp"

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::filesystem::path work = argc > 1 ? argv[1] : "acceptance_work";
  std::vector<int> ids;
  for (int i = 2; i < argc; ++i) {
    ids.push_back(std::atoi(argv[i]));
  }
  if (ids.empty()) {
    for (int id = 1; id <= reload::acceptance::kCriterionCount; ++id) {
      ids.push_back(id);
    }
  }
  int failures = 0;
  for (int id : ids) {
    reload::acceptance::CriterionResult r;
    try {
      r = reload::acceptance::run_criterion(id, work);
    } catch (const std::exception& e) {
      r.id = id;
      r.name = "error";
      r.detail = e.what();
    }
    std::printf("%s\n", reload::acceptance::format_line(r).c_str());
    std::fflush(stdout);
    failures += r.passed ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(ids.size()) - failures, ids.size());
  return failures == 0 ? 0 : 1;
}
