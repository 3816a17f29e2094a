#pragma once

// The ten acceptance criteria as runnable checks, shared by the CLI
// (`reload_kit acceptance`) and the ctest acceptance binary.

#include <filesystem>
#include <string>
#include <vector>

namespace reload::acceptance {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

inline constexpr int kCriterionCount = 10;

// Runs criterion `id` (1..10). Artifacts go under work_dir/c<id>/.
CriterionResult run_criterion(int id, const std::filesystem::path& work_dir);

// "[PASS] C3 theorem check: ... (12.4 s)"
std::string format_line(const CriterionResult& r);

// Exact optimal assignment cost for a square cost matrix (row-major, n x n).
double assignment_cost(const std::vector<double>& cost, std::size_t n);

// Probability that a random positive outranks a random negative (ties count half).
double auc(const std::vector<double>& positives, const std::vector<double>& negatives);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace reload::acceptance
