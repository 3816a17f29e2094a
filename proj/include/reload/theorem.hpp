#pragma once

// Empirical check of the support-separation property: with a predictor trained
// on expert samples, the mean prediction error under a broader distribution
// whose support strictly contains the expert support exceeds the expert mean.

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "reload/nn.hpp"
#include "reload/rnd.hpp"

namespace reload::theorem {

struct Box {
  std::vector<double> low;
  std::vector<double> high;

  bool contains(std::span<const double> x) const;
  double volume() const;
};

struct DistributionPairSpec {
  std::size_t dim = 2;
  Box expert_region{{0.0, 0.0}, {1.0, 1.0}};
  Box universe_region{{-2.0, -2.0}, {3.0, 3.0}};
  // Probability that a universe sample is drawn from the expert region.
  double p_overlap = 0.2;
  std::size_t n_expert = 10'000;
  std::size_t n_universe = 10'000;
  std::uint64_t seed = 0;

  // Throws ConfigError unless expert_region is a proper sub-box of
  // universe_region and 0 <= p_overlap < 1.
  void validate() const;
};

struct PairSamples {
  nn::Matrix expert;
  nn::Matrix universe;
  // True where the universe sample came from the expert region.
  std::vector<bool> in_support;
};

PairSamples sample_pair(const DistributionPairSpec& spec);

struct TheoremConfig {
  rnd::RndArchitecture arch;
  rnd::RndTrainConfig train = rnd::RndTrainConfig::mujoco();
  // Fraction of expert samples held out for the expert error estimate.
  double holdout_fraction = 0.1;
  std::size_t min_holdout_pool = 20;
};

struct TheoremReport {
  double mu_e = 0.0;
  std::optional<double> in_mean;
  double out_mean = 0.0;
  double overall_mean = 0.0;
  double p_hat = 0.0;
  double ratio = 0.0;
  bool check_a = false;  // overall > mu_e
  bool check_b = false;  // out-of-support mean > mu_e (hypothesis realized)
  bool check_c = false;  // mixture decomposition identity
  double decomposition_rel_error = 0.0;
  bool held_out = true;
  std::uint64_t seed = 0;

  bool hypothesis_met() const { return check_b; }
  bool passed() const { return check_a && check_b && check_c; }
};

inline constexpr double kDecompositionTolerance = 1e-10;

TheoremReport verify_theorem(const DistributionPairSpec& spec, const TheoremConfig& cfg);

nlohmann::json to_json(const TheoremReport& report);

// Overall-mean excess over mu_e for each overlap level, averaged across seeds.
struct ProbeRow {
  double p_overlap = 0.0;
  double mean_excess = 0.0;
  std::size_t seeds = 0;
};

std::vector<ProbeRow> monotonicity_probe(DistributionPairSpec spec, const TheoremConfig& cfg,
                                         const std::vector<double>& overlaps, const std::vector<std::uint64_t>& seeds);

}  // namespace reload::theorem
