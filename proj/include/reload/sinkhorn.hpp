#pragma once

// Entropic optimal transport between point clouds and an annotation backend
// that rewards agent windows by their transport distance to expert
// target-predictor discrepancy vectors.

#include <cstdint>
#include <vector>

#include "reload/dataset.hpp"
#include "reload/nn.hpp"
#include "reload/rnd.hpp"

namespace reload::ot {

enum class GroundCost : std::uint8_t { squared_euclidean };

struct SinkhornConfig {
  double epsilon = 0.05;
  std::size_t max_iters = 500;
  double convergence_tol = 1e-9;
  GroundCost cost = GroundCost::squared_euclidean;
  // Expert discrepancy vectors sampled (without replacement) per annotation run.
  std::size_t expert_batch = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SinkhornConfig& cfg);
SinkhornConfig sinkhorn_config_from_json(const nlohmann::json& j, SinkhornConfig base = {});

struct OtResult {
  double value = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

// Entropic transport cost between uniform measures on the rows of x and y,
// reported as the dual objective <a, f> + <b, g>.
OtResult entropic_ot(const nn::Matrix& x, const nn::Matrix& y, const SinkhornConfig& cfg);

// OT(A, B) - (OT(A, A) + OT(B, B)) / 2, clamped at 0. `converged` is false if
// any of the three solves hit max_iters.
OtResult sinkhorn_divergence(const nn::Matrix& a, const nn::Matrix& b, const SinkhornConfig& cfg);

struct HybridStats {
  std::size_t solves = 0;
  std::size_t unconverged = 0;
};

// Reward of transition i is minus the divergence between the discrepancy vectors
// of the window of `window` transitions centred on i (clipped to its episode)
// and a sampled expert batch. Raw rewards then go through the shared reward
// pipeline.
data::TransitionDataset hybrid_annotate(const rnd::RndModel& model, const data::TransitionDataset& expert,
                                        const data::TransitionDataset& ds, const SinkhornConfig& cfg,
                                        std::size_t window, const rnd::RewardConfig& reward,
                                        HybridStats* stats = nullptr);

// Raw (pre-pipeline) hybrid rewards, one per transition of `ds`.
std::vector<double> hybrid_raw_rewards(const rnd::RndModel& model, const data::TransitionDataset& expert,
                                       const data::TransitionDataset& ds, const SinkhornConfig& cfg,
                                       std::size_t window, HybridStats* stats = nullptr);

}  // namespace reload::ot
