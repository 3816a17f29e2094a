#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace reload::data {

struct Transition {
  std::vector<double> s;
  std::optional<std::vector<double>> a;
  std::vector<double> s_next;
  std::optional<double> r;
  bool done = false;
};

enum class DatasetTag : std::uint8_t { unlabeled_agent, expert, annotated };

std::string to_string(DatasetTag tag);
DatasetTag tag_from_string(const std::string& name);

struct TransitionDataset {
  std::vector<Transition> transitions;
  std::vector<std::size_t> episode_starts;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  DatasetTag tag = DatasetTag::unlabeled_agent;
  // Extra header fields carried through save/load (reward provenance, config hash).
  nlohmann::json header_extra = nlohmann::json::object();

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
  std::size_t episode_count() const { return episode_starts.size(); }
  // Half-open transition index range of episode `e`.
  std::pair<std::size_t, std::size_t> episode_range(std::size_t e) const;
  // True when every transition carries a reward.
  bool labeled() const;
  bool has_actions() const;

  // Appends an episode; its first transition becomes a new episode start.
  void append_episode(std::span<const Transition> episode);

  // Throws SchemaError when dims, episode starts, label presence or the expert
  // no-action/no-reward rule are violated.
  void validate() const;
};

// Undiscounted sum of rewards per episode. Requires a labeled dataset.
std::vector<double> episode_returns(const TransitionDataset& ds);

void save_dataset(const TransitionDataset& ds, const std::filesystem::path& path);
TransitionDataset load_dataset(const std::filesystem::path& path);

// The k highest-return episodes in original order, actions and rewards removed.
TransitionDataset select_expert_trajectories(const TransitionDataset& ds, std::size_t k);

// Whole episodes drawn in seeded random order until the kept transition count
// first reaches `fraction` of the total. Kept episodes retain original order.
TransitionDataset subsample_fraction(const TransitionDataset& ds, double fraction, std::uint64_t seed);

// Per-component statistics over the concatenation (s, s_next).
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

inline constexpr double kStdFloor = 1e-6;

NormStats compute_norm_stats(const TransitionDataset& ds);
std::vector<double> standardize(std::span<const double> x, const NormStats& stats);

nlohmann::json to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace reload::data
