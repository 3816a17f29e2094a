#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "reload/dataset.hpp"
#include "reload/envs.hpp"
#include "reload/error.hpp"
#include "reload/random.hpp"

using namespace reload;
using namespace reload::data;
namespace fs = std::filesystem;

namespace {

// Episode e has `len` transitions each rewarded `rewards[e] / len`.
TransitionDataset episodes_with_returns(const std::vector<double>& returns, std::size_t len = 3) {
  TransitionDataset ds;
  ds.state_dim = 1;
  ds.action_dim = 1;
  for (std::size_t e = 0; e < returns.size(); ++e) {
    std::vector<Transition> ep;
    for (std::size_t i = 0; i < len; ++i) {
      const double x = static_cast<double>(e * 100 + i);
      ep.push_back({{x}, std::vector<double>{0.5}, {x + 1.0}, returns[e] / static_cast<double>(len), i + 1 == len});
    }
    ds.append_episode(ep);
  }
  return ds;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / name; }

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream os(path);
  for (const auto& l : lines) {
    os << l << "\n";
  }
}

}  // namespace

TEST(Dataset, SaveLoadRoundTripIsBitExact) {
  envs::GeneratorSpec gen;
  gen.n_episodes = 7;
  gen.seed = 4;
  TransitionDataset ds = envs::generate_dataset(envs::EnvSpec::point_reach(), gen);
  ds.header_extra["note"] = "kept";
  const fs::path path = temp_file("reload_roundtrip.jsonl");
  save_dataset(ds, path);
  const TransitionDataset back = load_dataset(path);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.episode_starts, ds.episode_starts);
  EXPECT_EQ(back.state_dim, ds.state_dim);
  EXPECT_EQ(back.action_dim, ds.action_dim);
  EXPECT_EQ(back.tag, ds.tag);
  EXPECT_EQ(back.header_extra.at("note"), "kept");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.transitions[i].s, ds.transitions[i].s);
    EXPECT_EQ(back.transitions[i].s_next, ds.transitions[i].s_next);
    EXPECT_EQ(back.transitions[i].a, ds.transitions[i].a);
    EXPECT_EQ(back.transitions[i].r, ds.transitions[i].r);
    EXPECT_EQ(back.transitions[i].done, ds.transitions[i].done);
  }
  fs::remove(path);
}

TEST(Dataset, MalformedLineReportsLineNumber) {
  const fs::path path = temp_file("reload_bad_line.jsonl");
  write_lines(path, {R"({"state_dim":1,"action_dim":1,"labeled":false})",
                     R"({"s":[0],"a":[0],"s2":[1],"r":null,"done":false,"ep":0})",
                     R"({"s":[0],"a":[0],"s2":[1],"r":null,"done":fal)"});
  try {
    load_dataset(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  fs::remove(path);
}

TEST(Dataset, MixedStateDimsIsSchemaError) {
  const fs::path path = temp_file("reload_mixed_dims.jsonl");
  write_lines(path, {R"({"state_dim":2,"action_dim":1,"labeled":false})",
                     R"({"s":[0,0],"a":[0],"s2":[1,1],"r":null,"done":false,"ep":0})",
                     R"({"s":[0],"a":[0],"s2":[1],"r":null,"done":false,"ep":0})"});
  try {
    load_dataset(path);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  fs::remove(path);
}

TEST(Dataset, MissingFileIsIoError) { EXPECT_THROW(load_dataset("/nonexistent/reload.jsonl"), IoError); }

TEST(Dataset, HundredThousandTransitionsLoad) {
  TransitionDataset ds;
  ds.state_dim = 2;
  ds.action_dim = 2;
  Rng rng(3);
  std::vector<Transition> ep;
  for (std::size_t i = 0; i < 100'000; ++i) {
    ep.push_back({{rng.normal(), rng.normal()}, std::vector<double>{0.0, 0.1}, {rng.normal(), rng.normal()},
                  std::nullopt, false});
    if (ep.size() == 50) {
      ds.append_episode(ep);
      ep.clear();
    }
  }
  const fs::path path = temp_file("reload_100k.jsonl");
  save_dataset(ds, path);
  const TransitionDataset back = load_dataset(path);
  EXPECT_EQ(back.size(), 100'000u);
  EXPECT_EQ(back.episode_count(), 2000u);
  EXPECT_EQ(back.transitions[77'777].s, ds.transitions[77'777].s);
  fs::remove(path);
}

TEST(SelectExpert, PicksArgmaxAndStripsLabels) {
  const TransitionDataset ds = episodes_with_returns({5.0, 9.0, 1.0});
  const TransitionDataset e = select_expert_trajectories(ds, 1);
  EXPECT_EQ(e.tag, DatasetTag::expert);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e.transitions[0].s[0], 100.0);
  for (const auto& t : e.transitions) {
    EXPECT_FALSE(t.a.has_value());
    EXPECT_FALSE(t.r.has_value());
  }
}

TEST(SelectExpert, AllEpisodesKeepOriginalOrder) {
  const TransitionDataset ds = episodes_with_returns({5.0, 9.0, 1.0});
  const TransitionDataset e = select_expert_trajectories(ds, 3);
  ASSERT_EQ(e.episode_count(), 3u);
  EXPECT_EQ(e.transitions[0].s[0], 0.0);
  EXPECT_EQ(e.transitions[3].s[0], 100.0);
  EXPECT_EQ(e.transitions[6].s[0], 200.0);
}

TEST(SelectExpert, TiesGoToLowerIndex) {
  const TransitionDataset ds = episodes_with_returns({2.0, 7.0, 7.0, 7.0});
  const TransitionDataset e = select_expert_trajectories(ds, 2);
  ASSERT_EQ(e.episode_count(), 2u);
  EXPECT_EQ(e.transitions[0].s[0], 100.0);
  EXPECT_EQ(e.transitions[3].s[0], 200.0);
}

TEST(SelectExpert, MatchesSortOracleOnGeneratedData) {
  envs::GeneratorSpec gen;
  gen.quality = envs::PolicyQuality::replay_mixture;
  gen.n_episodes = 50;
  gen.seed = 12;
  const TransitionDataset ds = envs::generate_dataset(envs::EnvSpec::point_reach(), gen);
  const std::vector<double> returns = episode_returns(ds);
  std::vector<std::size_t> order(returns.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });
  order.resize(5);
  std::sort(order.begin(), order.end());

  const TransitionDataset e = select_expert_trajectories(ds, 5);
  ASSERT_EQ(e.episode_count(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto [b, end] = ds.episode_range(order[k]);
    const auto [eb, eend] = e.episode_range(k);
    ASSERT_EQ(end - b, eend - eb);
    EXPECT_EQ(e.transitions[eb].s, ds.transitions[b].s);
  }
}

TEST(SelectExpert, KBeyondEpisodeCountIsArgumentError) {
  EXPECT_THROW(select_expert_trajectories(episodes_with_returns({1.0, 2.0}), 3), ArgumentError);
}

TEST(SelectExpert, UnlabeledInputIsRejected) {
  TransitionDataset ds = episodes_with_returns({1.0});
  for (auto& t : ds.transitions) {
    t.r.reset();
  }
  EXPECT_THROW(select_expert_trajectories(ds, 1), Error);
}

TEST(Subsample, FullFractionIsIdentity) {
  const TransitionDataset ds = episodes_with_returns({1, 2, 3, 4, 5});
  const TransitionDataset sub = subsample_fraction(ds, 1.0, 9);
  EXPECT_EQ(sub.size(), ds.size());
  EXPECT_EQ(sub.episode_starts, ds.episode_starts);
}

TEST(Subsample, HalfOfTenEqualEpisodesIsFive) {
  const TransitionDataset ds = episodes_with_returns({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 4);
  const TransitionDataset sub = subsample_fraction(ds, 0.5, 21);
  EXPECT_EQ(sub.episode_count(), 5u);
  EXPECT_EQ(sub.size(), 20u);
}

TEST(Subsample, DeterministicAndMonotone) {
  const TransitionDataset ds = episodes_with_returns({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 4);
  const TransitionDataset a = subsample_fraction(ds, 0.3, 5);
  const TransitionDataset b = subsample_fraction(ds, 0.3, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.transitions[i].s, b.transitions[i].s);
  }
  std::size_t prev = 0;
  for (double f : {0.1, 0.25, 0.5, 0.75, 1.0}) {
    const std::size_t n = subsample_fraction(ds, f, 5).size();
    EXPECT_GE(n, prev);
    EXPECT_GE(static_cast<double>(n), f * static_cast<double>(ds.size()));
    prev = n;
  }
}

TEST(Subsample, RejectsOutOfRangeFraction) {
  const TransitionDataset ds = episodes_with_returns({1.0});
  EXPECT_THROW(subsample_fraction(ds, 0.0, 1), ArgumentError);
  EXPECT_THROW(subsample_fraction(ds, 1.5, 1), ArgumentError);
}

TEST(NormStats, IdenticalTransitionsClampStd) {
  TransitionDataset ds;
  ds.state_dim = 2;
  ds.action_dim = 1;
  std::vector<Transition> ep(4, Transition{{1.0, 2.0}, std::vector<double>{0.0}, {3.0, 4.0}, std::nullopt, false});
  ds.append_episode(ep);
  const NormStats st = compute_norm_stats(ds);
  for (double s : st.std) {
    EXPECT_EQ(s, kStdFloor);
  }
  for (double v : standardize(std::vector<double>{1.0, 2.0, 3.0, 4.0}, st)) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(NormStats, TwoPointDataset) {
  TransitionDataset ds;
  ds.state_dim = 1;
  ds.action_dim = 1;
  ds.append_episode(std::vector<Transition>{{{-1.0}, std::vector<double>{0.0}, {-1.0}, std::nullopt, false},
                                            {{1.0}, std::vector<double>{0.0}, {1.0}, std::nullopt, false}});
  const NormStats st = compute_norm_stats(ds);
  EXPECT_EQ(st.mean, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(st.std, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(standardize(std::vector<double>{1.0, 1.0}, st), (std::vector<double>{1.0, 1.0}));
}

TEST(NormStats, StandardizedDataHasZeroMeanUnitStd) {
  TransitionDataset ds;
  ds.state_dim = 3;
  ds.action_dim = 1;
  Rng rng(77);
  std::vector<Transition> ep;
  for (int i = 0; i < 500; ++i) {
    ep.push_back({{3.0 + 2.0 * rng.normal(), rng.uniform(), -5.0 * rng.normal()},
                  std::vector<double>{0.0},
                  {rng.normal(), 10.0 + rng.normal(), rng.uniform(-4, 4)},
                  std::nullopt,
                  false});
  }
  ds.append_episode(ep);
  const NormStats st = compute_norm_stats(ds);
  // Recompute statistics on the standardized rows.
  std::vector<double> sum(6, 0.0), sq(6, 0.0);
  for (const auto& t : ds.transitions) {
    std::vector<double> x = t.s;
    x.insert(x.end(), t.s_next.begin(), t.s_next.end());
    const auto z = standardize(x, st);
    for (std::size_t k = 0; k < 6; ++k) {
      sum[k] += z[k];
      sq[k] += z[k] * z[k];
    }
  }
  const double n = static_cast<double>(ds.size());
  for (std::size_t k = 0; k < 6; ++k) {
    const double mean = sum[k] / n;
    EXPECT_LE(std::abs(mean), 1e-10);
    EXPECT_NEAR(std::sqrt(sq[k] / n - mean * mean), 1.0, 1e-10);
  }
}

TEST(NormStats, JsonRoundTrip) {
  const NormStats st{{0.5, -1.25}, {2.0, 0.125}};
  EXPECT_EQ(norm_stats_from_json(to_json(st)), st);
  EXPECT_THROW(norm_stats_from_json(to_json(NormStats{{0.0}, {0.0}})), SchemaError);
}

TEST(Validate, ExpertDatasetMayNotCarryActions) {
  TransitionDataset ds = episodes_with_returns({1.0});
  ds.tag = DatasetTag::expert;
  EXPECT_THROW(ds.validate(), SchemaError);
}
