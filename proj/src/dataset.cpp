#include "reload/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "reload/error.hpp"
#include "reload/random.hpp"

namespace reload::data {

namespace {

void append_real(std::string& out, double v) {
  if (!std::isfinite(v)) {
    throw ArgumentError("save_dataset: non-finite value cannot be serialized");
  }
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

void append_array(std::string& out, std::span<const double> values) {
  out.push_back('[');
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) {
      out.push_back(',');
    }
    append_real(out, values[i]);
  }
  out.push_back(']');
}

std::vector<double> read_vector(const nlohmann::json& j, const char* key, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_array()) {
    throw ParseError(line, std::string("field \"") + key + "\" must be an array");
  }
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number()) {
      throw ParseError(line, std::string("field \"") + key + "\" must contain numbers");
    }
    out.push_back(v.get<double>());
  }
  return out;
}

TransitionDataset with_same_header(const TransitionDataset& ds) {
  TransitionDataset out;
  out.state_dim = ds.state_dim;
  out.action_dim = ds.action_dim;
  out.tag = ds.tag;
  out.header_extra = ds.header_extra;
  return out;
}

}  // namespace

std::string to_string(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::unlabeled_agent:
      return "unlabeled_agent";
    case DatasetTag::expert:
      return "expert";
    case DatasetTag::annotated:
      return "annotated";
  }
  return "unknown";
}

DatasetTag tag_from_string(const std::string& name) {
  if (name == "unlabeled_agent") {
    return DatasetTag::unlabeled_agent;
  }
  if (name == "expert") {
    return DatasetTag::expert;
  }
  if (name == "annotated") {
    return DatasetTag::annotated;
  }
  throw SchemaError("unknown dataset tag \"" + name + "\"");
}

std::pair<std::size_t, std::size_t> TransitionDataset::episode_range(std::size_t e) const {
  if (e >= episode_starts.size()) {
    throw ArgumentError("episode index out of range");
  }
  const std::size_t end = e + 1 < episode_starts.size() ? episode_starts[e + 1] : transitions.size();
  return {episode_starts[e], end};
}

bool TransitionDataset::labeled() const {
  return !transitions.empty() &&
         std::all_of(transitions.begin(), transitions.end(), [](const Transition& t) { return t.r.has_value(); });
}

bool TransitionDataset::has_actions() const {
  return std::any_of(transitions.begin(), transitions.end(), [](const Transition& t) { return t.a.has_value(); });
}

void TransitionDataset::append_episode(std::span<const Transition> episode) {
  if (episode.empty()) {
    return;
  }
  episode_starts.push_back(transitions.size());
  transitions.insert(transitions.end(), episode.begin(), episode.end());
}

void TransitionDataset::validate() const {
  if (!transitions.empty()) {
    if (episode_starts.empty() || episode_starts.front() != 0) {
      throw SchemaError("episode_starts must begin at 0");
    }
  }
  for (std::size_t i = 0; i < episode_starts.size(); ++i) {
    if (episode_starts[i] >= transitions.size() || (i > 0 && episode_starts[i] <= episode_starts[i - 1])) {
      throw SchemaError("episode_starts must be strictly increasing and within the dataset");
    }
  }
  const bool first_labeled = !transitions.empty() && transitions.front().r.has_value();
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    const Transition& t = transitions[i];
    const std::string where = " (transition " + std::to_string(i) + ")";
    if (t.s.size() != state_dim || t.s_next.size() != state_dim) {
      throw SchemaError("state dimension mismatch" + where);
    }
    if (t.a && t.a->size() != action_dim) {
      throw SchemaError("action dimension mismatch" + where);
    }
    if (t.r.has_value() != first_labeled) {
      throw SchemaError("rewards must be present on all transitions or none" + where);
    }
    if (tag == DatasetTag::expert && (t.a || t.r)) {
      throw SchemaError("expert datasets may not carry actions or rewards" + where);
    }
  }
}

std::vector<double> episode_returns(const TransitionDataset& ds) {
  if (!ds.labeled()) {
    throw ArgumentError("episode_returns: dataset is not labeled");
  }
  std::vector<double> returns;
  returns.reserve(ds.episode_count());
  for (std::size_t e = 0; e < ds.episode_count(); ++e) {
    const auto [begin, end] = ds.episode_range(e);
    double total = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      total += *ds.transitions[i].r;
    }
    returns.push_back(total);
  }
  return returns;
}

void save_dataset(const TransitionDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  nlohmann::json header = ds.header_extra.is_object() ? ds.header_extra : nlohmann::json::object();
  header["state_dim"] = ds.state_dim;
  header["action_dim"] = ds.action_dim;
  header["labeled"] = ds.labeled();
  header["tag"] = to_string(ds.tag);
  os << header.dump() << '\n';

  std::string line;
  std::size_t episode = 0;
  for (std::size_t i = 0; i < ds.transitions.size(); ++i) {
    while (episode + 1 < ds.episode_starts.size() && ds.episode_starts[episode + 1] <= i) {
      ++episode;
    }
    const Transition& t = ds.transitions[i];
    line.clear();
    line += "{\"s\":";
    append_array(line, t.s);
    line += ",\"a\":";
    if (t.a) {
      append_array(line, *t.a);
    } else {
      line += "null";
    }
    line += ",\"s2\":";
    append_array(line, t.s_next);
    line += ",\"r\":";
    if (t.r) {
      append_real(line, *t.r);
    } else {
      line += "null";
    }
    line += t.done ? ",\"done\":true" : ",\"done\":false";
    line += ",\"ep\":" + std::to_string(episode) + "}\n";
    os << line;
  }
  if (!os) {
    throw IoError("write failed for " + path.string());
  }
}

TransitionDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError("cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(is, line)) {
    throw ParseError(1, "missing header record");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("malformed header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("state_dim") || !header.contains("action_dim") ||
      !header.contains("labeled")) {
    throw ParseError(1, "header needs state_dim, action_dim and labeled");
  }

  TransitionDataset ds;
  bool labeled = false;
  try {
    ds.state_dim = header.at("state_dim").get<std::size_t>();
    ds.action_dim = header.at("action_dim").get<std::size_t>();
    labeled = header.at("labeled").get<bool>();
    if (header.contains("tag")) {
      ds.tag = tag_from_string(header.at("tag").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("bad header field: ") + e.what());
  }
  for (const char* key : {"state_dim", "action_dim", "labeled", "tag"}) {
    header.erase(key);
  }
  ds.header_extra = std::move(header);

  std::size_t line_no = 1;
  std::int64_t current_episode = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("malformed record: ") + e.what());
    }
    if (!rec.is_object()) {
      throw ParseError(line_no, "record must be a JSON object");
    }
    Transition t;
    t.s = read_vector(rec, "s", line_no);
    t.s_next = read_vector(rec, "s2", line_no);
    if (rec.contains("a") && !rec["a"].is_null()) {
      t.a = read_vector(rec, "a", line_no);
    }
    if (rec.contains("r") && !rec["r"].is_null()) {
      if (!rec["r"].is_number()) {
        throw ParseError(line_no, "field \"r\" must be a number or null");
      }
      t.r = rec["r"].get<double>();
    }
    if (!rec.contains("done") || !rec["done"].is_boolean()) {
      throw ParseError(line_no, "field \"done\" must be a boolean");
    }
    t.done = rec["done"].get<bool>();
    if (!rec.contains("ep") || !rec["ep"].is_number_integer()) {
      throw ParseError(line_no, "field \"ep\" must be an integer");
    }
    const auto ep = rec["ep"].get<std::int64_t>();

    const std::string where = " at line " + std::to_string(line_no);
    if (t.s.size() != ds.state_dim || t.s_next.size() != ds.state_dim) {
      throw SchemaError("state dimension differs from header" + where);
    }
    if (t.a && t.a->size() != ds.action_dim) {
      throw SchemaError("action dimension differs from header" + where);
    }
    if (t.r.has_value() != labeled) {
      throw SchemaError(std::string(labeled ? "missing reward in labeled dataset" : "reward in unlabeled dataset") +
                        where);
    }
    if (ep != current_episode) {
      ds.episode_starts.push_back(ds.transitions.size());
      current_episode = ep;
    }
    ds.transitions.push_back(std::move(t));
  }
  ds.validate();
  return ds;
}

TransitionDataset select_expert_trajectories(const TransitionDataset& ds, std::size_t k) {
  if (k == 0) {
    throw ArgumentError("select_expert_trajectories: k must be positive");
  }
  if (k > ds.episode_count()) {
    throw ArgumentError("select_expert_trajectories: k=" + std::to_string(k) + " exceeds episode count " +
                        std::to_string(ds.episode_count()));
  }
  const std::vector<double> returns = episode_returns(ds);
  std::vector<std::size_t> order(returns.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());

  TransitionDataset expert = with_same_header(ds);
  expert.tag = DatasetTag::expert;
  for (std::size_t e : order) {
    const auto [begin, end] = ds.episode_range(e);
    expert.episode_starts.push_back(expert.transitions.size());
    for (std::size_t i = begin; i < end; ++i) {
      Transition t = ds.transitions[i];
      t.a.reset();
      t.r.reset();
      expert.transitions.push_back(std::move(t));
    }
  }
  return expert;
}

TransitionDataset subsample_fraction(const TransitionDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ArgumentError("subsample_fraction: fraction must lie in (0, 1]");
  }
  if (fraction == 1.0) {
    return ds;
  }
  std::vector<std::size_t> order(ds.episode_count());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  const double needed = fraction * static_cast<double>(ds.size());
  std::vector<std::size_t> kept;
  std::size_t count = 0;
  for (std::size_t e : order) {
    if (static_cast<double>(count) >= needed) {
      break;
    }
    const auto [begin, end] = ds.episode_range(e);
    count += end - begin;
    kept.push_back(e);
  }
  std::sort(kept.begin(), kept.end());

  TransitionDataset out = with_same_header(ds);
  for (std::size_t e : kept) {
    const auto [begin, end] = ds.episode_range(e);
    out.append_episode(std::span<const Transition>(ds.transitions.data() + begin, end - begin));
  }
  return out;
}

NormStats compute_norm_stats(const TransitionDataset& ds) {
  if (ds.empty()) {
    throw ArgumentError("compute_norm_stats: empty dataset");
  }
  const std::size_t dim = 2 * ds.state_dim;
  NormStats stats{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  const double n = static_cast<double>(ds.size());
  auto component = [&](const Transition& t, std::size_t c) {
    return c < ds.state_dim ? t.s[c] : t.s_next[c - ds.state_dim];
  };
  for (const Transition& t : ds.transitions) {
    for (std::size_t c = 0; c < dim; ++c) {
      stats.mean[c] += component(t, c);
    }
  }
  for (double& m : stats.mean) {
    m /= n;
  }
  for (const Transition& t : ds.transitions) {
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = component(t, c) - stats.mean[c];
      stats.std[c] += d * d;
    }
  }
  for (double& s : stats.std) {
    s = std::max(std::sqrt(s / n), kStdFloor);
  }
  return stats;
}

std::vector<double> standardize(std::span<const double> x, const NormStats& stats) {
  if (x.size() != stats.mean.size()) {
    throw ShapeError("standardize: input has " + std::to_string(x.size()) + " components, stats have " +
                     std::to_string(stats.mean.size()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (x[i] - stats.mean[i]) / stats.std[i];
  }
  return out;
}

nlohmann::json to_json(const NormStats& stats) {
  return {{"mean", stats.mean}, {"std", stats.std}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats stats{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  if (stats.mean.size() != stats.std.size()) {
    throw SchemaError("norm stats: mean and std lengths differ");
  }
  for (double s : stats.std) {
    if (!(s > 0.0)) {
      throw SchemaError("norm stats: std components must be positive");
    }
  }
  return stats;
}

}  // namespace reload::data
