#include "reload/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "reload/error.hpp"
#include "reload/random.hpp"

namespace reload::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) {
    sum += x;
  }
  return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v) {
  if (v.empty()) {
    return 0.0;
  }
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) {
    acc += (x - m) * (x - m);
  }
  return std::sqrt(acc / static_cast<double>(v.size()));
}

json rnd_train_to_json(const rnd::RndTrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"iterations", cfg.iterations},
          {"optimizer", cfg.optimizer == nn::OptimizerKind::adam ? "adam" : "sgd"}};
}

rnd::RndTrainConfig rnd_train_from_json(const json& j) {
  rnd::RndTrainConfig cfg;
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.iterations = j.value("iterations", cfg.iterations);
  const std::string opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam") {
    cfg.optimizer = nn::OptimizerKind::adam;
  } else if (opt == "sgd") {
    cfg.optimizer = nn::OptimizerKind::sgd;
  } else {
    throw ConfigError("unknown optimizer \"" + opt + "\"");
  }
  cfg.validate();
  return cfg;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  os << text;
  if (!os) {
    throw IoError("write failed for " + path.string());
  }
}

[[noreturn]] void rethrow_in_stage(const std::string& stage, std::uint64_t seed, const fs::path& dir) {
  const std::exception_ptr cause = std::current_exception();
  std::string what = "unknown failure";
  try {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    what = e.what();
  } catch (...) {
  }
  throw StageError(stage, "seed " + std::to_string(seed) + ", artifacts kept in " + dir.string() + ": " + what, cause);
}

template <class F>
auto run_stage(const std::string& stage, std::uint64_t seed, const fs::path& dir, F&& f) -> decltype(f()) {
  try {
    spdlog::info("seed {}: {}", seed, stage);
    return f();
  } catch (...) {
    rethrow_in_stage(stage, seed, dir);
  }
}

void write_metrics_csv(const iql::TrainMetrics& metrics, const std::string& hash, const fs::path& path) {
  std::string out = "step,v_loss,q_loss,pi_loss,mean_weight,config_hash\n";
  for (const auto& r : metrics.rows) {
    out += std::to_string(r.step) + "," + fmt(r.v_loss) + "," + fmt(r.q_loss) + "," + fmt(r.pi_loss) + "," +
           fmt(r.mean_weight) + "," + hash + "\n";
  }
  write_text(path, out);
}

// Everything one seed produces, in arm order.
std::vector<RunResult> run_seed(const PipelineConfig& cfg, const std::string& hash, std::uint64_t seed,
                                const iql::ReferenceReturns& ref) {
  const fs::path dir = cfg.output_dir / ("seed_" + std::to_string(seed));
  fs::create_directories(dir);

  data::TransitionDataset full = run_stage("generate", seed, dir, [&] {
    envs::GeneratorSpec gen = cfg.generator;
    gen.seed = mix_seed(cfg.generator.seed, seed);
    data::TransitionDataset ds = envs::generate_dataset(cfg.env, gen);
    ds.header_extra["config_hash"] = hash;
    data::save_dataset(ds, dir / "dataset.jsonl");
    return ds;
  });

  data::TransitionDataset expert = run_stage("select_expert", seed, dir, [&] {
    data::TransitionDataset e = data::select_expert_trajectories(full, cfg.k_expert);
    e.header_extra["config_hash"] = hash;
    data::save_dataset(e, dir / "expert.jsonl");
    return e;
  });

  data::TransitionDataset train = run_stage("subsample", seed, dir, [&] {
    if (cfg.data_fraction >= 1.0) {
      return full;
    }
    data::TransitionDataset sub = data::subsample_fraction(full, cfg.data_fraction, mix_seed(seed, 21));
    sub.header_extra["config_hash"] = hash;
    data::save_dataset(sub, dir / "train.jsonl");
    return sub;
  });

  const bool needs_rnd = std::any_of(cfg.arms.begin(), cfg.arms.end(),
                                     [](Arm a) { return a == Arm::reload || a == Arm::reload_otr; });
  std::optional<rnd::RndModel> model;
  if (needs_rnd) {
    model = run_stage("train_rnd", seed, dir, [&] {
      std::optional<data::NormStats> stats;
      if (cfg.standardize_inputs) {
        stats = data::compute_norm_stats(train);
      }
      rnd::RndModel m =
          rnd::build_rnd(cfg.env.state_dim, cfg.rnd_arch, {mix_seed(seed, 31), mix_seed(seed, 32)}, stats);
      rnd::RndTrainConfig tc = cfg.rnd_train;
      tc.seed = mix_seed(seed, 33);
      rnd::train_predictor(m, expert, tc);
      rnd::save_model(m, cfg.reward, dir / "rnd");
      return m;
    });
  }

  std::vector<RunResult> results;
  for (Arm arm : cfg.arms) {
    const std::string name = to_string(arm);
    const fs::path policy_dir = dir / "policies" / name;
    const data::TransitionDataset labeled = run_stage("annotate/" + name, seed, dir, [&] {
      data::TransitionDataset ds;
      switch (arm) {
        case Arm::reload:
          ds = rnd::annotate_dataset(*model, train, cfg.reward);
          break;
        case Arm::reload_otr: {
          ot::SinkhornConfig sc = cfg.sinkhorn;
          sc.seed = mix_seed(seed, 34);
          ds = ot::hybrid_annotate(*model, expert, train, sc, cfg.ot_window, cfg.reward);
          break;
        }
        case Arm::iql_true_reward:
          ds = train;
          for (auto& t : ds.transitions) {
            *t.r += cfg.true_reward_bias;
          }
          ds.header_extra["reward_source"] = "environment";
          ds.header_extra["bias"] = cfg.true_reward_bias;
          break;
        case Arm::bc:
          return train;
      }
      ds.header_extra["config_hash"] = hash;
      data::save_dataset(ds, dir / ("annotated_" + name + ".jsonl"));
      return ds;
    });

    const iql::TrainResult trained = run_stage("train_policy/" + name, seed, dir, [&] {
      iql::IqlConfig ic = cfg.iql;
      ic.seed = seed;
      iql::TrainResult r = arm == Arm::bc ? iql::bc_train(labeled, ic) : iql::iql_train(labeled, ic);
      iql::save_policy(r.bundle, policy_dir);
      write_metrics_csv(r.metrics, hash, policy_dir / "metrics.csv");
      return r;
    });

    const iql::EvalResult eval = run_stage("evaluate/" + name, seed, dir, [&] {
      return iql::evaluate_policy(trained.bundle, cfg.env, cfg.eval_episodes, cfg.eval_seed);
    });
    RunResult rr{arm, seed, eval.mean_return, eval.std_return, iql::normalized_score(eval.mean_return, ref)};
    write_text(policy_dir / "eval.json", json{{"arm", name},
                                              {"seed", seed},
                                              {"mean_return", rr.mean_return},
                                              {"std_return", rr.std_return},
                                              {"score", rr.score},
                                              {"returns", eval.returns},
                                              {"config_hash", hash}}
                                             .dump(2) +
                                             "\n");
    results.push_back(rr);
  }
  return results;
}

// Runs jobs [0, n) on up to worker_threads() threads; results stay index-ordered.
template <class R, class F>
std::vector<R> parallel_map(std::size_t n, F&& job) {
  std::vector<R> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back(worker);
    }
    for (auto& th : pool) {
      th.join();
    }
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return out;
}

std::vector<ArmSummary> summarize(const std::vector<Arm>& arms, const std::vector<RunResult>& runs) {
  std::vector<ArmSummary> out;
  for (Arm arm : arms) {
    std::vector<double> rets;
    std::vector<double> scores;
    for (const auto& r : runs) {
      if (r.arm == arm) {
        rets.push_back(r.mean_return);
        scores.push_back(r.score);
      }
    }
    out.push_back({arm, rets.size(), mean_of(rets), pop_std(rets), mean_of(scores), pop_std(scores)});
  }
  return out;
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    line += (i ? "," : "") + cells[i];
  }
  return line + "\n";
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) {
    out.push_back(cell);
  }
  return out;
}

}  // namespace

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::reload:
      return "reload";
    case Arm::iql_true_reward:
      return "iql_true_reward";
    case Arm::bc:
      return "bc";
    case Arm::reload_otr:
      return "reload_otr";
  }
  return "unknown";
}

Arm arm_from_string(const std::string& name) {
  for (Arm a : {Arm::reload, Arm::iql_true_reward, Arm::bc, Arm::reload_otr}) {
    if (to_string(a) == name) {
      return a;
    }
  }
  throw ConfigError("unknown arm \"" + name + "\"");
}

PipelineConfig PipelineConfig::preset(envs::EnvKind kind) {
  PipelineConfig cfg;
  cfg.generator.quality = envs::PolicyQuality::replay_mixture;
  cfg.generator.seed = 7;
  // Rewards are shifted to (-alpha, 0]: episodes end at the goal, so positive
  // per-step rewards would pay the agent for avoiding it.
  cfg.reward.bias = -cfg.reward.alpha;
  if (kind == envs::EnvKind::gridworld_sparse) {
    cfg.env = envs::EnvSpec::gridworld();
    cfg.reward.beta = 1.0;
    cfg.iql = iql::IqlConfig::antmaze();
    cfg.true_reward_bias = -1.0;
  } else {
    cfg.env = envs::EnvSpec::point_reach();
    cfg.iql = iql::IqlConfig::locomotion();
  }
  return cfg;
}

void PipelineConfig::validate() const {
  env.validate();
  generator.validate();
  rnd_train.validate();
  reward.validate();
  iql.validate();
  sinkhorn.validate();
  if (k_expert < 1) {
    throw ConfigError("PipelineConfig: k_expert must be >= 1");
  }
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) {
    throw ConfigError("PipelineConfig: data_fraction must lie in (0, 1]");
  }
  if (seeds.empty()) {
    throw ConfigError("PipelineConfig: seeds must be nonempty");
  }
  if (arms.empty()) {
    throw ConfigError("PipelineConfig: at least one arm is required");
  }
  if (ot_window < 1) {
    throw ConfigError("PipelineConfig: ot_window must be >= 1");
  }
  if (eval_episodes < 1) {
    throw ConfigError("PipelineConfig: eval_episodes must be >= 1");
  }
  if (rnd_arch.embedding_dim < 1) {
    throw ConfigError("PipelineConfig: embedding_dim must be >= 1");
  }
}

json to_json(const PipelineConfig& cfg) {
  std::vector<std::string> arms;
  for (Arm a : cfg.arms) {
    arms.push_back(to_string(a));
  }
  return {{"env", envs::to_json(cfg.env)},
          {"generator", envs::to_json(cfg.generator)},
          {"k_expert", cfg.k_expert},
          {"data_fraction", cfg.data_fraction},
          {"rnd",
           {{"embedding_dim", cfg.rnd_arch.embedding_dim},
            {"hidden_dims", cfg.rnd_arch.hidden_dims},
            {"standardize_inputs", cfg.standardize_inputs},
            {"train", rnd_train_to_json(cfg.rnd_train)}}},
          {"reward", rnd::to_json(cfg.reward)},
          {"true_reward_bias", cfg.true_reward_bias},
          {"iql", iql::to_json(cfg.iql)},
          {"sinkhorn", ot::to_json(cfg.sinkhorn)},
          {"ot_window", cfg.ot_window},
          {"arms", arms},
          {"seeds", cfg.seeds},
          {"eval_episodes", cfg.eval_episodes},
          {"eval_seed", cfg.eval_seed},
          {"output_dir", cfg.output_dir.string()}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  if (!j.is_object()) {
    throw ConfigError("pipeline config must be a JSON object");
  }
  try {
    envs::EnvKind kind = envs::EnvKind::point_reach;
    if (j.contains("env")) {
      kind = envs::env_spec_from_json(j.at("env")).kind;
    }
    json doc = to_json(PipelineConfig::preset(kind));
    if (j.contains("env") && j.at("env").contains("reward_kind") &&
        j.at("env").at("reward_kind") == "sparse_goal" && !j.contains("true_reward_bias")) {
      doc["true_reward_bias"] = -1.0;
    }
    doc.merge_patch(j);

    PipelineConfig cfg;
    cfg.env = envs::env_spec_from_json(doc.at("env"));
    cfg.generator = envs::generator_spec_from_json(doc.at("generator"));
    cfg.k_expert = doc.at("k_expert").get<std::size_t>();
    cfg.data_fraction = doc.at("data_fraction").get<double>();
    const json& r = doc.at("rnd");
    cfg.rnd_arch.embedding_dim = r.at("embedding_dim").get<std::size_t>();
    cfg.rnd_arch.hidden_dims = r.at("hidden_dims").get<std::vector<std::size_t>>();
    cfg.standardize_inputs = r.at("standardize_inputs").get<bool>();
    cfg.rnd_train = rnd_train_from_json(r.at("train"));
    cfg.reward = rnd::reward_config_from_json(doc.at("reward"));
    cfg.true_reward_bias = doc.at("true_reward_bias").get<double>();
    cfg.iql = iql::iql_config_from_json(doc.at("iql"));
    cfg.sinkhorn = ot::sinkhorn_config_from_json(doc.at("sinkhorn"));
    cfg.ot_window = doc.at("ot_window").get<std::size_t>();
    cfg.arms.clear();
    for (const auto& a : doc.at("arms")) {
      cfg.arms.push_back(arm_from_string(a.get<std::string>()));
    }
    cfg.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.eval_episodes = doc.at("eval_episodes").get<std::size_t>();
    cfg.eval_seed = doc.at("eval_seed").get<std::uint64_t>();
    cfg.output_dir = doc.at("output_dir").get<std::string>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
}

void apply_override(json& doc, const std::string& dotted_path, const std::string& value) {
  if (dotted_path.empty()) {
    throw ConfigError("override path is empty");
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json* node = &doc;
  const std::vector<std::string> parts = split(dotted_path, '.');
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) {
      throw ConfigError("override path \"" + dotted_path + "\" crosses a non-object field");
    }
    node = &(*node)[parts[i]];
    if (node->is_null()) {
      *node = json::object();
    }
  }
  if (!node->is_object()) {
    throw ConfigError("override path \"" + dotted_path + "\" crosses a non-object field");
  }
  (*node)[parts.back()] = parsed;
}

std::string config_hash(const PipelineConfig& cfg) {
  json j = to_json(cfg);
  // Where artifacts land does not change what they contain.
  j.erase("output_dir");
  return hex16(fnv1a(j.dump()));
}

const ArmSummary& RunReport::arm(Arm a) const {
  for (const auto& s : summary) {
    if (s.arm == a) {
      return s;
    }
  }
  throw ArgumentError("report has no arm \"" + to_string(a) + "\"");
}

json to_json(const RunReport& report) {
  json runs = json::array();
  for (const auto& r : report.runs) {
    runs.push_back({{"arm", to_string(r.arm)},
                    {"seed", r.seed},
                    {"mean_return", r.mean_return},
                    {"std_return", r.std_return},
                    {"score", r.score}});
  }
  json summary = json::array();
  for (const auto& s : report.summary) {
    summary.push_back({{"arm", to_string(s.arm)},
                       {"runs", s.runs},
                       {"mean_return", s.mean_return},
                       {"std_return", s.std_return},
                       {"mean_score", s.mean_score},
                       {"std_score", s.std_score}});
  }
  return {{"config_hash", report.config_hash},
          {"env", report.env_name},
          {"reference", {{"random", report.reference.random}, {"expert", report.reference.expert}}},
          {"runs", runs},
          {"summary", summary}};
}

RunReport run_report_from_json(const json& j) {
  try {
    RunReport report;
    report.config_hash = j.at("config_hash").get<std::string>();
    report.env_name = j.at("env").get<std::string>();
    report.reference.random = j.at("reference").at("random").get<double>();
    report.reference.expert = j.at("reference").at("expert").get<double>();
    for (const auto& r : j.at("runs")) {
      report.runs.push_back({arm_from_string(r.at("arm").get<std::string>()), r.at("seed").get<std::uint64_t>(),
                             r.at("mean_return").get<double>(), r.at("std_return").get<double>(),
                             r.at("score").get<double>()});
    }
    for (const auto& s : j.at("summary")) {
      report.summary.push_back({arm_from_string(s.at("arm").get<std::string>()), s.at("runs").get<std::size_t>(),
                                s.at("mean_return").get<double>(), s.at("std_return").get<double>(),
                                s.at("mean_score").get<double>(), s.at("std_score").get<double>()});
    }
    return report;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("run report: ") + e.what());
  }
}

RunReport run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  RunReport report;
  report.config_hash = config_hash(cfg);
  report.env_name = cfg.env.name();
  write_text(cfg.output_dir / "config.json", to_json(cfg).dump(2) + "\n");
  report.reference = iql::reference_returns(cfg.env, cfg.eval_episodes, cfg.eval_seed);

  const auto per_seed = parallel_map<std::vector<RunResult>>(cfg.seeds.size(), [&](std::size_t i) {
    return run_seed(cfg, report.config_hash, cfg.seeds[i], report.reference);
  });
  for (const auto& rs : per_seed) {
    report.runs.insert(report.runs.end(), rs.begin(), rs.end());
  }
  report.summary = summarize(cfg.arms, report.runs);
  write_text(cfg.output_dir / "report.json", to_json(report).dump(2) + "\n");
  return report;
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::k_expert:
      return "k_expert";
    case SweepAxis::data_fraction:
      return "data_fraction";
    case SweepAxis::reward_params:
      return "reward_params";
  }
  return "unknown";
}

SweepAxis axis_from_string(const std::string& name) {
  for (SweepAxis a : {SweepAxis::k_expert, SweepAxis::data_fraction, SweepAxis::reward_params}) {
    if (to_string(a) == name) {
      return a;
    }
  }
  throw ConfigError("unknown sweep axis \"" + name + "\"");
}

std::vector<std::string> axis_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::k_expert:
      return {"1", "5"};
    case SweepAxis::data_fraction:
      return {"0.1", "0.25", "0.5", "1.0"};
    case SweepAxis::reward_params:
      return {"a5_b0.5", "a10_b5"};
  }
  return {};
}

namespace {

PipelineConfig at_point(PipelineConfig cfg, SweepAxis axis, const std::string& value) {
  switch (axis) {
    case SweepAxis::k_expert:
      cfg.k_expert = std::stoul(value);
      break;
    case SweepAxis::data_fraction:
      cfg.data_fraction = std::stod(value);
      break;
    case SweepAxis::reward_params:
      if (value == "a5_b0.5") {
        cfg.reward.alpha = 5.0;
        cfg.reward.beta = 0.5;
      } else {
        cfg.reward.alpha = 10.0;
        cfg.reward.beta = 5.0;
      }
      break;
  }
  return cfg;
}

}  // namespace

SweepReport run_sweep(const PipelineConfig& cfg, SweepAxis axis) {
  cfg.validate();
  SweepReport report;
  report.axis = axis;
  report.env_name = cfg.env.name();
  report.config_hash = config_hash(cfg);
  const fs::path root = cfg.output_dir / to_string(axis);
  for (const std::string& value : axis_values(axis)) {
    PipelineConfig point = at_point(cfg, axis, value);
    point.output_dir = root / value;
    const RunReport run = run_pipeline(point);
    for (const auto& r : run.runs) {
      report.rows.push_back({value, r.seed, r.arm, r.mean_return, r.score});
    }
    for (const auto& s : run.summary) {
      report.summary.push_back({value, s});
    }
  }
  write_sweep_csv(report, cfg.output_dir / ("sweep_" + to_string(axis) + ".csv"));
  write_sweep_summary_csv(report, cfg.output_dir / ("sweep_" + to_string(axis) + "_summary.csv"));
  return report;
}

void write_sweep_csv(const SweepReport& report, const fs::path& path) {
  std::string out = csv_line({"axis_value", "seed", "arm", "return", "score", "config_hash"});
  for (const auto& r : report.rows) {
    out += csv_line({r.axis_value, std::to_string(r.seed), to_string(r.arm), fmt(r.ret), fmt(r.score),
                     report.config_hash});
  }
  write_text(path, out);
}

void write_sweep_summary_csv(const SweepReport& report, const fs::path& path) {
  std::string out = csv_line({"env", "axis", "axis_value", "arm", "runs", "mean_return", "std_return", "mean_score",
                              "std_score", "config_hash"});
  for (const auto& r : report.summary) {
    out += csv_line({report.env_name, to_string(report.axis), r.axis_value, to_string(r.stats.arm),
                     std::to_string(r.stats.runs), fmt(r.stats.mean_return), fmt(r.stats.std_return),
                     fmt(r.stats.mean_score), fmt(r.stats.std_score), report.config_hash});
  }
  write_text(path, out);
}

SweepReport read_sweep_summary_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw IoError("cannot open " + path.string());
  }
  SweepReport report;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) {
      continue;
    }
    const auto c = split(line, ',');
    if (c.size() != 10) {
      throw ParseError(lineno, "summary row needs 10 columns");
    }
    try {
      report.env_name = c[0];
      report.axis = axis_from_string(c[1]);
      report.config_hash = c[9];
      ArmSummary s{arm_from_string(c[3]), std::stoul(c[4]), std::stod(c[5]), std::stod(c[6]), std::stod(c[7]),
                   std::stod(c[8])};
      report.summary.push_back({c[2], s});
    } catch (const std::logic_error& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return report;
}

std::vector<fs::path> emit_plot_data(const std::vector<SweepReport>& reports, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (const auto& report : reports) {
    const fs::path path = dir / ("plot_" + (report.env_name.empty() ? std::string("none") : report.env_name) + "_" +
                                 to_string(report.axis) + ".csv");
    std::string out = csv_line({"axis_value", "arm", "mean_return", "std_return", "mean_score", "config_hash"});
    for (const auto& r : report.summary) {
      out += csv_line({r.axis_value, to_string(r.stats.arm), fmt(r.stats.mean_return), fmt(r.stats.std_return),
                       fmt(r.stats.mean_score), report.config_hash});
    }
    write_text(path, out);
    written.push_back(path);
  }
  return written;
}

std::size_t worker_threads() {
  if (const char* v = std::getenv("RELOAD_KIT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1) {
      throw ConfigError("RELOAD_KIT_THREADS must be a positive integer");
    }
    return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace reload::pipeline
