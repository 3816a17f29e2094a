// reload_kit: command-line front end for the reward distillation pipeline.
//
// Exit codes: 0 success, 2 configuration / input error, 3 numeric failure,
// 4 hypothesis not met (check-theorem), 1 anything else.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "reload/acceptance.hpp"
#include "reload/dataset.hpp"
#include "reload/envs.hpp"
#include "reload/error.hpp"
#include "reload/iql.hpp"
#include "reload/pipeline.hpp"
#include "reload/random.hpp"
#include "reload/rnd.hpp"
#include "reload/sinkhorn.hpp"
#include "reload/theorem.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reload;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitHypothesis = 4;

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir = ".";
  bool verbose = false;
  bool quiet = false;
};

// User-supplied config document: --config file, then --set overrides.
json user_document(const Globals& g) {
  json doc = json::object();
  if (!g.config_path.empty()) {
    std::ifstream is(g.config_path);
    if (!is) {
      throw ConfigError("cannot open config file " + g.config_path);
    }
    try {
      doc = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + g.config_path + ": " + e.what());
    }
  }
  for (const std::string& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects path=value, got \"" + o + "\"");
    }
    pipeline::apply_override(doc, o.substr(0, eq), o.substr(eq + 1));
  }
  return doc;
}

pipeline::PipelineConfig load_config(const Globals& g) {
  json doc = user_document(g);
  doc["output_dir"] = g.output_dir;
  return pipeline::pipeline_config_from_json(doc);
}

// Relative paths resolve against --output-dir.
fs::path resolve(const Globals& g, const std::string& p) { return fs::path(g.output_dir) / p; }

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) {
    fs::create_directories(p.parent_path());
  }
}

void write_json(const fs::path& path, const json& j) {
  ensure_parent(path);
  std::ofstream os(path);
  if (!os) {
    throw IoError("cannot write " + path.string());
  }
  os << j.dump(2) << "\n";
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) {
        throw std::invalid_argument(item);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad seed list \"" + text + "\"");
    }
  }
  if (out.empty()) {
    throw ConfigError("seed list is empty");
  }
  return out;
}

int exit_code_for(std::exception_ptr ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const StageError& e) {
    return e.cause() ? exit_code_for(e.cause()) : kExitFailure;
  } catch (const NumericError&) {
    return kExitNumeric;
  } catch (const ScalingError&) {
    return kExitNumeric;
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const SchemaError&) {
    return kExitConfig;
  } catch (const ParseError&) {
    return kExitConfig;
  } catch (const ArgumentError&) {
    return kExitConfig;
  } catch (const ShapeError&) {
    return kExitConfig;
  } catch (const IoError&) {
    return kExitConfig;
  } catch (...) {
    return kExitFailure;
  }
}

// Annotates `ds` with the chosen backend. The model's stored reward settings
// apply unless the user config names reward fields explicitly.
data::TransitionDataset annotate_with(const Globals& g, const pipeline::PipelineConfig& cfg,
                                      const std::string& model_dir, const data::TransitionDataset& ds,
                                      const std::string& backend, const std::string& expert_path,
                                      std::size_t window) {
  auto [model, stored_reward] = rnd::load_model(resolve(g, model_dir));
  const json user = user_document(g);
  const rnd::RewardConfig reward =
      user.contains("reward") ? rnd::reward_config_from_json(user.at("reward"), stored_reward) : stored_reward;
  if (backend == "mse") {
    return rnd::annotate_dataset(model, ds, reward);
  }
  if (expert_path.empty()) {
    throw ArgumentError("--reward-backend sinkhorn needs --expert");
  }
  const data::TransitionDataset expert = data::load_dataset(resolve(g, expert_path));
  ot::HybridStats stats;
  data::TransitionDataset out = ot::hybrid_annotate(model, expert, ds, cfg.sinkhorn, window, reward, &stats);
  if (stats.unconverged > 0) {
    spdlog::warn("{} of {} Sinkhorn solves hit max_iters", stats.unconverged, stats.solves);
  }
  return out;
}

void print_run_report(const pipeline::RunReport& report) {
  std::printf("env %s  config %s  reference random %.3f expert %.3f\n", report.env_name.c_str(),
              report.config_hash.c_str(), report.reference.random, report.reference.expert);
  std::printf("%-16s %5s %22s %22s\n", "arm", "runs", "return (mean +- std)", "score (mean +- std)");
  for (const auto& s : report.summary) {
    std::printf("%-16s %5zu %11.3f +- %7.3f %11.2f +- %7.2f\n", pipeline::to_string(s.arm).c_str(), s.runs,
                s.mean_return, s.std_return, s.mean_score, s.std_score);
  }
}

void print_sweep(const pipeline::SweepReport& report) {
  std::printf("env %s  axis %s  config %s\n", report.env_name.c_str(), pipeline::to_string(report.axis).c_str(),
              report.config_hash.c_str());
  std::printf("%-10s %-16s %5s %22s %22s\n", "value", "arm", "runs", "return (mean +- std)", "score (mean +- std)");
  for (const auto& r : report.summary) {
    std::printf("%-10s %-16s %5zu %11.3f +- %7.3f %11.2f +- %7.2f\n", r.axis_value.c_str(),
                pipeline::to_string(r.stats.arm).c_str(), r.stats.runs, r.stats.mean_return, r.stats.std_return,
                r.stats.mean_score, r.stats.std_score);
  }
}

// Env names accepted by `sweep --env`, mapped onto config patches.
json env_patch(const std::string& name) {
  if (name == "point_reach" || name == "point_reach_dense") {
    return {{"kind", "point_reach"}, {"reward_kind", "dense_negative_distance"}};
  }
  if (name == "point_reach_sparse") {
    return {{"kind", "point_reach"}, {"reward_kind", "sparse_goal"}};
  }
  if (name == "gridworld" || name == "gridworld_sparse") {
    return {{"kind", "gridworld_sparse"}};
  }
  throw ConfigError("unknown env \"" + name + "\"");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward distillation for reward-free offline datasets"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON pipeline config");
  app.add_option("--set", g.overrides, "Override a config field: dotted.path=value (repeatable)");
  app.add_option("--output-dir", g.output_dir, "Root for every relative path")->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");
  app.add_flag("-q,--quiet", g.quiet, "Warnings and errors only");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Roll out a tiered dataset in the configured env");
  std::string gen_out = "dataset.jsonl";
  std::optional<std::string> gen_quality;
  std::optional<std::size_t> gen_episodes;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--out", gen_out)->capture_default_str();
  gen->add_option("--quality", gen_quality, "expert | medium | random | replay_mixture");
  gen->add_option("--episodes", gen_episodes);
  gen->add_option("--seed", gen_seed);

  // select-expert
  auto* sel = app.add_subcommand("select-expert", "Keep the K highest-return episodes, reward-free");
  std::string sel_in = "dataset.jsonl";
  std::string sel_out = "expert.jsonl";
  std::optional<std::size_t> sel_k;
  sel->add_option("--data", sel_in)->capture_default_str();
  sel->add_option("--out", sel_out)->capture_default_str();
  sel->add_option("-k,--k", sel_k, "Number of expert episodes (default: k_expert)");

  // train-rnd
  auto* trn = app.add_subcommand("train-rnd", "Train the predictor on expert transitions");
  std::string trn_data = "dataset.jsonl";
  std::string trn_expert = "expert.jsonl";
  std::string trn_out = "rnd";
  std::uint64_t trn_seed = 1;
  bool trn_no_std = false;
  trn->add_option("--data", trn_data, "Unlabeled dataset used for input statistics")->capture_default_str();
  trn->add_option("--expert", trn_expert)->capture_default_str();
  trn->add_option("--out", trn_out)->capture_default_str();
  trn->add_option("--seed", trn_seed)->capture_default_str();
  trn->add_flag("--no-standardize", trn_no_std, "Feed raw (s, s') to the networks");

  // annotate
  auto* ann = app.add_subcommand("annotate", "Label a dataset with distilled rewards");
  std::string ann_model = "rnd";
  std::string ann_data = "dataset.jsonl";
  std::string ann_out = "annotated.jsonl";
  std::string ann_backend = "mse";
  std::string ann_expert;
  std::optional<std::size_t> ann_window;
  ann->add_option("--model", ann_model)->capture_default_str();
  ann->add_option("--data", ann_data)->capture_default_str();
  ann->add_option("--out", ann_out)->capture_default_str();
  ann->add_option("--reward-backend", ann_backend)->check(CLI::IsMember({"mse", "sinkhorn"}))->capture_default_str();
  ann->add_option("--expert", ann_expert, "Expert dataset (sinkhorn backend)");
  ann->add_option("--window", ann_window, "Sinkhorn window length (default: ot_window)");

  // train-policy
  auto* tp = app.add_subcommand("train-policy", "Train an offline policy on a labeled dataset");
  std::string tp_data = "annotated.jsonl";
  std::string tp_out = "policy";
  std::string tp_algo = "iql";
  std::string tp_backend = "mse";
  std::string tp_model;
  std::string tp_expert;
  std::optional<std::size_t> tp_window;
  std::uint64_t tp_seed = 1;
  tp->add_option("--data", tp_data)->capture_default_str();
  tp->add_option("--out", tp_out)->capture_default_str();
  tp->add_option("--algo", tp_algo)->check(CLI::IsMember({"iql", "bc"}))->capture_default_str();
  tp->add_option("--model", tp_model, "Annotate --data with this RND model first");
  tp->add_option("--reward-backend", tp_backend)->check(CLI::IsMember({"mse", "sinkhorn"}))->capture_default_str();
  tp->add_option("--expert", tp_expert, "Expert dataset (sinkhorn backend)");
  tp->add_option("--window", tp_window);
  tp->add_option("--seed", tp_seed)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Roll out a saved policy");
  std::string ev_policy = "policy";
  std::string ev_out;
  std::optional<std::size_t> ev_episodes;
  std::optional<std::uint64_t> ev_seed;
  ev->add_option("--policy", ev_policy)->capture_default_str();
  ev->add_option("--episodes", ev_episodes);
  ev->add_option("--seed", ev_seed);
  ev->add_option("--out", ev_out, "Also write the result as JSON");

  // check-theorem
  auto* th = app.add_subcommand("check-theorem", "Empirical support-separation check on box distributions");
  std::string th_seeds = "1,2,3,4,5,6,7,8,9,10";
  std::optional<double> th_overlap;
  std::optional<std::size_t> th_n;
  std::string th_out = "theorem.json";
  bool th_probe = false;
  th->add_option("--seeds", th_seeds, "Comma-separated seeds")->capture_default_str();
  th->add_option("--p-overlap", th_overlap);
  th->add_option("--samples", th_n, "Samples per distribution");
  th->add_option("--out", th_out)->capture_default_str();
  th->add_flag("--probe", th_probe, "Also report the overlap monotonicity probe");

  // run
  auto* run = app.add_subcommand("run", "Full pipeline for every configured seed and arm");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Grid over one protocol axis; emits CSV summaries and plot data");
  std::string sw_axis = "data_fraction";
  std::vector<std::string> sw_envs;
  sw->add_option("--axis", sw_axis)
      ->check(CLI::IsMember({"k_expert", "data_fraction", "reward_params"}))
      ->capture_default_str();
  sw->add_option("--env", sw_envs, "Env to sweep (repeatable; default: the configured env)");

  // report
  auto* rep = app.add_subcommand("report", "Print saved run reports or sweep summaries");
  std::vector<std::string> rep_inputs;
  std::string rep_plot_dir;
  rep->add_option("inputs", rep_inputs, "report.json or sweep_*_summary.csv files")->required();
  rep->add_option("--plot-dir", rep_plot_dir, "Write plot CSVs for the sweep summaries here");

  // acceptance
  auto* acc = app.add_subcommand("acceptance", "Run the acceptance criteria");
  std::vector<int> acc_ids;
  acc->add_option("ids", acc_ids, "Criteria to run (default: all)")->check(CLI::Range(1, acceptance::kCriterionCount));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  auto logger = spdlog::stderr_color_mt("reload_kit");
  spdlog::set_default_logger(logger);
  spdlog::set_level(g.verbose ? spdlog::level::debug : g.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (gen->parsed()) {
      const auto cfg = load_config(g);
      envs::GeneratorSpec spec = cfg.generator;
      if (gen_quality) {
        spec.quality = envs::quality_from_string(*gen_quality);
      }
      if (gen_episodes) {
        spec.n_episodes = *gen_episodes;
      }
      if (gen_seed) {
        spec.seed = *gen_seed;
      }
      spec.validate();
      data::TransitionDataset ds = envs::generate_dataset(cfg.env, spec);
      ds.header_extra["config_hash"] = pipeline::config_hash(cfg);
      const fs::path out = resolve(g, gen_out);
      ensure_parent(out);
      data::save_dataset(ds, out);
      spdlog::info("wrote {} transitions in {} episodes to {}", ds.size(), ds.episode_count(), out.string());
    } else if (sel->parsed()) {
      const auto cfg = load_config(g);
      const data::TransitionDataset ds = data::load_dataset(resolve(g, sel_in));
      data::TransitionDataset expert = data::select_expert_trajectories(ds, sel_k.value_or(cfg.k_expert));
      const fs::path out = resolve(g, sel_out);
      ensure_parent(out);
      data::save_dataset(expert, out);
      spdlog::info("wrote {} expert transitions to {}", expert.size(), out.string());
    } else if (trn->parsed()) {
      const auto cfg = load_config(g);
      const data::TransitionDataset unlabeled = data::load_dataset(resolve(g, trn_data));
      const data::TransitionDataset expert = data::load_dataset(resolve(g, trn_expert));
      std::optional<data::NormStats> stats;
      if (cfg.standardize_inputs && !trn_no_std) {
        stats = data::compute_norm_stats(unlabeled);
      }
      rnd::RndModel model = rnd::build_rnd(expert.state_dim, cfg.rnd_arch,
                                           {mix_seed(trn_seed, 31), mix_seed(trn_seed, 32)}, stats);
      rnd::RndTrainConfig tc = cfg.rnd_train;
      tc.seed = mix_seed(trn_seed, 33);
      const std::vector<double> curve = rnd::train_predictor(model, expert, tc);
      rnd::save_model(model, cfg.reward, resolve(g, trn_out));
      spdlog::info("predictor loss {:.6g} -> {:.6g} over {} iterations", curve.front(), curve.back(), curve.size());
    } else if (ann->parsed()) {
      const auto cfg = load_config(g);
      const data::TransitionDataset ds = data::load_dataset(resolve(g, ann_data));
      data::TransitionDataset out =
          annotate_with(g, cfg, ann_model, ds, ann_backend, ann_expert, ann_window.value_or(cfg.ot_window));
      out.header_extra["config_hash"] = pipeline::config_hash(cfg);
      const fs::path path = resolve(g, ann_out);
      ensure_parent(path);
      data::save_dataset(out, path);
      spdlog::info("annotated {} transitions into {}", out.size(), path.string());
    } else if (tp->parsed()) {
      const auto cfg = load_config(g);
      data::TransitionDataset ds = data::load_dataset(resolve(g, tp_data));
      if (!tp_model.empty()) {
        ds = annotate_with(g, cfg, tp_model, ds, tp_backend, tp_expert, tp_window.value_or(cfg.ot_window));
      } else if (tp_backend != "mse" || !tp_expert.empty()) {
        throw ArgumentError("--reward-backend and --expert need --model");
      }
      iql::IqlConfig ic = cfg.iql;
      ic.seed = tp_seed;
      const iql::TrainResult r = tp_algo == "bc" ? iql::bc_train(ds, ic) : iql::iql_train(ds, ic);
      const fs::path out = resolve(g, tp_out);
      iql::save_policy(r.bundle, out);
      r.metrics.write_csv(out / "metrics.csv");
      spdlog::info("saved {} policy to {}", tp_algo, out.string());
    } else if (ev->parsed()) {
      const auto cfg = load_config(g);
      const iql::PolicyBundle bundle = iql::load_policy(resolve(g, ev_policy));
      const std::size_t episodes = ev_episodes.value_or(cfg.eval_episodes);
      const std::uint64_t seed = ev_seed.value_or(cfg.eval_seed);
      const iql::EvalResult r = iql::evaluate_policy(bundle, cfg.env, episodes, seed);
      const iql::ReferenceReturns ref = iql::reference_returns(cfg.env, episodes, seed);
      const double score = iql::normalized_score(r.mean_return, ref);
      std::printf("return %.4f +- %.4f over %zu episodes, normalized score %.2f\n", r.mean_return, r.std_return,
                  episodes, score);
      if (!ev_out.empty()) {
        write_json(resolve(g, ev_out), {{"mean_return", r.mean_return},
                                        {"std_return", r.std_return},
                                        {"score", score},
                                        {"returns", r.returns},
                                        {"config_hash", pipeline::config_hash(cfg)}});
      }
    } else if (th->parsed()) {
      const auto cfg = load_config(g);
      theorem::DistributionPairSpec spec;
      if (th_overlap) {
        spec.p_overlap = *th_overlap;
      }
      if (th_n) {
        spec.n_expert = *th_n;
        spec.n_universe = *th_n;
      }
      theorem::TheoremConfig tcfg;
      tcfg.arch = cfg.rnd_arch;
      tcfg.train = cfg.rnd_train;
      const std::vector<std::uint64_t> seeds = parse_seeds(th_seeds);
      json reports = json::array();
      bool all_met = true;
      std::printf("%6s %12s %12s %12s %12s %8s %8s  a b c\n", "seed", "mu_E", "in_mean", "out_mean", "overall",
                  "p_hat", "ratio");
      for (std::uint64_t seed : seeds) {
        spec.seed = seed;
        const theorem::TheoremReport r = theorem::verify_theorem(spec, tcfg);
        all_met = all_met && r.passed();
        reports.push_back(theorem::to_json(r));
        std::printf("%6llu %12.5g %12s %12.5g %12.5g %8.4f %8.3g  %c %c %c\n", static_cast<unsigned long long>(seed),
                    r.mu_e, r.in_mean ? std::to_string(*r.in_mean).c_str() : "-", r.out_mean, r.overall_mean,
                    r.p_hat, r.ratio, r.check_a ? 'y' : 'n', r.check_b ? 'y' : 'n', r.check_c ? 'y' : 'n');
      }
      json doc = {{"reports", reports}, {"all_passed", all_met}};
      if (th_probe) {
        const std::vector<double> overlaps{0.0, 0.25, 0.5, 0.75, 0.9};
        json probe = json::array();
        for (const auto& row : theorem::monotonicity_probe(spec, tcfg, overlaps, seeds)) {
          std::printf("overlap %.2f: mean excess %.5g over %zu seeds\n", row.p_overlap, row.mean_excess, row.seeds);
          probe.push_back({{"p_overlap", row.p_overlap}, {"mean_excess", row.mean_excess}, {"seeds", row.seeds}});
        }
        doc["monotonicity_probe"] = probe;
      }
      write_json(resolve(g, th_out), doc);
      if (!all_met) {
        spdlog::error("separation checks failed for at least one seed");
        return kExitHypothesis;
      }
    } else if (run->parsed()) {
      const auto cfg = load_config(g);
      print_run_report(pipeline::run_pipeline(cfg));
    } else if (sw->parsed()) {
      const pipeline::SweepAxis axis = pipeline::axis_from_string(sw_axis);
      std::vector<pipeline::SweepReport> reports;
      if (sw_envs.empty()) {
        reports.push_back(pipeline::run_sweep(load_config(g), axis));
      } else {
        for (const std::string& name : sw_envs) {
          json doc = user_document(g);
          doc["env"] = doc.contains("env") ? doc["env"] : json::object();
          doc["env"].merge_patch(env_patch(name));
          pipeline::PipelineConfig base = pipeline::pipeline_config_from_json(doc);
          base.output_dir = fs::path(g.output_dir) / base.env.name();
          reports.push_back(pipeline::run_sweep(base, axis));
        }
      }
      for (const auto& r : reports) {
        print_sweep(r);
      }
      for (const auto& p : pipeline::emit_plot_data(reports, fs::path(g.output_dir) / "plots")) {
        spdlog::info("plot data: {}", p.string());
      }
    } else if (rep->parsed()) {
      std::vector<pipeline::SweepReport> sweeps;
      for (const std::string& input : rep_inputs) {
        const fs::path path = resolve(g, input);
        if (path.extension() == ".json") {
          std::ifstream is(path);
          if (!is) {
            throw IoError("cannot open " + path.string());
          }
          json j;
          try {
            j = json::parse(is);
          } catch (const json::parse_error& e) {
            throw ParseError(0, path.string() + ": " + e.what());
          }
          print_run_report(pipeline::run_report_from_json(j));
        } else {
          sweeps.push_back(pipeline::read_sweep_summary_csv(path));
          print_sweep(sweeps.back());
        }
      }
      if (!rep_plot_dir.empty()) {
        for (const auto& p : pipeline::emit_plot_data(sweeps, resolve(g, rep_plot_dir))) {
          spdlog::info("plot data: {}", p.string());
        }
      }
    } else if (acc->parsed()) {
      if (acc_ids.empty()) {
        for (int id = 1; id <= acceptance::kCriterionCount; ++id) {
          acc_ids.push_back(id);
        }
      }
      const fs::path work = fs::path(g.output_dir) / "acceptance";
      std::size_t passed = 0;
      for (int id : acc_ids) {
        const acceptance::CriterionResult r = acceptance::run_criterion(id, work);
        passed += r.passed ? 1 : 0;
        std::printf("%s\n", acceptance::format_line(r).c_str());
        std::fflush(stdout);
      }
      std::printf("%zu/%zu criteria passed\n", passed, acc_ids.size());
      return passed == acc_ids.size() ? kExitOk : kExitFailure;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(std::current_exception());
  }
  return kExitOk;
}
