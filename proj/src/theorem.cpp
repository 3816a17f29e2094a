#include "reload/theorem.hpp"

#include <cmath>

#include "reload/error.hpp"
#include "reload/random.hpp"

namespace reload::theorem {

namespace {

void sample_box(const Box& box, Rng& rng, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = rng.uniform(box.low[i], box.high[i]);
  }
}

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) {
    sum += x;
  }
  return sum / static_cast<double>(v.size());
}

}  // namespace

bool Box::contains(std::span<const double> x) const {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < low[i] || x[i] > high[i]) {
      return false;
    }
  }
  return true;
}

double Box::volume() const {
  double v = 1.0;
  for (std::size_t i = 0; i < low.size(); ++i) {
    v *= high[i] - low[i];
  }
  return v;
}

void DistributionPairSpec::validate() const {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("DistributionPairSpec: dim must be a positive even number (x = (s, s'))");
  }
  for (const Box* box : {&expert_region, &universe_region}) {
    if (box->low.size() != dim || box->high.size() != dim) {
      throw ConfigError("DistributionPairSpec: region corners must have dim components");
    }
    for (std::size_t i = 0; i < dim; ++i) {
      if (!(box->low[i] < box->high[i])) {
        throw ConfigError("DistributionPairSpec: regions must have positive extent in every dimension");
      }
    }
  }
  bool strict = false;
  for (std::size_t i = 0; i < dim; ++i) {
    if (expert_region.low[i] < universe_region.low[i] || expert_region.high[i] > universe_region.high[i]) {
      throw ConfigError("DistributionPairSpec: expert region must lie inside the universe region");
    }
    strict = strict || expert_region.low[i] > universe_region.low[i] || expert_region.high[i] < universe_region.high[i];
  }
  if (!strict) {
    throw ConfigError("DistributionPairSpec: expert support must be a proper subset (complement has zero volume)");
  }
  if (!(p_overlap >= 0.0 && p_overlap < 1.0)) {
    throw ConfigError("DistributionPairSpec: p_overlap must lie in [0, 1)");
  }
  if (n_expert == 0 || n_universe == 0) {
    throw ConfigError("DistributionPairSpec: sample counts must be positive");
  }
}

PairSamples sample_pair(const DistributionPairSpec& spec) {
  spec.validate();
  PairSamples out;
  out.expert = nn::Matrix(spec.n_expert, spec.dim);
  out.universe = nn::Matrix(spec.n_universe, spec.dim);
  out.in_support.resize(spec.n_universe);

  Rng expert_rng(mix_seed(spec.seed, 1));
  for (std::size_t i = 0; i < spec.n_expert; ++i) {
    sample_box(spec.expert_region, expert_rng, out.expert.row(i));
  }

  // Inside the expert region the universe law equals the expert law; outside it
  // is uniform on the complement (rejection sampled from the universe box).
  Rng universe_rng(mix_seed(spec.seed, 2));
  for (std::size_t i = 0; i < spec.n_universe; ++i) {
    auto row = out.universe.row(i);
    const bool inside = universe_rng.uniform() < spec.p_overlap;
    out.in_support[i] = inside;
    if (inside) {
      sample_box(spec.expert_region, universe_rng, row);
      continue;
    }
    do {
      sample_box(spec.universe_region, universe_rng, row);
    } while (spec.expert_region.contains(row));
  }
  return out;
}

TheoremReport verify_theorem(const DistributionPairSpec& spec, const TheoremConfig& cfg) {
  const PairSamples samples = sample_pair(spec);

  const bool hold_out = spec.n_expert >= cfg.min_holdout_pool;
  std::size_t n_hold = 0;
  if (hold_out) {
    n_hold = static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(spec.n_expert)));
    n_hold = std::max<std::size_t>(1, std::min(n_hold, spec.n_expert - 1));
  }
  const std::size_t n_train = spec.n_expert - n_hold;
  nn::Matrix train(n_train, spec.dim);
  std::copy(samples.expert.data.begin(), samples.expert.data.begin() + static_cast<std::ptrdiff_t>(n_train * spec.dim),
            train.data.begin());
  nn::Matrix held = train;
  if (hold_out) {
    held = nn::Matrix(n_hold, spec.dim);
    std::copy(samples.expert.data.begin() + static_cast<std::ptrdiff_t>(n_train * spec.dim), samples.expert.data.end(),
              held.data.begin());
  }

  rnd::RndModel model =
      rnd::build_rnd(spec.dim / 2, cfg.arch, {mix_seed(spec.seed, 10), mix_seed(spec.seed, 11)});
  rnd::RndTrainConfig train_cfg = cfg.train;
  train_cfg.seed = mix_seed(spec.seed, 12);
  rnd::train_predictor_on_inputs(model, train, train_cfg);

  const std::vector<double> expert_errors = rnd::prediction_errors(model, held);
  const std::vector<double> universe_errors = rnd::prediction_errors(model, samples.universe);

  TheoremReport report;
  report.seed = spec.seed;
  report.held_out = hold_out;
  report.mu_e = mean_of(expert_errors);

  double in_sum = 0.0;
  double out_sum = 0.0;
  double total = 0.0;
  std::size_t n_in = 0;
  for (std::size_t i = 0; i < universe_errors.size(); ++i) {
    const double e = universe_errors[i];
    if (!std::isfinite(e)) {
      throw NumericError("verify_theorem: non-finite prediction error (sample " + std::to_string(i) + ")");
    }
    total += e;
    if (samples.in_support[i]) {
      in_sum += e;
      ++n_in;
    } else {
      out_sum += e;
    }
  }
  const std::size_t n_out = universe_errors.size() - n_in;
  report.overall_mean = total / static_cast<double>(universe_errors.size());
  report.p_hat = static_cast<double>(n_in) / static_cast<double>(universe_errors.size());
  if (n_in > 0) {
    report.in_mean = in_sum / static_cast<double>(n_in);
  }
  report.out_mean = n_out > 0 ? out_sum / static_cast<double>(n_out) : 0.0;
  report.ratio = report.out_mean / report.mu_e;
  if (!std::isfinite(report.mu_e) || !std::isfinite(report.overall_mean)) {
    throw NumericError("verify_theorem: non-finite error means");
  }

  const double recombined = report.p_hat * report.in_mean.value_or(0.0) + (1.0 - report.p_hat) * report.out_mean;
  report.decomposition_rel_error = std::abs(recombined - report.overall_mean) / std::abs(report.overall_mean);
  report.check_a = report.overall_mean > report.mu_e;
  report.check_b = n_out > 0 && report.out_mean > report.mu_e;
  report.check_c = report.decomposition_rel_error <= kDecompositionTolerance;
  return report;
}

nlohmann::json to_json(const TheoremReport& report) {
  return {{"mu_E", report.mu_e},
          {"in_mean", report.in_mean ? nlohmann::json(*report.in_mean) : nlohmann::json()},
          {"out_mean", report.out_mean},
          {"overall_mean", report.overall_mean},
          {"p_hat", report.p_hat},
          {"ratio", report.ratio},
          {"checks", {{"a", report.check_a}, {"b", report.check_b}, {"c", report.check_c}}},
          {"decomposition_rel_error", report.decomposition_rel_error},
          {"held_out", report.held_out},
          {"seed", report.seed}};
}

std::vector<ProbeRow> monotonicity_probe(DistributionPairSpec spec, const TheoremConfig& cfg,
                                         const std::vector<double>& overlaps, const std::vector<std::uint64_t>& seeds) {
  std::vector<ProbeRow> rows;
  for (double p : overlaps) {
    spec.p_overlap = p;
    ProbeRow row{p, 0.0, seeds.size()};
    for (std::uint64_t seed : seeds) {
      spec.seed = seed;
      const TheoremReport r = verify_theorem(spec, cfg);
      row.mean_excess += r.overall_mean - r.mu_e;
    }
    row.mean_excess /= static_cast<double>(seeds.size());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace reload::theorem
