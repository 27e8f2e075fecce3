#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmaml/bench.hpp"
#include "lmaml/maml.hpp"

namespace lmaml {

/// Accuracy and time of one (pattern, steps) pair across task configurations
/// such as "1s2w" or "5s5w".
struct SweepRecord {
  LambdaPattern pattern = LambdaPattern::full(1);
  std::size_t steps = 0;
  std::vector<std::string> configs;
  std::vector<double> accuracy;  // fraction, aligned with configs
  std::vector<double> time_ms;   // per config; may be empty when only the mean is known
  double mean_time_ms = 0.0;     // unweighted mean over configs
  double flop_cost = 0.0;

  std::optional<double> accuracy_for(const std::string& config) const;
};

struct SearchReport {
  SweepRecord baseline;
  double threshold = 0.0;
  std::map<std::string, double> floors;
  std::vector<SweepRecord> admissible;  // ordered by steps, then pattern value
  SweepRecord selected;
  double speedup = 1.0;     // baseline time / selected time
  bool degenerate = false;  // nothing admissible, selected is the baseline
};

/// Fastest record whose accuracy is at least (1 - delta) times the baseline's
/// in every configuration (and at least floors[config] where given). The
/// baseline is the full pattern at `reference_steps`. Ties on time go to fewer
/// active blocks, then the smaller pattern literal, then fewer steps.
SearchReport select_fastest(std::span<const SweepRecord> records, double delta, std::size_t reference_steps = 10,
                            const std::map<std::string, double>& floors = {});

struct ConfigChoice {
  std::string config;
  SweepRecord record;
};

/// Per configuration, the single-step record with the highest accuracy; ties
/// go to fewer active blocks, then the smaller pattern literal.
std::vector<ConfigChoice> best_at_one_step(std::span<const SweepRecord> records);

/// One trained model and its fixed evaluation episodes.
struct SweepConfig {
  std::string name;
  MetaModel model;
  std::vector<Episode> episodes;
};

struct SweepOptions {
  std::size_t warmup = kWarmupRuns;
  bool pin_thread = true;
};

/// One record per (steps, pattern), steps outermost. Every pattern sees the
/// same episodes; only the adaptation call is timed.
std::vector<SweepRecord> sweep(std::span<const SweepConfig> configs, std::span<const LambdaPattern> patterns,
                               std::span<const std::size_t> steps_list, const SweepOptions& options = {});

}  // namespace lmaml
