#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lmaml/episodes.hpp"
#include "lmaml/lambda_pattern.hpp"
#include "lmaml/nn.hpp"

namespace lmaml {

/// FLOPs of one block for a given batch. `backward_local` is the elementwise
/// backward work inside the block (bias, batch norm, ReLU, pooling) that is
/// needed whenever the block takes part in the backward pass at all.
struct LayerCost {
  double forward = 0.0;
  double backward_input = 0.0;
  double backward_weight = 0.0;
  double backward_local = 0.0;
};

struct CostModel {
  std::vector<LayerCost> layers;  // index 0 is block 1
  double loss = 0.0;              // softmax cross entropy, forward and backward, counted in forward()

  double forward() const;
  /// Backward FLOPs of one adaptation step under `pattern`.
  double backward(const LambdaPattern& pattern) const;
};

CostModel cost_model(const Architecture& arch, std::size_t batch);

/// steps * (forward + masked backward). Exactly linear in `steps`.
double flop_cost(const CostModel& model, const LambdaPattern& pattern, std::size_t steps);
double flop_cost(const Architecture& arch, std::size_t batch, const LambdaPattern& pattern, std::size_t steps);

inline constexpr std::size_t kWarmupRuns = 5;
inline constexpr std::size_t kMinTimedRuns = 30;

struct TimingSample {
  LambdaPattern pattern = LambdaPattern::full(1);
  std::size_t steps = 0;
  std::vector<double> times_ms;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  double median = 0.0;
  bool reliable = false;  // at least kMinTimedRuns samples

  std::size_t count() const { return times_ms.size(); }
};

/// Fills mean/std/median/reliable from times_ms.
void summarize_timing(TimingSample& sample);

struct TimingOptions {
  std::size_t warmup = kWarmupRuns;
  /// Episodes are cycled until at least this many runs have been timed.
  std::size_t min_runs = kMinTimedRuns;
  bool pin_thread = true;
};

/// Times `run(i)` for i over [0, n), after `warmup` discarded calls. Only the
/// call itself is inside the timed region.
TimingSample time_runs(std::size_t n, const std::function<void(std::size_t)>& run, const TimingOptions& options = {});

/// Wall time of the adaptation loop alone (no meta-graph), per episode.
/// Support sets are converted to T before timing starts.
template <typename T>
TimingSample time_adaptation(const Architecture& arch, const WeightSet<double>& theta,
                             std::span<const Episode> episodes, const LambdaPattern& pattern, std::size_t steps,
                             double alpha, const TimingOptions& options = {});

/// Restricts the calling thread to the CPU it is running on. Returns false
/// when the platform refuses.
bool pin_to_current_cpu();

}  // namespace lmaml
