#include "lmaml/bench.hpp"

#include <sched.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lmaml/maml.hpp"

namespace lmaml {

double CostModel::forward() const {
  double total = loss;
  for (const auto& l : layers) total += l.forward;
  return total;
}

double CostModel::backward(const LambdaPattern& pattern) const {
  const auto bp = plan(pattern, layers.size());
  double total = 0.0;
  for (std::size_t l = 1; l <= layers.size(); ++l) {
    const auto& c = layers[l - 1];
    const bool updates = bp.updates(l);
    const bool passes = bp.passes_gradient(l);
    if (updates || passes) total += c.backward_local;
    if (updates) total += c.backward_weight;
    if (passes) total += c.backward_input;
  }
  return total;
}

CostModel cost_model(const Architecture& arch, std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("cost_model: batch must be positive");
  CostModel m;
  const double n = static_cast<double>(batch);
  double h = static_cast<double>(arch.input.height);
  double w = static_cast<double>(arch.input.width);
  for (const auto& layer : arch.layers) {
    LayerCost c;
    const double in = static_cast<double>(layer.in), out = static_cast<double>(layer.out);
    if (layer.kind == LayerKind::ConvBlock) {
      const double pixels = n * h * w;
      const double macs = 9.0 * in * out * pixels;
      const double act = out * pixels;
      const double pooled = out * n * std::floor(h / 2) * std::floor(w / 2);
      // conv, bias, batch norm (~8 per element), ReLU, pool (3 compares per output)
      c.forward = 2.0 * macs + act + 8.0 * act + act + 3.0 * pooled;
      c.backward_input = 2.0 * macs;
      c.backward_weight = 2.0 * macs + act + 2.0 * act;
      c.backward_local = pooled + act + 10.0 * act;
      h = std::floor(h / 2);
      w = std::floor(w / 2);
    } else {
      c.forward = 2.0 * n * in * out + n * out;
      c.backward_input = 2.0 * n * in * out;
      c.backward_weight = 2.0 * n * in * out + n * out;
      c.backward_local = 0.0;
    }
    m.layers.push_back(c);
  }
  const double k = static_cast<double>(arch.n_way);
  m.loss = 5.0 * n * k;
  return m;
}

double flop_cost(const CostModel& model, const LambdaPattern& pattern, std::size_t steps) {
  return static_cast<double>(steps) * (model.forward() + model.backward(pattern));
}

double flop_cost(const Architecture& arch, std::size_t batch, const LambdaPattern& pattern, std::size_t steps) {
  return flop_cost(cost_model(arch, batch), pattern, steps);
}

void summarize_timing(TimingSample& s) {
  const std::size_t n = s.times_ms.size();
  s.reliable = n >= kMinTimedRuns;
  if (n == 0) {
    s.mean = s.std = s.median = 0.0;
    return;
  }
  s.mean = std::accumulate(s.times_ms.begin(), s.times_ms.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double t : s.times_ms) ss += (t - s.mean) * (t - s.mean);
  s.std = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  std::vector<double> sorted = s.times_ms;
  std::sort(sorted.begin(), sorted.end());
  s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

bool pin_to_current_cpu() {
  const int cpu = sched_getcpu();
  if (cpu < 0) return false;
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(cpu, &set);
  return sched_setaffinity(0, sizeof set, &set) == 0;
}

TimingSample time_runs(std::size_t n, const std::function<void(std::size_t)>& run, const TimingOptions& options) {
  if (n == 0) throw std::invalid_argument("time_adaptation: no episodes to time");
  if (options.pin_thread) pin_to_current_cpu();
  for (std::size_t i = 0; i < options.warmup; ++i) run(i % n);
  TimingSample s;
  const std::size_t total = std::max(n, options.min_runs);
  s.times_ms.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const auto start = std::chrono::steady_clock::now();
    run(i % n);
    const auto stop = std::chrono::steady_clock::now();
    s.times_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  summarize_timing(s);
  return s;
}

template <typename T>
TimingSample time_adaptation(const Architecture& arch, const WeightSet<double>& theta,
                             std::span<const Episode> episodes, const LambdaPattern& pattern, std::size_t steps,
                             double alpha, const TimingOptions& options) {
  if (episodes.empty()) throw std::invalid_argument("time_adaptation: no episodes to time");
  const auto weights = theta.detached().template cast<T>();
  std::vector<Tensor<T>> support;
  support.reserve(episodes.size());
  for (const auto& ep : episodes) support.push_back(ep.support_x.template cast<T>());
  auto s = time_runs(
      episodes.size(),
      [&](std::size_t i) {
        const auto adapted = adapt<T>(arch, weights, support[i], episodes[i].support_y, pattern, steps,
                                      static_cast<T>(alpha), GraphMode::None);
        (void)adapted;
      },
      options);
  s.pattern = pattern;
  s.steps = steps;
  return s;
}

template TimingSample time_adaptation<double>(const Architecture&, const WeightSet<double>&, std::span<const Episode>,
                                              const LambdaPattern&, std::size_t, double, const TimingOptions&);
template TimingSample time_adaptation<float>(const Architecture&, const WeightSet<double>&, std::span<const Episode>,
                                             const LambdaPattern&, std::size_t, double, const TimingOptions&);

}  // namespace lmaml
