#include "lmaml/search.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

namespace lmaml {

std::optional<double> SweepRecord::accuracy_for(const std::string& config) const {
  for (std::size_t i = 0; i < configs.size() && i < accuracy.size(); ++i) {
    if (configs[i] == config) return accuracy[i];
  }
  return std::nullopt;
}

namespace {

// Strict weak order used for every tie-break.
bool faster(const SweepRecord& a, const SweepRecord& b) {
  if (a.mean_time_ms != b.mean_time_ms) return a.mean_time_ms < b.mean_time_ms;
  if (a.pattern.active_count() != b.pattern.active_count()) return a.pattern.active_count() < b.pattern.active_count();
  if (a.pattern.str() != b.pattern.str()) return a.pattern.str() < b.pattern.str();
  return a.steps < b.steps;
}

bool by_position(const SweepRecord& a, const SweepRecord& b) {
  if (a.steps != b.steps) return a.steps < b.steps;
  return a.pattern.value() < b.pattern.value();
}

}  // namespace

SearchReport select_fastest(std::span<const SweepRecord> records, double delta, std::size_t reference_steps,
                            const std::map<std::string, double>& floors) {
  if (delta < 0.0 || delta > 1.0) throw std::invalid_argument("select_fastest: threshold must lie in [0, 1]");
  const SweepRecord* base = nullptr;
  for (const auto& r : records) {
    if (r.pattern.is_full() && r.steps == reference_steps && (!base || faster(r, *base))) base = &r;
  }
  if (!base) {
    throw std::invalid_argument("select_fastest: no full-pattern record at P=" + std::to_string(reference_steps));
  }

  SearchReport rep;
  rep.baseline = *base;
  rep.threshold = delta;
  rep.floors = floors;
  for (const auto& r : records) {
    if (r.pattern.size() != base->pattern.size()) continue;
    bool ok = true;
    for (std::size_t i = 0; i < base->configs.size() && ok; ++i) {
      const auto acc = r.accuracy_for(base->configs[i]);
      ok = acc && *acc >= (1.0 - delta) * base->accuracy[i];
      if (ok) {
        const auto floor = floors.find(base->configs[i]);
        if (floor != floors.end()) ok = *acc >= floor->second;
      }
    }
    if (ok) rep.admissible.push_back(r);
  }
  std::sort(rep.admissible.begin(), rep.admissible.end(), [](const auto& a, const auto& b) {
    return by_position(a, b) || (!by_position(b, a) && faster(a, b));
  });
  if (rep.admissible.empty()) {
    rep.degenerate = true;
    rep.selected = *base;
  } else {
    rep.selected = *std::min_element(rep.admissible.begin(), rep.admissible.end(), faster);
  }
  rep.speedup = rep.selected.mean_time_ms > 0.0 ? base->mean_time_ms / rep.selected.mean_time_ms : 1.0;
  return rep;
}

std::vector<ConfigChoice> best_at_one_step(std::span<const SweepRecord> records) {
  std::vector<std::string> configs;
  for (const auto& r : records) {
    if (r.steps != 1) continue;
    for (const auto& c : r.configs) {
      if (std::find(configs.begin(), configs.end(), c) == configs.end()) configs.push_back(c);
    }
  }
  if (configs.empty()) throw std::invalid_argument("best_at_one_step: no records at P=1");

  std::vector<ConfigChoice> out;
  for (const auto& c : configs) {
    const SweepRecord* best = nullptr;
    double best_acc = 0.0;
    for (const auto& r : records) {
      if (r.steps != 1) continue;
      const auto acc = r.accuracy_for(c);
      if (!acc) continue;
      bool take = !best || *acc > best_acc;
      if (best && *acc == best_acc) {
        const auto na = r.pattern.active_count(), nb = best->pattern.active_count();
        take = na < nb || (na == nb && r.pattern.str() < best->pattern.str());
      }
      if (take) {
        best = &r;
        best_acc = *acc;
      }
    }
    out.push_back({c, *best});
  }
  return out;
}

std::vector<SweepRecord> sweep(std::span<const SweepConfig> configs, std::span<const LambdaPattern> patterns,
                               std::span<const std::size_t> steps_list, const SweepOptions& options) {
  if (patterns.empty()) throw std::invalid_argument("sweep: no patterns");
  if (steps_list.empty()) throw std::invalid_argument("sweep: no step counts");
  if (configs.empty()) throw std::invalid_argument("sweep: no configurations");
  for (const auto& c : configs) {
    if (c.episodes.empty()) throw std::invalid_argument("sweep: configuration " + c.name + " has no episodes");
    for (const auto& p : patterns) {
      if (p.size() != c.model.arch.blocks()) {
        throw std::invalid_argument("sweep: pattern " + p.str() + " does not fit configuration " + c.name);
      }
    }
  }
  if (options.pin_thread) pin_to_current_cpu();

  std::vector<SweepRecord> out;
  for (const std::size_t steps : steps_list) {
    for (const auto& pattern : patterns) {
      SweepRecord rec;
      rec.pattern = pattern;
      rec.steps = steps;
      double flops = 0.0;
      for (const auto& c : configs) {
        const auto& m = c.model;
        const auto adapt_once = [&](const Episode& ep) {
          return adapt(m.arch, m.theta, ep.support_x, ep.support_y, pattern, steps, m.config.alpha, GraphMode::None);
        };
        for (std::size_t i = 0; i < options.warmup; ++i) adapt_once(c.episodes[i % c.episodes.size()]);
        double acc = 0.0, ms = 0.0;
        for (const auto& ep : c.episodes) {
          const auto start = std::chrono::steady_clock::now();
          const auto adapted = adapt_once(ep);
          const auto stop = std::chrono::steady_clock::now();
          ms += std::chrono::duration<double, std::milli>(stop - start).count();
          acc += accuracy(ep.query_y, forward(m.arch, adapted, ep.query_x, Mode::Eval));
        }
        const double n = static_cast<double>(c.episodes.size());
        rec.configs.push_back(c.name);
        rec.accuracy.push_back(acc / n);
        rec.time_ms.push_back(ms / n);
        flops += flop_cost(m.arch, m.task.n_way * m.task.k_shot, pattern, steps);
      }
      rec.mean_time_ms = std::accumulate(rec.time_ms.begin(), rec.time_ms.end(), 0.0) /
                         static_cast<double>(rec.time_ms.size());
      rec.flop_cost = flops / static_cast<double>(configs.size());
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace lmaml
