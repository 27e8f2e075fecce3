#include "lmaml/maml.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "lmaml/text.hpp"

namespace lmaml {

void MetaConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("meta config: alpha must be > 0");
  if (!(beta > 0.0)) throw std::invalid_argument("meta config: beta must be > 0");
  if (steps < 1) throw std::invalid_argument("meta config: steps must be >= 1");
  if (meta_batch < 1) throw std::invalid_argument("meta config: meta_batch must be >= 1");
}

MetaModel make_meta_model(Architecture arch, WeightSet<double> theta, MetaConfig config, TaskSpec task) {
  MetaModel m;
  m.arch = std::move(arch);
  m.theta = std::move(theta);
  m.config = config;
  m.task = task;
  for (const auto& p : m.theta.params) {
    m.adam.m.push_back(Tensor<double>::zeros(p.value.shape()));
    m.adam.v.push_back(Tensor<double>::zeros(p.value.shape()));
  }
  return m;
}

void adam_step(WeightSet<double>& theta, AdamState& state, const std::vector<Tensor<double>>& grads, double lr,
               const AdamConfig& adam) {
  if (grads.size() != theta.size()) throw ShapeError("adam_step: gradient count does not match parameters");
  if (state.m.empty()) {
    for (const auto& p : theta.params) {
      state.m.push_back(Tensor<double>::zeros(p.value.shape()));
      state.v.push_back(Tensor<double>::zeros(p.value.shape()));
    }
  }
  if (state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw ShapeError("adam_step: moment buffers do not mirror parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(adam.beta1, t);
  const double bc2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const auto g = grads[i].values();
    const auto w = theta.params[i].value.values();
    const auto m0 = state.m[i].values();
    const auto v0 = state.v[i].values();
    if (g.size() != w.size() || m0.size() != w.size() || v0.size() != w.size()) {
      throw ShapeError("adam_step: shape mismatch for " + theta.params[i].name);
    }
    std::vector<double> w1(w.size()), m1(w.size()), v1(w.size());
    for (std::size_t k = 0; k < w.size(); ++k) {
      m1[k] = adam.beta1 * m0[k] + (1.0 - adam.beta1) * g[k];
      v1[k] = adam.beta2 * v0[k] + (1.0 - adam.beta2) * g[k] * g[k];
      const double mhat = m1[k] / bc1;
      const double vhat = v1[k] / bc2;
      w1[k] = w[k] - lr * mhat / (std::sqrt(vhat) + adam.eps);
    }
    const Shape& s = theta.params[i].value.shape();
    theta.params[i].value = Tensor<double>(s, std::move(w1));
    state.m[i] = Tensor<double>(s, std::move(m1));
    state.v[i] = Tensor<double>(s, std::move(v1));
  }
}

namespace {

template <typename T>
void check_pattern(const WeightSet<T>& theta, const LambdaPattern& pattern) {
  std::size_t blocks = 0;
  for (const auto& p : theta.params) blocks = std::max(blocks, p.layer);
  if (blocks != pattern.size()) {
    throw std::invalid_argument("adapt: pattern " + pattern.str() + " does not match " + std::to_string(blocks) +
                                " blocks");
  }
}

}  // namespace

template <typename T>
WeightSet<T> adapt(const WeightSet<T>& theta, const WeightLoss<T>& loss, const LambdaPattern& pattern,
                   std::size_t steps, T alpha, GraphMode mode) {
  if (steps < 1) throw std::invalid_argument("adapt: steps must be >= 1");
  if (alpha < T{0}) throw std::invalid_argument("adapt: alpha must be non-negative");
  check_pattern(theta, pattern);

  WeightSet<T> current = mode == GraphMode::None ? theta.detached() : theta;
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < current.size(); ++i) {
      if (pattern.active(current.params[i].layer)) active.push_back(i);
    }

    std::vector<Tensor<T>> wrt;
    Tensor<T> objective;
    Tape<T> local;
    if (mode == GraphMode::None) {
      // Only active blocks are watched, so frozen blocks below the first
      // active one never reach the tape.
      WeightSet<T> watched = current;
      for (std::size_t i : active) {
        watched.params[i].value = local.watch(watched.params[i].value);
        wrt.push_back(watched.params[i].value);
      }
      objective = loss(watched);
    } else {
      for (std::size_t i : active) wrt.push_back(current.params[i].value);
      objective = loss(current);
    }

    const auto g = grad(objective, wrt, mode == GraphMode::SecondOrder);
    std::vector<std::optional<Tensor<T>>> grads(current.size());
    for (std::size_t k = 0; k < active.size(); ++k) grads[active[k]] = g[k];
    current = masked_step(current, grads, pattern, alpha);
  }
  return current;
}

template <typename T>
WeightSet<T> adapt(const Architecture& arch, const WeightSet<T>& theta, const Tensor<T>& support_x,
                   std::span<const std::int32_t> support_y, const LambdaPattern& pattern, std::size_t steps,
                   T alpha, GraphMode mode) {
  if (pattern.size() != arch.blocks()) {
    throw std::invalid_argument("adapt: pattern " + pattern.str() + " has " + std::to_string(pattern.size()) +
                                " bits, model has " + std::to_string(arch.blocks()) + " blocks");
  }
  const WeightLoss<T> loss = [&](const WeightSet<T>& w) {
    return cross_entropy(support_y, forward(arch, w, support_x, Mode::Train));
  };
  return adapt(theta, loss, pattern, steps, alpha, mode);
}

MetaGradient meta_gradient(const WeightSet<double>& theta, std::span<const TaskLosses> tasks,
                           const LambdaPattern& pattern, std::size_t steps, double alpha, bool first_order) {
  if (tasks.empty()) throw std::invalid_argument("meta_gradient: no tasks");
  MetaGradient out;
  for (const auto& task : tasks) {
    Tape<double> tape;
    WeightSet<double> watched = theta.detached();
    for (auto& p : watched.params) p.value = tape.watch(p.value);
    const auto adapted = adapt(watched, task.support, pattern, steps, alpha,
                               first_order ? GraphMode::FirstOrder : GraphMode::SecondOrder);
    const auto query = task.query(adapted);
    out.mean_query_loss += query.loss.item();
    out.mean_query_accuracy += query.accuracy;
    const auto g = grad(query.loss, watched.values());
    if (out.grads.empty()) {
      for (const auto& t : g) out.grads.push_back(t.detach());
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) out.grads[i] = add(out.grads[i], g[i].detach());
    }
  }
  out.mean_query_loss /= static_cast<double>(tasks.size());
  out.mean_query_accuracy /= static_cast<double>(tasks.size());
  return out;
}

TaskLosses episode_losses(const Architecture& arch, const Episode& episode) {
  TaskLosses t;
  t.support = [&arch, &episode](const WeightSet<double>& w) {
    return cross_entropy(episode.support_y, forward(arch, w, episode.support_x, Mode::Train));
  };
  t.query = [&arch, &episode](const WeightSet<double>& w) {
    const auto logits = forward(arch, w, episode.query_x, Mode::Train);
    return QueryResult{cross_entropy(episode.query_y, logits), accuracy(episode.query_y, logits)};
  };
  return t;
}

StepMetrics meta_update(MetaModel& model, std::span<const Episode> episodes, const LambdaPattern& pattern,
                        std::size_t steps) {
  if (episodes.empty()) throw std::invalid_argument("meta_update: no episodes");
  std::vector<TaskLosses> tasks;
  tasks.reserve(episodes.size());
  for (const auto& ep : episodes) tasks.push_back(episode_losses(model.arch, ep));
  const auto mg = meta_gradient(model.theta, tasks, pattern, steps, model.config.alpha, model.config.first_order);
  adam_step(model.theta, model.adam, mg.grads, model.config.beta, model.config.adam);
  return {mg.mean_query_loss, mg.mean_query_accuracy};
}

double episode_accuracy(const MetaModel& model, const Episode& episode, const LambdaPattern& pattern,
                        std::size_t steps) {
  const auto adapted = adapt(model.arch, model.theta, episode.support_x, episode.support_y, pattern, steps,
                             model.config.alpha, GraphMode::None);
  return accuracy(episode.query_y, forward(model.arch, adapted, episode.query_x, Mode::Eval));
}

EvalResult summarize_accuracies(std::vector<double> accuracies) {
  if (accuracies.empty()) throw std::invalid_argument("evaluate: no episodes");
  EvalResult r;
  const double n = static_cast<double>(accuracies.size());
  r.mean = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / n;
  if (accuracies.size() < 2) {
    r.ci95 = std::numeric_limits<double>::quiet_NaN();
  } else {
    double ss = 0.0;
    for (double a : accuracies) ss += (a - r.mean) * (a - r.mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const boost::math::students_t dist(n - 1.0);
    r.ci95 = boost::math::quantile(dist, 0.975) * sd / std::sqrt(n);
  }
  r.accuracies = std::move(accuracies);
  return r;
}

EvalResult evaluate(const MetaModel& model, std::span<const Episode> episodes, const LambdaPattern& pattern,
                    std::size_t steps) {
  if (episodes.empty()) throw std::invalid_argument("evaluate: n_episodes must be positive");
  std::vector<double> acc;
  acc.reserve(episodes.size());
  for (const auto& ep : episodes) acc.push_back(episode_accuracy(model, ep, pattern, steps));
  return summarize_accuracies(std::move(acc));
}

EvalResult evaluate(const MetaModel& model, const ClassDataset& ds, std::size_t n_episodes,
                    const LambdaPattern& pattern, std::size_t steps, std::uint64_t seed) {
  if (n_episodes == 0) throw std::invalid_argument("evaluate: n_episodes must be positive");
  Rng rng(seed);
  std::vector<double> acc;
  acc.reserve(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    const auto ep = sample_episode(ds, model.task, rng);
    acc.push_back(episode_accuracy(model, ep, pattern, steps));
  }
  return summarize_accuracies(std::move(acc));
}

TrainResult train(const MetaModel& model, const ClassDataset& train_ds, const ClassDataset& val_ds,
                  const MetaConfig& config, const LambdaPattern& pattern, const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result;
  MetaModel current = model;
  current.config = config;
  result.best = current;
  result.final = current;
  if (config.epochs == 0) return result;

  const std::size_t per_class = current.task.k_shot + current.task.k_query;
  for (const auto* ds : {&train_ds, &val_ds}) {
    if (ds->classes.size() < current.task.n_way) {
      throw std::invalid_argument("train: " + std::string(split_name(ds->split)) + " split has too few classes for " +
                                  current.task.label());
    }
    for (const auto& c : ds->classes) {
      if (c.count < per_class) {
        throw std::invalid_argument("train: class '" + c.name + "' has fewer than " + std::to_string(per_class) +
                                    " images");
      }
    }
  }

  Rng rng(config.seed);
  const auto val_episodes =
      sample_episodes(val_ds, current.task, config.val_episodes, config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t updates = std::max<std::size_t>(1, config.tasks_per_epoch / config.meta_batch);
  double best_acc = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (std::size_t u = 0; u < updates; ++u) {
      std::vector<Episode> batch;
      batch.reserve(config.meta_batch);
      for (std::size_t b = 0; b < config.meta_batch; ++b) batch.push_back(sample_episode(train_ds, current.task, rng));
      loss_sum += meta_update(current, batch, pattern, config.steps).query_loss;
    }
    TrainLogRow row;
    row.epoch = epoch;
    row.mean_train_loss = loss_sum / static_cast<double>(updates);
    row.val_accuracy = val_episodes.empty() ? 0.0 : evaluate(current, val_episodes, pattern, config.steps).mean;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    if (row.val_accuracy > best_acc) {
      best_acc = row.val_accuracy;
      result.best = current;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(row);
  }
  result.final = current;
  return result;
}

std::string train_log_csv(std::span<const TrainLogRow> log) {
  std::string out = "epoch,mean_train_loss,val_accuracy,wall_ms\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + "," + format_double(r.mean_train_loss) + "," + format_double(r.val_accuracy) +
           "," + format_fixed(r.wall_ms, 3) + "\n";
  }
  return out;
}

template WeightSet<double> adapt(const WeightSet<double>&, const WeightLoss<double>&, const LambdaPattern&,
                                 std::size_t, double, GraphMode);
template WeightSet<float> adapt(const WeightSet<float>&, const WeightLoss<float>&, const LambdaPattern&, std::size_t,
                                float, GraphMode);
template WeightSet<double> adapt(const Architecture&, const WeightSet<double>&, const Tensor<double>&,
                                 std::span<const std::int32_t>, const LambdaPattern&, std::size_t, double, GraphMode);
template WeightSet<float> adapt(const Architecture&, const WeightSet<float>&, const Tensor<float>&,
                                std::span<const std::int32_t>, const LambdaPattern&, std::size_t, float, GraphMode);

}  // namespace lmaml
