#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lmaml/episodes.hpp"
#include "lmaml/lambda_pattern.hpp"
#include "lmaml/nn.hpp"

namespace lmaml {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct MetaConfig {
  double alpha = 0.01;  // inner step size
  double beta = 1e-3;   // meta learning rate
  std::size_t steps = 10;
  std::size_t meta_batch = 4;
  std::size_t epochs = 0;
  std::size_t tasks_per_epoch = 100;
  std::size_t val_episodes = 100;
  bool first_order = false;
  std::uint64_t seed = 0;
  AdamConfig adam{};

  /// Throws std::invalid_argument unless alpha > 0, beta > 0, steps >= 1 and
  /// meta_batch >= 1.
  void validate() const;
  bool operator==(const MetaConfig&) const = default;
};

struct AdamState {
  std::vector<Tensor<double>> m;
  std::vector<Tensor<double>> v;
  std::uint64_t step = 0;
};

struct MetaModel {
  Architecture arch;
  WeightSet<double> theta;
  AdamState adam;
  MetaConfig config;
  TaskSpec task;
};

/// Fresh model with zeroed Adam moments.
MetaModel make_meta_model(Architecture arch, WeightSet<double> theta, MetaConfig config, TaskSpec task);

/// In-place Adam update of `theta` from `grads` (aligned with theta.params).
void adam_step(WeightSet<double>& theta, AdamState& state, const std::vector<Tensor<double>>& grads, double lr,
               const AdamConfig& adam);

enum class GraphMode {
  /// No meta-gradient: every step runs on a fresh tape and returns constants.
  None,
  /// Gradients are detached between steps; the result depends on theta only
  /// through the identity path.
  FirstOrder,
  /// The whole adaptation is recorded; the result is differentiable in theta.
  SecondOrder,
};

template <typename T>
using WeightLoss = std::function<Tensor<T>(const WeightSet<T>&)>;

/// P masked gradient steps on `loss`. For FirstOrder/SecondOrder, `theta`
/// should already be linked to the tape the caller will differentiate on.
template <typename T>
WeightSet<T> adapt(const WeightSet<T>& theta, const WeightLoss<T>& loss, const LambdaPattern& pattern,
                   std::size_t steps, T alpha, GraphMode mode);

/// Adaptation on a support set with the CNN4 cross-entropy loss.
template <typename T>
WeightSet<T> adapt(const Architecture& arch, const WeightSet<T>& theta, const Tensor<T>& support_x,
                   std::span<const std::int32_t> support_y, const LambdaPattern& pattern, std::size_t steps,
                   T alpha, GraphMode mode);

struct QueryResult {
  Tensor<double> loss;
  double accuracy = 0.0;
};

/// Support and query objectives of one task for the generic meta-gradient.
struct TaskLosses {
  WeightLoss<double> support;
  std::function<QueryResult(const WeightSet<double>&)> query;
};

struct MetaGradient {
  std::vector<Tensor<double>> grads;  // aligned with theta.params
  double mean_query_loss = 0.0;
  double mean_query_accuracy = 0.0;
};

/// d/dtheta sum_i L_query_i(adapt_i(theta)).
MetaGradient meta_gradient(const WeightSet<double>& theta, std::span<const TaskLosses> tasks,
                           const LambdaPattern& pattern, std::size_t steps, double alpha, bool first_order);

TaskLosses episode_losses(const Architecture& arch, const Episode& episode);

struct StepMetrics {
  double query_loss = 0.0;      // mean over tasks, before the update
  double query_accuracy = 0.0;  // mean over tasks, before the update
};

/// One outer step: Adam on the summed query losses of the adapted models.
StepMetrics meta_update(MetaModel& model, std::span<const Episode> episodes, const LambdaPattern& pattern,
                        std::size_t steps);

/// Query accuracy after adapting theta to the episode's support set.
double episode_accuracy(const MetaModel& model, const Episode& episode, const LambdaPattern& pattern,
                        std::size_t steps);

struct EvalResult {
  double mean = 0.0;
  double ci95 = 0.0;  // Student-t half width; NaN for a single episode
  std::vector<double> accuracies;
};

EvalResult evaluate(const MetaModel& model, std::span<const Episode> episodes, const LambdaPattern& pattern,
                    std::size_t steps);
EvalResult evaluate(const MetaModel& model, const ClassDataset& ds, std::size_t n_episodes,
                    const LambdaPattern& pattern, std::size_t steps, std::uint64_t seed);

/// Mean and Student-t 95% half width of a sample.
EvalResult summarize_accuracies(std::vector<double> accuracies);

struct TrainLogRow {
  std::size_t epoch = 0;
  double mean_train_loss = 0.0;
  double val_accuracy = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  MetaModel best;   // highest validation accuracy, earliest on ties
  MetaModel final;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
};

using EpochCallback = std::function<void(const TrainLogRow&)>;

/// Runs config.epochs epochs of tasks_per_epoch / meta_batch meta-updates.
/// Validation uses a fixed episode set drawn once from `val`.
TrainResult train(const MetaModel& model, const ClassDataset& train_ds, const ClassDataset& val_ds,
                  const MetaConfig& config, const LambdaPattern& pattern, const EpochCallback& on_epoch = {});

/// CSV with columns epoch,mean_train_loss,val_accuracy,wall_ms.
std::string train_log_csv(std::span<const TrainLogRow> log);

}  // namespace lmaml
