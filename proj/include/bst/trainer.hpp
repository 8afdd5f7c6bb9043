#pragma once

// Training loop: label-smoothed cross entropy, AdamW, linear warm-up then
// cosine annealing, shift augmentation, per-epoch validation with best
// macro-F1 retention and early stopping.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bst/autograd.hpp"
#include "bst/errors.hpp"
#include "bst/evaluator.hpp"
#include "bst/ingest.hpp"
#include "bst/model.hpp"
#include "bst/random.hpp"

namespace bst {

struct TrainConfig {
  int n_epochs = 1600;
  int early_stop_n_epochs = 300;
  int batch_size = 128;
  double learning_rate = 5e-4;
  int warm_up_step = 400;
  double cosine_annealing_num_cycles = 0.25;
  double weight_decay = 1e-2;
  double label_smoothing = 0.1;
  std::uint64_t seed = 0;
  bool class_balance = false;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  double augment_probability = 0.3;
  double shift_low = -0.3;
  double shift_high = 0.3;

  void validate() const {
    if (n_epochs <= 0 || early_stop_n_epochs <= 0 || batch_size <= 0)
      throw ConfigError("epoch counts and batch size must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (warm_up_step < 0) throw ConfigError("warm_up_step must be non-negative");
    if (!(cosine_annealing_num_cycles > 0.0)) throw ConfigError("cosine_annealing_num_cycles must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must lie in [0, 1)");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
    if (augment_probability < 0.0 || augment_probability > 1.0)
      throw ConfigError("augment probability must lie in [0, 1]");
  }
};

/// -sum_i target_i * log(max(p_i, 1e-12)) with
/// target = (1 - smoothing) one-hot + smoothing / K.
inline double smoothed_cross_entropy(std::span<const double> probabilities, int target, double smoothing) {
  const auto K = static_cast<int>(probabilities.size());
  if (K == 0 || target < 0 || target >= K) throw ValidationError("target class out of range");
  double loss = 0.0;
  for (int i = 0; i < K; ++i) {
    const double weight = smoothing / K + (i == target ? 1.0 - smoothing : 0.0);
    loss -= weight * std::log(std::max(probabilities[static_cast<std::size_t>(i)], 1e-12));
  }
  return loss;
}

/// Linear warm-up from 0 to learning_rate over warm_up_step optimizer steps,
/// then learning_rate * max(0, cos(2 pi * cycles * progress)) over the rest.
inline double lr_schedule(long step, long total_steps, const TrainConfig& config) {
  if (config.warm_up_step >= total_steps)
    throw ConfigError("warm_up_step (" + std::to_string(config.warm_up_step) + ") must be below total steps (" +
                      std::to_string(total_steps) + ")");
  if (step < 0 || step > total_steps) throw ValidationError("step outside [0, total_steps]");
  if (step < config.warm_up_step)
    return config.learning_rate * static_cast<double>(step) / static_cast<double>(config.warm_up_step);
  const double progress =
      static_cast<double>(step - config.warm_up_step) / static_cast<double>(total_steps - config.warm_up_step);
  const double factor = std::cos(2.0 * std::numbers::pi * config.cosine_annealing_num_cycles * progress);
  return config.learning_rate * std::max(0.0, factor);
}

/// Decoupled weight decay Adam (beta1 0.9, beta2 0.999, eps 1e-8).
template <typename T>
class AdamW {
 public:
  explicit AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<T>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, entry] : params) {
      auto& st = state_[name];
      if (st.m.size() == 0) {
        st.m = Matrix<T>::Zero(entry.value.rows(), entry.value.cols());
        st.v = st.m;
      }
      st.m = T(beta1_) * st.m + T(1.0 - beta1_) * entry.grad;
      st.v = T(beta2_) * st.v + T(1.0 - beta2_) * entry.grad.cwiseProduct(entry.grad);
      if (lr == 0.0) continue;
      entry.value *= T(1.0 - lr * weight_decay_);
      const T step_size = T(lr / bc1);
      const T denom_scale = T(1.0 / std::sqrt(bc2));
      entry.value.array() -=
          step_size * st.m.array() / (st.v.array().sqrt() * denom_scale + T(eps_));
    }
  }

  long steps() const { return t_; }

 private:
  struct State {
    Matrix<T> m;
    Matrix<T> v;
  };
  double weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, State> state_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double val_macro_f1 = 0.0;
  double lr = 0.0;
};

template <typename T>
struct TrainResult {
  ParamStore<T> best_params;
  int best_epoch = 0;
  double best_val_macro_f1 = -1.0;
  double best_val_acc = 0.0;
  std::vector<EpochRecord> history;
  bool early_stopped = false;
};

template <typename T>
struct TrainHooks {
  /// Replaces validation on the val set; receives the model and the epoch.
  std::function<EvalReport(const BstModel<T>&, int)> validate;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Epoch index list: each sample once, or with class duplication up to the
/// largest class count when balancing is on.
inline std::vector<std::size_t> epoch_pool(std::span<const StrokeSample> data, bool balance) {
  std::vector<std::size_t> pool(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) pool[i] = i;
  if (!balance) return pool;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
  std::size_t largest = 0;
  for (const auto& [label, idx] : by_class) largest = std::max(largest, idx.size());
  pool.clear();
  for (const auto& [label, idx] : by_class)
    for (std::size_t k = 0; k < largest; ++k) pool.push_back(idx[k % idx.size()]);
  return pool;
}

inline std::string format_history(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_acc,val_macro_f1,lr\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.train_loss, r.val_acc, r.val_macro_f1,
                  r.lr);
    out += line;
  }
  return out;
}

/// Trains in place and returns the parameters with the best validation
/// macro-F1 (earliest epoch on ties).
template <typename T>
TrainResult<T> train(BstModel<T>& model, std::span<const StrokeSample> train_set, std::span<const StrokeSample> val_set,
                     const TrainConfig& config, const TrainHooks<T>& hooks = {}) {
  config.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  if (val_set.empty() && !hooks.validate) throw ValidationError("validation set is empty");
  const int K = model.config().n_classes;
  for (const auto& s : train_set)
    if (s.label < 0 || s.label >= K) throw ValidationError("training label out of range");

  const auto pool_template = epoch_pool(train_set, config.class_balance);
  const long steps_per_epoch =
      static_cast<long>((pool_template.size() + static_cast<std::size_t>(config.batch_size) - 1) /
                        static_cast<std::size_t>(config.batch_size));
  const long total_steps = steps_per_epoch * config.n_epochs;
  (void)lr_schedule(0, total_steps, config);  // validates warm-up against the run length

  AdamW<T> optimizer(config.weight_decay);
  TrainResult<T> result;
  result.best_params = model.params();
  long step = 0;
  int since_best = 0;

  for (int epoch = 1; epoch <= config.n_epochs; ++epoch) {
    auto pool = pool_template;
    Rng shuffle_rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(pool);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (long b = 0; b < steps_per_epoch; ++b) {
      const std::size_t start = static_cast<std::size_t>(b) * static_cast<std::size_t>(config.batch_size);
      const std::size_t stop = std::min(pool.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<StrokeSample> batch;
      std::vector<int> labels;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        Rng aug_rng(mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(step)), i));
        batch.push_back(random_shift_augment(train_set[pool[i]], aug_rng, config.augment_probability,
                                             config.shift_low, config.shift_high));
        labels.push_back(batch.back().label);
      }
      std::vector<const StrokeSample*> ptrs;
      for (const auto& s : batch) ptrs.push_back(&s);

      Rng dropout_rng(mix_seed(config.seed ^ 0xd5a61266f0c9392cULL, static_cast<std::uint64_t>(step)));
      ForwardOptions options;
      options.dropout_rng = &dropout_rng;
      Tape<T> tape;
      Var<T> logits = model.logits(tape, ptrs, options);
      Var<T> loss = ops::smoothed_cross_entropy(logits, std::span<const int>(labels), static_cast<T>(config.label_smoothing));
      const double loss_value = static_cast<double>(loss.value()(0, 0));
      if (!std::isfinite(loss_value))
        throw RuntimeError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      tape.backward(loss);
      model.params().zero_grad();
      tape.accumulate_param_grads(model.params());

      if (config.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& [name, entry] : model.params()) sq += static_cast<double>(entry.grad.squaredNorm());
        const double norm = std::sqrt(sq);
        if (norm > config.grad_clip)
          for (auto& [name, entry] : model.params()) entry.grad *= static_cast<T>(config.grad_clip / norm);
      }
      lr = lr_schedule(step, total_steps, config);
      optimizer.step(model.params(), lr);
      ++step;
      loss_sum += loss_value * static_cast<double>(stop - start);
    }

    const EvalReport report = hooks.validate ? hooks.validate(model, epoch) : evaluate(model, val_set);
    EpochRecord record{epoch, loss_sum / static_cast<double>(pool.size()), report.accuracy, report.macro_f1, lr};
    result.history.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);

    if (report.macro_f1 > result.best_val_macro_f1) {
      result.best_val_macro_f1 = report.macro_f1;
      result.best_val_acc = report.accuracy;
      result.best_epoch = epoch;
      result.best_params = model.params();
      since_best = 0;
      if (report.macro_f1 >= 1.0) {  // nothing can strictly improve on a perfect score
        result.early_stopped = true;
        break;
      }
    } else if (++since_best >= config.early_stop_n_epochs) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace bst
