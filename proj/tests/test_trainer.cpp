#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "bst/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bst;
using fixture::random_sample;
using fixture::small_config;

namespace {

TrainConfig quick_config(int epochs) {
  TrainConfig t;
  t.n_epochs = epochs;
  t.early_stop_n_epochs = epochs;
  t.batch_size = 4;
  t.learning_rate = 3e-3;
  t.warm_up_step = 1;
  t.augment_probability = 0.0;
  t.seed = 17;
  return t;
}

// Two classes told apart by the sign of the shuttle track.
std::vector<StrokeSample> separable_set(int n, int L, std::uint64_t seed) {
  std::vector<StrokeSample> out;
  for (int i = 0; i < n; ++i) {
    auto s = random_sample(L, L, seed + static_cast<std::uint64_t>(i), i % 2);
    for (int f = 0; f < L; ++f) s.shuttle[s.shuttle_index(f, 1)] = i % 2 ? 0.8 : -0.8;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss

TEST(SmoothedCrossEntropy, OneHotOnTargetWithoutSmoothingIsZero) {
  const std::vector<double> p{0.0, 1.0, 0.0};
  EXPECT_EQ(smoothed_cross_entropy(p, 1, 0.0), 0.0);
}

TEST(SmoothedCrossEntropy, UniformTwoClassIsLogTwo) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_NEAR(smoothed_cross_entropy(p, 0, 0.1), std::log(2.0), 1e-15);
}

TEST(SmoothedCrossEntropy, ZeroProbabilityUsesLogFloor) {
  const std::vector<double> p{0.0, 1.0};
  EXPECT_NEAR(smoothed_cross_entropy(p, 0, 0.0), -std::log(1e-12), 1e-9);
}

TEST(SmoothedCrossEntropy, MatchesOracleOnRandomTriples) {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const int K = rng.uniform_int(2, 35);
    std::vector<double> p(static_cast<std::size_t>(K));
    double sum = 0.0;
    for (double& x : p) sum += (x = rng.uniform() + 1e-3);
    for (double& x : p) x /= sum;
    const int target = rng.uniform_int(0, K - 1);
    const double eps = rng.uniform(0.0, 0.5);
    EXPECT_NEAR(smoothed_cross_entropy(p, target, eps), oracle::smoothed_ce(p, target, eps), 1e-12);
  }
}

TEST(SmoothedCrossEntropy, RejectsBadTarget) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_THROW(smoothed_cross_entropy(p, 2, 0.1), ValidationError);
  EXPECT_THROW(smoothed_cross_entropy(p, -1, 0.1), ValidationError);
}

// ---------------------------------------------------------------------------
// Schedule

TEST(LrSchedule, WarmUpEndpoints) {
  TrainConfig c;
  EXPECT_EQ(lr_schedule(0, 10000, c), 0.0);
  EXPECT_EQ(lr_schedule(c.warm_up_step, 10000, c), c.learning_rate);
  EXPECT_DOUBLE_EQ(lr_schedule(c.warm_up_step / 2, 10000, c), c.learning_rate / 2.0);
}

TEST(LrSchedule, QuarterCycleEndsAtZero) {
  TrainConfig c;
  EXPECT_NEAR(lr_schedule(10000, 10000, c), 0.0, 1e-12);
}

TEST(LrSchedule, MidpointOfQuarterCycle) {
  TrainConfig c;
  c.warm_up_step = 100;
  // progress 1/2 of a quarter cycle: cos(pi / 4)
  EXPECT_NEAR(lr_schedule(100 + 450, 1000, c), c.learning_rate / std::sqrt(2.0), 1e-15);
}

TEST(LrSchedule, NonIncreasingAfterWarmUpAndNeverNegative) {
  TrainConfig c;
  double prev = lr_schedule(c.warm_up_step, 5000, c);
  for (long s = c.warm_up_step + 1; s <= 5000; ++s) {
    const double lr = lr_schedule(s, 5000, c);
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, 0.0);
    prev = lr;
  }
  c.cosine_annealing_num_cycles = 1.0;
  for (long s = 0; s <= 5000; s += 7) EXPECT_GE(lr_schedule(s, 5000, c), 0.0);
}

TEST(LrSchedule, WarmUpMustBeBelowTotalSteps) {
  TrainConfig c;
  EXPECT_THROW(lr_schedule(0, c.warm_up_step, c), ConfigError);
  EXPECT_THROW(lr_schedule(-1, 10000, c), ValidationError);
}

// ---------------------------------------------------------------------------
// Config

TEST(TrainConfig, DefaultsAndValidation) {
  const TrainConfig c;
  EXPECT_EQ(c.n_epochs, 1600);
  EXPECT_EQ(c.early_stop_n_epochs, 300);
  EXPECT_EQ(c.batch_size, 128);
  EXPECT_EQ(c.learning_rate, 5e-4);
  EXPECT_EQ(c.warm_up_step, 400);
  EXPECT_EQ(c.cosine_annealing_num_cycles, 0.25);
  EXPECT_EQ(c.weight_decay, 1e-2);
  EXPECT_EQ(c.label_smoothing, 0.1);
  EXPECT_FALSE(c.class_balance);
  EXPECT_EQ(c.grad_clip, 0.0);
  EXPECT_NO_THROW(c.validate());
  TrainConfig bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.label_smoothing = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(AdamW, ZeroLearningRateLeavesParametersUntouched) {
  ParamStore<double> store;
  store.add("a", 3, 2, Init::xavier, 1);
  store.at("a").grad.setConstant(0.7);
  const auto before = store.value("a");
  AdamW<double> opt(0.01);
  opt.step(store, 0.0);
  EXPECT_EQ(store.value("a"), before);
}

// One step from zero state: m/(sqrt(v)+eps) with bias correction is
// g/(|g|+eps'), so each entry moves by about lr * sign(g) after decay.
TEST(AdamW, FirstStepIsSignedLearningRateAfterDecay) {
  ParamStore<double> store;
  store.add("a", 1, 3, Init::zeros, 1);
  store.value("a") << 1.0, -2.0, 0.5;
  store.at("a").grad << 0.3, -4.0, 0.0;
  AdamW<double> opt(0.1);
  opt.step(store, 0.01);
  EXPECT_NEAR(store.value("a")(0, 0), 1.0 * (1 - 0.001) - 0.01, 1e-9);
  EXPECT_NEAR(store.value("a")(0, 1), -2.0 * (1 - 0.001) + 0.01, 1e-9);
  EXPECT_NEAR(store.value("a")(0, 2), 0.5 * (1 - 0.001), 1e-12);
}

// ---------------------------------------------------------------------------
// Sampling

TEST(EpochPool, BalancingDuplicatesWithoutChangingContents) {
  std::vector<StrokeSample> data;
  for (int i = 0; i < 7; ++i) data.push_back(random_sample(4, 4, static_cast<std::uint64_t>(i), i < 5 ? 0 : (i == 5 ? 1 : 2)));
  const auto plain = epoch_pool(data, false);
  EXPECT_EQ(plain.size(), 7u);
  const auto balanced = epoch_pool(data, true);
  EXPECT_EQ(balanced.size(), 15u);
  std::map<int, int> per_class;
  for (auto i : balanced) ++per_class[data[i].label];
  EXPECT_EQ(per_class[0], 5);
  EXPECT_EQ(per_class[1], 5);
  EXPECT_EQ(per_class[2], 5);
  for (auto i : balanced) EXPECT_LT(i, data.size());
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Train, SingleClassLossDecreasesOverFirstEpochs) {
  const auto c = small_config(Variant::bst, 3, 6);
  BstModel<double> model(c, 2);
  std::vector<StrokeSample> data;
  for (int i = 0; i < 8; ++i) data.push_back(random_sample(6, 6, 40 + static_cast<std::uint64_t>(i), 0));
  auto cfg = quick_config(5);
  const auto result = train(model, std::span<const StrokeSample>(data), std::span<const StrokeSample>(data), cfg);
  ASSERT_EQ(result.history.size(), 5u);
  for (std::size_t e = 1; e < result.history.size(); ++e)
    EXPECT_LT(result.history[e].train_loss, result.history[e - 1].train_loss) << "epoch " << e + 1;
}

TEST(Train, EarlyStopAtPatienceBoundaryWithFrozenValidation) {
  const auto c = small_config(Variant::bst0, 2, 6);
  BstModel<double> model(c, 3);
  const auto data = separable_set(4, 6, 1);
  auto cfg = quick_config(100);
  cfg.early_stop_n_epochs = 7;
  TrainHooks<double> hooks;
  hooks.validate = [](const BstModel<double>&, int) {
    EvalReport r;
    r.macro_f1 = 0.5;
    r.accuracy = 0.5;
    return r;
  };
  const auto result = train(model, std::span<const StrokeSample>(data), {}, cfg, hooks);
  EXPECT_TRUE(result.early_stopped);
  EXPECT_EQ(result.best_epoch, 1);
  EXPECT_EQ(result.history.size(), 1u + 7u);
}

TEST(Train, ImprovementResetsPatience) {
  const auto c = small_config(Variant::bst0, 2, 6);
  BstModel<double> model(c, 3);
  const auto data = separable_set(4, 6, 1);
  auto cfg = quick_config(100);
  cfg.early_stop_n_epochs = 3;
  TrainHooks<double> hooks;
  hooks.validate = [](const BstModel<double>&, int epoch) {
    EvalReport r;
    r.macro_f1 = epoch == 3 ? 0.6 : 0.5;
    return r;
  };
  const auto result = train(model, std::span<const StrokeSample>(data), {}, cfg, hooks);
  EXPECT_EQ(result.best_epoch, 3);
  EXPECT_EQ(result.history.size(), 6u);
}

TEST(Train, PerfectValidationStopsTraining) {
  const auto c = small_config(Variant::bst0, 2, 6);
  BstModel<double> model(c, 3);
  const auto data = separable_set(4, 6, 1);
  TrainHooks<double> hooks;
  hooks.validate = [](const BstModel<double>&, int epoch) {
    EvalReport r;
    r.macro_f1 = epoch >= 2 ? 1.0 : 0.5;
    return r;
  };
  const auto result = train(model, std::span<const StrokeSample>(data), {}, quick_config(50), hooks);
  EXPECT_EQ(result.best_epoch, 2);
  EXPECT_EQ(result.history.size(), 2u);
}

TEST(Train, IdenticalSeedsGiveIdenticalRuns) {
  const auto c = small_config(Variant::bst_cg_ap, 2, 6);
  const auto train_set = separable_set(10, 6, 5), val_set = separable_set(6, 6, 50);
  auto cfg = quick_config(4);
  cfg.augment_probability = 0.5;
  auto run = [&] {
    auto mc = c;
    mc.dropout = 0.1;
    BstModel<double> model(mc, 9);
    return train(model, std::span<const StrokeSample>(train_set), std::span<const StrokeSample>(val_set), cfg);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.history[e].val_macro_f1, b.history[e].val_macro_f1);
  }
  for (const auto& [name, entry] : a.best_params) EXPECT_EQ(entry.value, b.best_params.value(name)) << name;
}

TEST(Train, ReturnedCheckpointHoldsTheBestHistoryScore) {
  const auto c = small_config(Variant::bst, 2, 6);
  BstModel<double> model(c, 11);
  const auto train_set = separable_set(12, 6, 7), val_set = separable_set(8, 6, 70);
  auto cfg = quick_config(6);
  cfg.learning_rate = 1e-2;
  const auto result = train(model, std::span<const StrokeSample>(train_set), std::span<const StrokeSample>(val_set), cfg);
  double best = -1.0;
  for (const auto& r : result.history) best = std::max(best, r.val_macro_f1);
  EXPECT_EQ(result.best_val_macro_f1, best);
  EXPECT_EQ(result.history[static_cast<std::size_t>(result.best_epoch - 1)].val_macro_f1, best);
  const BstModel<double> restored(c, result.best_params);
  EXPECT_EQ(evaluate(restored, std::span<const StrokeSample>(val_set)).macro_f1, best);
}

TEST(Train, LearnsSeparableClasses) {
  const auto c = small_config(Variant::bst0, 2, 6);
  BstModel<double> model(c, 12);
  const auto train_set = separable_set(16, 6, 8), val_set = separable_set(8, 6, 80);
  auto cfg = quick_config(30);
  cfg.learning_rate = 1e-2;
  const auto result = train(model, std::span<const StrokeSample>(train_set), std::span<const StrokeSample>(val_set), cfg);
  EXPECT_EQ(result.best_val_macro_f1, 1.0);
}

TEST(Train, NonFiniteLossAbortsNamingTheBatch) {
  const auto c = small_config(Variant::bst0, 2, 6);
  BstModel<double> model(c, 13);
  auto data = separable_set(4, 6, 9);
  data[0].shuttle[0] = std::numeric_limits<double>::quiet_NaN();
  auto cfg = quick_config(1);
  cfg.warm_up_step = 0;
  try {
    train(model, std::span<const StrokeSample>(data), std::span<const StrokeSample>(data), cfg);
    FAIL() << "expected a runtime error";
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsEmptyOrMislabelledData) {
  const auto c = small_config(Variant::bst0, 2, 6);
  BstModel<double> model(c, 13);
  const std::vector<StrokeSample> none;
  auto data = separable_set(4, 6, 9);
  EXPECT_THROW(train(model, std::span<const StrokeSample>(none), std::span<const StrokeSample>(data), quick_config(1)),
               ValidationError);
  data[1].label = 5;
  EXPECT_THROW(train(model, std::span<const StrokeSample>(data), std::span<const StrokeSample>(data), quick_config(1)),
               ValidationError);
}

TEST(Train, WarmUpLongerThanRunIsAConfigError) {
  const auto c = small_config(Variant::bst0, 2, 6);
  BstModel<double> model(c, 13);
  const auto data = separable_set(4, 6, 9);
  auto cfg = quick_config(1);
  cfg.warm_up_step = 400;
  EXPECT_THROW(train(model, std::span<const StrokeSample>(data), std::span<const StrokeSample>(data), cfg), ConfigError);
}

TEST(Train, HistoryCsvFormat) {
  const std::vector<EpochRecord> h{{1, 0.5, 0.25, 0.2, 1e-4}};
  EXPECT_EQ(format_history(h), "epoch,train_loss,val_acc,val_macro_f1,lr\n1,0.5,0.25,0.2,0.0001\n");
}
