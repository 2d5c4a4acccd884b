#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "bilinsim/checkpoint_io.hpp"
#include "bilinsim/config.hpp"
#include "bilinsim/data.hpp"
#include "bilinsim/errors.hpp"
#include "bilinsim/optim.hpp"
#include "bilinsim/train.hpp"
#include "grad_check.hpp"
#include "gtest/gtest.h"
#include "test_support.hpp"

namespace bilinsim {
namespace {

const std::filesystem::path kConfigDir = BILINSIM_CONFIG_DIR;

double final_val_accuracy(const RunResult& r) {
  for (auto it = r.metrics.rbegin(); it != r.metrics.rend(); ++it)
    if (it->split == "val") return it->accuracy;
  return -1;
}

// --- gradients --------------------------------------------------------------

TEST(Grad, ZeroOutputWeightsHandCase) {
  // x~ = (1, 1): u = 1 + 2 = 3, v = 2, u*v = 6; logits 0, softmax (1/2, 1/2).
  BilinearLayer b{Matrix{{1, 2}}, Matrix{{1, 1}}, Matrix::Zero(2, 1), true};
  ModelStack s = make_stack(b);
  Matrix x{{1.0}};
  std::vector<int> y{0};
  Gradients g = grad(s, x, y);
  EXPECT_DOUBLE_EQ(g.loss, std::log(2.0));
  const auto& db = std::get<BilinearLayer>(g.layers[0]);
  EXPECT_DOUBLE_EQ(db.d(0, 0), -0.5 * 6);
  EXPECT_DOUBLE_EQ(db.d(1, 0), 0.5 * 6);
  EXPECT_EQ(db.l.norm(), 0.0);
  EXPECT_EQ(db.r.norm(), 0.0);
}

TEST(Grad, MatchesCentralDifferences) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t classes = testing::pick(rng, 2, 6);
    ModelStack s = testing::random_training_stack(rng, classes);
    Matrix x = testing::random_matrix(rng, 6, static_cast<Eigen::Index>(s.input_dim()));
    std::vector<int> y(6);
    for (auto& v : y) v = static_cast<int>(testing::pick(rng, 0, classes - 1));
    EXPECT_LT(testing::max_grad_rel_error(s, x, y), 1e-4) << "trial " << trial;
  }
}

TEST(Grad, DuplicatedBatchHasSameMean) {
  std::mt19937_64 rng(2);
  ModelStack s = testing::random_training_stack(rng, 3);
  Matrix x = testing::random_matrix(rng, 3, static_cast<Eigen::Index>(s.input_dim()));
  std::vector<int> y{0, 2, 1};
  Matrix xx(6, x.cols());
  xx << x, x;
  std::vector<int> yy{0, 2, 1, 0, 2, 1};
  Gradients a = grad(s, x, y), b = grad(s, xx, yy);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  for_each_matrix_pair(a.layers, b.layers, [](Matrix& p, const Matrix& q) {
    EXPECT_LE((p - q).cwiseAbs().maxCoeff(), 1e-12 * (1 + q.cwiseAbs().maxCoeff()));
  });
}

TEST(Grad, Errors) {
  std::mt19937_64 rng(3);
  ModelStack s = make_stack(testing::random_bilinear(rng, 2, 2, 3, true));
  std::vector<int> bad{3};
  EXPECT_THROW(grad(s, Matrix::Zero(1, 2), bad), DomainError);
  std::vector<int> ok{0};
  EXPECT_THROW(grad(s, Matrix::Zero(1, 3), ok), ShapeError);
  std::vector<int> two{0, 1};
  EXPECT_THROW(grad(s, Matrix::Zero(1, 2), two), ShapeError);
}

TEST(CrossEntropy, UniformLogits) {
  std::vector<int> y{0, 3};
  EXPECT_NEAR(cross_entropy(Matrix::Zero(2, 4), y), std::log(4.0), 1e-15);
}

// --- optimiser --------------------------------------------------------------

std::vector<Layer> scalar_params(double v) { return {LinearLayer{Matrix::Constant(1, 1, v)}}; }
double scalar(const std::vector<Layer>& p) { return std::get<LinearLayer>(p[0]).w(0, 0); }

TEST(AdamW, FirstStepHandValue) {
  auto p = scalar_params(0.5);
  OptimState st = OptimState::zeros_like(p);
  adamw_step(p, scalar_params(1.0), st, AdamParams{1e-3, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_NEAR(scalar(p) - 0.5, -1e-3 / (1 + 1e-8), 1e-15);
  EXPECT_EQ(st.t, 1);
  EXPECT_GE(std::get<LinearLayer>(st.v[0]).w(0, 0), 0.0);
}

TEST(AdamW, DecoupledDecayShrinksGeometrically) {
  auto p = scalar_params(2.0);
  OptimState st = OptimState::zeros_like(p);
  const AdamParams ap{0.01, 0.9, 0.999, 1e-8, 0.5};
  for (int i = 0; i < 5; ++i) adamw_step(p, scalar_params(0.0), st, ap);
  EXPECT_NEAR(scalar(p), 2.0 * std::pow(1 - 0.01 * 0.5, 5), 1e-15);
}

TEST(AdamW, RejectsNonFiniteAndMismatchedGradients) {
  auto p = scalar_params(1.0);
  OptimState st = OptimState::zeros_like(p);
  EXPECT_THROW(adamw_step(p, scalar_params(std::nan("")), st, {}), DomainError);
  std::vector<Layer> wrong{LinearLayer{Matrix::Zero(2, 1)}};
  EXPECT_THROW(adamw_step(p, wrong, st, {}), ShapeError);
}

TEST(AdamW, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(4);
    std::vector<Layer> p = testing::random_training_stack(rng, 3).layers();
    OptimState st = OptimState::zeros_like(p);
    std::vector<std::vector<Layer>> history;
    for (int i = 0; i < 10; ++i) {
      std::vector<Layer> g = p;
      for_each_matrix_pair(g, p, [&](Matrix& m, const Matrix&) { m = testing::random_matrix(rng, m.rows(), m.cols()); });
      adamw_step(p, g, st, AdamParams{1e-2, 0.9, 0.98, 1e-8, 0.1});
      history.push_back(p);
    }
    return history;
  };
  auto a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i)
    for_each_matrix_pair(a[i], b[i], [](Matrix& x, const Matrix& y) { EXPECT_TRUE(x == y); });
}

TEST(Schedule, ConstantAndCosine) {
  EXPECT_DOUBLE_EQ(lr_schedule(Schedule::kConstant, 0, 100, 0.3), 0.3);
  EXPECT_DOUBLE_EQ(lr_schedule(Schedule::kConstant, 77, 100, 0.3), 0.3);
  EXPECT_DOUBLE_EQ(lr_schedule(Schedule::kCosine, 0, 100, 0.3), 0.3);
  EXPECT_NEAR(lr_schedule(Schedule::kCosine, 100, 100, 0.3), 0.0, 1e-17);
  EXPECT_NEAR(lr_schedule(Schedule::kCosine, 50, 100, 0.3), 0.15, 1e-16);
  EXPECT_EQ(parse_schedule("cosine"), Schedule::kCosine);
  EXPECT_EQ(parse_schedule("constant"), Schedule::kConstant);
  EXPECT_THROW(parse_schedule("linear"), ConfigError);
}

// --- task generators --------------------------------------------------------

std::pair<int, int> decode_pair(const Dataset& d, std::size_t row, int p) {
  int a = -1, b = -1;
  for (int j = 0; j < 2 * p; ++j)
    if (d.x(static_cast<Eigen::Index>(row), j) == 1.0) (j < p ? a : b) = j < p ? j : j - p;
  return {a, b};
}

TEST(ModAdd, SplitSizesLabelsAndEncoding) {
  Split s = gen_modadd(5, 0);
  EXPECT_EQ(s.train.size(), 15u);
  EXPECT_EQ(s.val.size(), 10u);
  std::set<std::pair<int, int>> seen;
  for (const Dataset* d : {&s.train, &s.val}) {
    EXPECT_EQ(d->x.cols(), 10);
    for (std::size_t i = 0; i < d->size(); ++i) {
      EXPECT_EQ(d->x.row(static_cast<Eigen::Index>(i)).sum(), 2.0);
      auto [a, b] = decode_pair(*d, i, 5);
      EXPECT_EQ(d->y[i], (a + b) % 5);
      seen.insert({a, b});
    }
  }
  EXPECT_EQ(seen.size(), 25u);
  EXPECT_TRUE(seen.count({2, 4}));
  EXPECT_EQ((2 + 4) % 5, 1);
  Split again = gen_modadd(5, 0), other = gen_modadd(5, 1);
  EXPECT_EQ(again.train.x, s.train.x);
  EXPECT_NE(other.train.x, s.train.x);
  EXPECT_THROW(gen_modadd(1, 0), DomainError);
}

TEST(SecondArgmax, LabelRule) {
  std::vector<double> mixed{-0.54, -0.19, 0.17, -10.0}, desc{4, 3, 2, 1}, tie{1, 1, 0, 0};
  EXPECT_EQ(second_argmax(mixed), 1);
  EXPECT_EQ(second_argmax(desc), 1);
  EXPECT_EQ(second_argmax(tie), 1);
}

TEST(SecondArgmax, DistributionsAndDeterminism) {
  const auto& names = second_argmax_distributions();
  EXPECT_EQ(names.size(), 9u);
  std::size_t symmetric = 0;
  for (const auto& name : names) {
    Dataset d = gen_second_argmax(name, 200, 5);
    EXPECT_EQ(d.size(), 200u);
    EXPECT_EQ(d.x.cols(), 4);
    EXPECT_TRUE(d.x.allFinite());
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::vector<double> row(d.x.row(static_cast<Eigen::Index>(i)).data(),
                              d.x.row(static_cast<Eigen::Index>(i)).data() + 4);
      EXPECT_EQ(d.y[i], second_argmax(row));
    }
    EXPECT_EQ(gen_second_argmax(name, 200, 5).x, d.x);
    symmetric += is_symmetric_distribution(name);
  }
  EXPECT_EQ(symmetric, 6u);
  EXPECT_TRUE(is_symmetric_distribution("gaussian"));
  EXPECT_FALSE(is_symmetric_distribution("half-gaussian"));
  EXPECT_THROW(gen_second_argmax("cauchy", 10, 0), DomainError);
  EXPECT_THROW(gen_second_argmax("gaussian", 0, 0), DomainError);
}

TEST(SecondArgmax, PermutationSamples) {
  Dataset d = gen_second_argmax("permutations", 100, 1);
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    std::vector<double> row(d.x.row(i).data(), d.x.row(i).data() + 4);
    std::sort(row.begin(), row.end());
    EXPECT_EQ(row, (std::vector<double>{1, 2, 3, 4}));
  }
  Dataset m10 = gen_second_argmax("gaussian-and-minus-10", 100, 1);
  for (Eigen::Index i = 0; i < m10.x.rows(); ++i) EXPECT_EQ((m10.x.row(i).array() == -10.0).count(), 1);
}

TEST(StagedDigits, ClassMeansAndSampling) {
  const Matrix& mu = digit_class_means();
  ASSERT_EQ(mu.rows(), kDigitClasses);
  ASSERT_EQ(mu.cols(), kDigitDim);
  for (int i = 0; i < kDigitClasses; ++i) {
    EXPECT_NEAR(mu.row(i).norm(), 1.0, 1e-12);
    for (int j = 0; j < i; ++j) EXPECT_LE(mu.row(i).dot(mu.row(j)), 0.5 + 1e-12);
  }
  Dataset d = gen_staged_digits({0, 1, 2, 3, 4}, 10, 3);
  EXPECT_EQ(d.size(), 50u);
  for (int y : d.y) EXPECT_TRUE(y >= 0 && y <= 4);
  EXPECT_EQ(gen_staged_digits({0, 1, 2, 3, 4}, 10, 3).x, d.x);
  EXPECT_THROW(gen_staged_digits({}, 10, 3), DomainError);
  EXPECT_THROW(gen_staged_digits({10}, 10, 3), DomainError);
}

TEST(Poison, ExactCountTriggerAndLabel) {
  Dataset clean = gen_staged_digits({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 100, 4);
  const PoisonSpec spec = default_digit_trigger(0.1);
  Dataset p = poison(clean, spec, 7);
  std::size_t changed = 0;
  for (Eigen::Index i = 0; i < p.x.rows(); ++i) {
    if (p.x.row(i) == clean.x.row(i)) {
      EXPECT_EQ(p.y[static_cast<std::size_t>(i)], clean.y[static_cast<std::size_t>(i)]);
      continue;
    }
    ++changed;
    for (auto [coord, value] : spec.trigger) EXPECT_EQ(p.x(i, static_cast<Eigen::Index>(coord)), value);
    EXPECT_EQ(p.y[static_cast<std::size_t>(i)], spec.target);
  }
  EXPECT_EQ(changed, 100u);
  Dataset none = poison(clean, default_digit_trigger(0.0), 7);
  EXPECT_EQ(none.x, clean.x);
  EXPECT_EQ(none.y, clean.y);
  PoisonSpec bad = spec;
  bad.trigger.push_back({64, 1.0});
  EXPECT_THROW(poison(clean, bad, 0), DomainError);
}

TEST(Poison, AttackSuccessExtremes) {
  Dataset d = gen_staged_digits({0, 1, 9}, 20, 5);
  const PoisonSpec spec = default_digit_trigger(0.1);
  // Constant logits: +1 (or -1) on the target class only.
  auto constant_model = [&](double v) {
    Matrix l = Matrix::Zero(1, kDigitDim + 1);
    l(0, 0) = 1;
    Matrix dd = Matrix::Zero(kDigitClasses, 1);
    dd(spec.target, 0) = v;
    return make_stack(BilinearLayer{l, l, dd, true});
  };
  EXPECT_DOUBLE_EQ(attack_success_rate(constant_model(1.0), d, spec), 1.0);
  EXPECT_DOUBLE_EQ(attack_success_rate(constant_model(-1.0), d, spec), 0.0);
  EXPECT_THROW(attack_success_rate(constant_model(1.0), gen_staged_digits({9}, 5, 5), spec), DomainError);
}

// --- configs ----------------------------------------------------------------

TEST(Config, ParseValidateAndRoundTrip) {
  const char* doc = R"({
    "task": "staged-digits", "seed": 3,
    "model": {"embed_dim": 8, "rank": 4, "bilinear_out": 6, "lift": true},
    "optimizer": {"lr": 0.002, "weight_decay": 0.1, "betas": [0.8, 0.9]},
    "schedule": "cosine", "batch_size": 16,
    "stages": [{"name": "a", "classes": [0, 1], "epochs": 2},
               {"name": "b", "steps": 5, "poison": {"fraction": 0.2, "trigger": [[60, 3.0]], "target": 1}}],
    "checkpoints": {"steps": [0, 3]}
  })";
  TaskConfig cfg = parse_task_config(doc);
  EXPECT_EQ(cfg.task, TaskKind::kStagedDigits);
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.model.embed_dim, 8u);
  EXPECT_TRUE(cfg.model.lift);
  EXPECT_DOUBLE_EQ(cfg.optimizer.beta1, 0.8);
  EXPECT_EQ(cfg.schedule, Schedule::kCosine);
  ASSERT_EQ(cfg.stages.size(), 2u);
  EXPECT_EQ(cfg.stages[0].classes, (std::vector<int>{0, 1}));
  ASSERT_TRUE(cfg.stages[1].poison.has_value());
  EXPECT_EQ(cfg.stages[1].poison->target, 1);
  EXPECT_EQ(cfg.checkpoints.steps, (std::vector<long>{0, 3}));
  EXPECT_EQ(dump_task_config(parse_task_config(dump_task_config(cfg))), dump_task_config(cfg));
}

TEST(Config, SingleStageShorthandAndDefaults) {
  TaskConfig cfg = parse_task_config(R"({"task": "modadd", "steps": 100})");
  ASSERT_EQ(cfg.stages.size(), 1u);
  EXPECT_EQ(cfg.stages[0].name, "train");
  EXPECT_EQ(cfg.stages[0].steps, 100);
  EXPECT_EQ(cfg.modulus, 23);
}

std::string config_error(const std::string& doc) {
  try {
    parse_task_config(doc).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(config_error(R"({"task": "second-argmax", "steps": 10, "data": {"distribution": "cauchy"}})")
                .find("data.distribution"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"task": "modadd", "steps": 10, "optimizer": {"lr": 0}})").find("optimizer.lr"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"task": "modadd", "steps": 10, "typo": 1})").find("typo"), std::string::npos);
  EXPECT_NE(config_error(R"({"task": "modadd", "steps": 10, "batch_size": 0})").find("batch_size"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"task": "modadd"})").find("stages"), std::string::npos);
  EXPECT_NE(config_error(R"({"task": "modadd", "steps": 10, "checkpoints": {"steps": [5, 2]}})").find("checkpoints"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"task": "nope", "steps": 10})").find("task"), std::string::npos);
  EXPECT_NE(config_error("{").find("malformed"), std::string::npos);
}

TEST(Config, ShippedConfigsValidate) {
  for (const char* name : {"second_argmax.json", "grokking.json", "staged_forgetting.json", "backdoor.json"})
    EXPECT_NO_THROW(load_task_config(kConfigDir / name).validate()) << name;
  EXPECT_THROW(load_task_config(kConfigDir / "missing.json"), IoError);
}

TEST(Config, LogSpacedSteps) {
  auto s = log_spaced_steps(30000, 64);
  EXPECT_EQ(s.size(), 64u);
  EXPECT_EQ(s.front(), 0);
  EXPECT_EQ(s.back(), 30000);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::set<long>(s.begin(), s.end()).size(), s.size());
  EXPECT_EQ(log_spaced_steps(5, 64).size(), 6u);
}

// --- models and runs --------------------------------------------------------

TEST(InitModel, LayoutFollowsConfig) {
  ModelConfig mc;
  mc.embed_dim = 8;
  mc.rank = 5;
  mc.bilinear_out = 6;
  mc.lift = true;
  ModelStack s = init_model(mc, 12, 3, 0);
  ASSERT_EQ(s.layers().size(), 3u);
  EXPECT_EQ(s.input_dim(), 12u);
  EXPECT_EQ(s.output_dim(), 3u);
  const auto& b = std::get<BilinearLayer>(s.layers()[1]);
  EXPECT_EQ(b.rank(), 5u);
  EXPECT_EQ(b.in_dim(), 9u);
  EXPECT_TRUE(b.lift);
  EXPECT_EQ(serialise_checkpoint({init_model(mc, 12, 3, 0), {"t", "s", 0, 0}}),
            serialise_checkpoint({s, {"t", "s", 0, 0}}));
}

TaskConfig tiny_modadd() {
  TaskConfig cfg = parse_task_config(R"({
    "task": "modadd", "seed": 1, "data": {"modulus": 7},
    "model": {"rank": 8, "bilinear_out": 8},
    "optimizer": {"lr": 0.01, "weight_decay": 0.1},
    "batch_size": 16, "steps": 60, "eval_interval": 20,
    "checkpoints": {"steps": [0, 10, 60]}
  })");
  return cfg;
}

TEST(RunExperiment, WritesCheckpointsAndMetrics) {
  const auto dir = std::filesystem::temp_directory_path() / "bilinsim_test_run";
  std::filesystem::remove_all(dir);
  RunResult r = run_experiment(tiny_modadd(), dir);
  EXPECT_EQ(r.total_steps, 60);
  ASSERT_EQ(r.checkpoints.size(), 3u);
  EXPECT_EQ(r.checkpoints[1].meta.step, 10);
  EXPECT_EQ(r.checkpoints[1].meta.task, "modadd");
  EXPECT_EQ(r.checkpoints[1].meta.stage, "train");
  EXPECT_EQ(discover_checkpoints(dir).size(), 3u);
  EXPECT_EQ(r.files.size(), 3u);
  std::ifstream f(dir / "metrics.csv");
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "step,split,loss,accuracy,attack_success");
  std::set<long> steps;
  for (const auto& m : r.metrics) steps.insert(m.step);
  EXPECT_EQ(steps, (std::set<long>{0, 10, 20, 40, 60}));
  // Loss at the end of training is below the loss at initialisation.
  EXPECT_LT(r.metrics[r.metrics.size() - 2].loss, r.metrics[0].loss);
  std::filesystem::remove_all(dir);
}

TEST(RunExperiment, DeterministicCheckpointBytes) {
  RunResult a = run_experiment(tiny_modadd()), b = run_experiment(tiny_modadd());
  ASSERT_EQ(a.checkpoints.size(), b.checkpoints.size());
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i)
    EXPECT_EQ(serialise_checkpoint(a.checkpoints[i]), serialise_checkpoint(b.checkpoints[i]));
  TaskConfig other = tiny_modadd();
  other.seed = 2;
  EXPECT_NE(serialise_checkpoint(run_experiment(other).checkpoints.back()),
            serialise_checkpoint(a.checkpoints.back()));
}

TEST(RunExperiment, DivergenceCarriesStep) {
  TaskConfig cfg = tiny_modadd();
  cfg.model.init_scale = 1e80;
  try {
    run_experiment(cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.step, 0);
  }
}

TEST(RunExperiment, CheckpointPastEndRejected) {
  TaskConfig cfg = tiny_modadd();
  cfg.checkpoints.steps = {0, 61};
  EXPECT_THROW(run_experiment(cfg), ConfigError);
}

TEST(RunExperiment, StagedPoisonLogsAttackSuccess) {
  TaskConfig cfg = parse_task_config(R"({
    "task": "staged-digits", "data": {"n_per_class": 20, "val_per_class": 10},
    "model": {"rank": 8, "lift": true},
    "batch_size": 50,
    "stages": [{"name": "00-a", "classes": [0, 1, 9], "epochs": 1},
               {"name": "01-b", "classes": [0, 1, 9], "epochs": 1,
                "poison": {"fraction": 0.1, "trigger": [[60, 3.0]], "target": 9}}]
  })");
  RunResult r = run_experiment(cfg);
  EXPECT_EQ(r.total_steps, 4);
  ASSERT_EQ(r.checkpoints.size(), 2u);
  EXPECT_EQ(r.checkpoints[0].meta.stage, "00-a");
  EXPECT_EQ(r.checkpoints[1].meta.step, 4);
  for (const auto& m : r.metrics) EXPECT_EQ(m.attack_success.has_value(), m.split == "val");
}

// Desk-scale training runs.

TEST(DeskScale, SecondArgmaxHalfGaussianLearns) {
  TaskConfig cfg = load_task_config(kConfigDir / "second_argmax.json");
  cfg.distribution = "half-gaussian";
  RunResult r = run_experiment(cfg);
  EXPECT_GT(final_val_accuracy(r), 0.9);
  EXPECT_EQ(r.checkpoints.size(), 14u);
}

TEST(DeskScale, SecondArgmaxGaussianPlateausNearHalf) {
  TaskConfig cfg = load_task_config(kConfigDir / "second_argmax.json");
  cfg.distribution = "gaussian";
  const double acc = final_val_accuracy(run_experiment(cfg));
  EXPECT_LE(acc, 0.6);
  EXPECT_GE(acc, 0.4);
}

TEST(DeskScale, DigitsBilinearBeatsLinearProbe) {
  TaskConfig cfg = parse_task_config(R"({
    "task": "staged-digits", "model": {"rank": 64, "lift": true},
    "optimizer": {"lr": 0.001, "weight_decay": 0.5}, "schedule": "cosine", "batch_size": 248,
    "stages": [{"name": "all", "epochs": 20}], "checkpoints": {"stage_end": true}
  })");
  const double bilinear = final_val_accuracy(run_experiment(cfg));
  EXPECT_GE(bilinear, 0.95);

  // Affine softmax probe trained to convergence with full-batch Adam.
  const std::vector<int> all{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  Dataset train = gen_staged_digits(all, 500, 0), val = gen_staged_digits(all, 200, 99);
  auto affine = [](const Matrix& x) {
    Matrix out(x.rows(), x.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(x.cols()) = x;
    return out;
  };
  const Matrix xt = affine(train.x), xv = affine(val.x);
  std::vector<Layer> p{LinearLayer{Matrix::Zero(kDigitClasses, kDigitDim + 1)}};
  OptimState st = OptimState::zeros_like(p);
  for (int it = 0; it < 1500; ++it)
    adamw_step(p, grad(ModelStack(kDigitDim + 1, p), xt, train.y).layers, st, AdamParams{0.05, 0.9, 0.999, 1e-8, 0});
  Dataset vd{xv, val.y};
  const double probe = accuracy(ModelStack(kDigitDim + 1, p), vd);
  EXPECT_LT(probe, 0.99);
}

TEST(DeskScale, ModAddGroks) {
  TaskConfig cfg = load_task_config(kConfigDir / "grokking.json");
  RunResult r = run_experiment(cfg);
  long train_sat = -1, val_09 = -1;
  for (const auto& m : r.metrics) {
    if (m.split == "train" && train_sat < 0 && m.accuracy >= 0.99) train_sat = m.step;
    if (m.split == "val" && val_09 < 0 && m.accuracy >= 0.9) val_09 = m.step;
  }
  EXPECT_GT(final_val_accuracy(r), 0.95);
  ASSERT_GT(train_sat, 0);
  ASSERT_GT(val_09, 0);
  EXPECT_GE(val_09, 10 * train_sat);
}

}  // namespace
}  // namespace bilinsim
