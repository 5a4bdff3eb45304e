#include "ffts/downstream.hpp"
#include "ffts/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ffts/rng.hpp"

using namespace ffts;
using namespace ffts::downstream;

namespace {

model::ModelConfig tiny_model() {
  model::ModelConfig m;
  m.seq_len = 32;
  m.d_model = 8;
  m.num_heads = 2;
  m.num_layers = 1;
  m.patch = {8, 4};
  m.ffn_hidden = 8;
  m.decomposition_kernel = 3;
  return m;
}

data::TimeSeries sine(int length, int channels, double period, double noise = 0.0, std::uint64_t seed = 1) {
  data::TimeSeries s;
  s.values.resize(length, channels);
  Rng rng(seed);
  for (int t = 0; t < length; ++t) {
    for (int c = 0; c < channels; ++c) {
      s.values(t, c) = std::sin(2.0 * std::numbers::pi * t / period + c) + noise * rng.normal();
    }
  }
  return s;
}

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace

TEST(MetricsTest, Identities) {
  const Matrix a = sine(10, 2, 5.0).values;
  EXPECT_EQ(metrics::mse(a, a), 0.0);
  EXPECT_EQ(metrics::mae(a, a), 0.0);
  EXPECT_EQ(metrics::smape(a, a), 0.0);
  EXPECT_DOUBLE_EQ(metrics::mse(m1(2), m1(1)), 1.0);
  EXPECT_DOUBLE_EQ(metrics::mae(m1(2), m1(1)), 1.0);
  EXPECT_NEAR(metrics::smape(m1(2), m1(1)), 200.0 / 3.0, 1e-12);
  EXPECT_EQ(metrics::smape(m1(0), m1(0)), 0.0);
  EXPECT_DOUBLE_EQ(metrics::smape(m1(0), m1(3)), 200.0);
  EXPECT_DOUBLE_EQ(metrics::mae(m1(-3), m1(1)), std::sqrt(metrics::mse(m1(-3), m1(1))));
  EXPECT_THROW(metrics::mse(Matrix::Zero(2, 1), Matrix::Zero(1, 2)), UsageError);
}

TEST(MetricsTest, Classification) {
  EXPECT_DOUBLE_EQ(metrics::f1_score(0.5, 0.5), 0.5);
  const auto c = metrics::classify({true, true, false, false}, {true, false, true, false});
  EXPECT_DOUBLE_EQ(c.precision, 0.5);
  EXPECT_DOUBLE_EQ(c.recall, 0.5);
  EXPECT_DOUBLE_EQ(c.f1, 0.5);
  EXPECT_FALSE(c.undefined);
  const auto none = metrics::classify({false, false}, {true, false});
  EXPECT_TRUE(none.undefined);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_THROW(metrics::classify({true}, {true, false}), UsageError);
}

TEST(MetricsTest, PointAdjustAndQuantile) {
  const std::vector<bool> labels{false, true, true, true, false, true, true};
  const std::vector<bool> pred{false, false, true, false, true, false, false};
  const std::vector<bool> adjusted{false, true, true, true, true, false, false};
  EXPECT_EQ(metrics::point_adjust(pred, labels), adjusted);
  EXPECT_DOUBLE_EQ(metrics::quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(metrics::quantile({4, 1, 3, 2}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(metrics::quantile({5}, 0.3), 5.0);
}

TEST(TaskSpecTest, Validation) {
  EXPECT_NO_THROW(TaskSpec::forecast(96, 7).validate());
  TaskSpec bad = TaskSpec::forecast(96);
  bad.mask_ratio = 0.25;
  EXPECT_THROW(bad.validate(), UsageError);
  TaskSpec missing;
  EXPECT_THROW(missing.validate(), UsageError);
  EXPECT_THROW(TaskSpec::impute(1.0).validate(), UsageError);
  EXPECT_THROW(TaskSpec::detect(0.0).validate(), UsageError);
  for (const auto& s : {TaskSpec::forecast(12, 3, false), TaskSpec::impute(0.375), TaskSpec::detect()}) {
    const auto back = task_spec_from_json(to_json(s));
    EXPECT_EQ(to_json(back), to_json(s));
  }
  EXPECT_THROW(task_spec_from_json({{"task", "forecast"}, {"horizon", 4}, {"hrizon", 4}}), UsageError);
  EXPECT_THROW(task_spec_from_json({{"task", "classify"}}), UsageError);
}

TEST(AttachHeadTest, OutputShapeAndDeterminism) {
  auto cfg = tiny_model();
  const auto pre = model::init_params(cfg, 3);
  const auto spec = TaskSpec::forecast(96, 7);
  EXPECT_EQ(spec.output_dim(cfg), 672);
  const auto a = attach_head(pre, cfg, spec, 11);
  const auto b = attach_head(pre, cfg, spec, 11);
  EXPECT_TRUE(a.head == b.head);
  EXPECT_FALSE(a.head == attach_head(pre, cfg, spec, 12).head);
  EXPECT_EQ(a.head.at("adapt.mlp.fc2.weight").shape, (std::vector<std::size_t>{16, 96}));
  EXPECT_EQ(a.head.at("adapt.ln.gamma").numel(), static_cast<std::size_t>(cfg.num_patches() * 8));
  EXPECT_FALSE(a.encoder.contains("head.weight"));
  EXPECT_TRUE(a.encoder.at("embed.weight") == pre.at("embed.weight"));
  EXPECT_EQ(a.encoder.size() + 2, pre.size());
  EXPECT_EQ(predict(a, sine(32, 7, 8.0)).rows(), 96);
}

TEST(AttachHeadTest, IncompatibleShapesNameTensor) {
  auto cfg = tiny_model();
  auto other = cfg;
  other.d_model = 4;
  other.num_heads = 1;
  try {
    attach_head(model::init_params(other, 1), cfg, TaskSpec::detect(), 0);
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("embed.weight"), std::string::npos);
  }
}

TEST(FinetuneTest, ZeroEpochsAndZeroLearningRate) {
  const auto cfg = tiny_model();
  const auto m = attach_head(model::init_params(cfg, 1), cfg, TaskSpec::forecast(8), 2);
  const auto train = sine(200, 1, 16.0, 0.05);
  FinetuneOptions o;
  o.epochs = 0;
  const auto r0 = finetune(m, train, o);
  EXPECT_TRUE(r0.model.head == m.head);
  EXPECT_TRUE(r0.model.encoder == m.encoder);
  EXPECT_TRUE(r0.loss_trace.empty());

  o.epochs = 4;
  o.learning_rate = 0.0;
  for (auto task : {TaskSpec::forecast(8), TaskSpec::impute(0.25), TaskSpec::detect()}) {
    task.freeze_encoder = false;
    const auto r = finetune(attach_head(model::init_params(cfg, 1), cfg, task, 2), train, o);
    ASSERT_EQ(r.loss_trace.size(), 4u);
    for (double l : r.loss_trace) EXPECT_EQ(l, r.loss_trace.front());
  }
}

TEST(FinetuneTest, FrozenEncoderIsBitIdentical) {
  const auto cfg = tiny_model();
  const auto m = attach_head(model::init_params(cfg, 1), cfg, TaskSpec::impute(0.25), 2);
  FinetuneOptions o;
  o.epochs = 3;
  o.learning_rate = 0.01;
  const auto r = finetune(m, sine(300, 1, 16.0, 0.05), o);
  EXPECT_TRUE(r.model.encoder == m.encoder);
  EXPECT_FALSE(r.model.head == m.head);

  auto open = m;
  open.spec.freeze_encoder = false;
  const auto r2 = finetune(open, sine(300, 1, 16.0, 0.05), o);
  EXPECT_FALSE(r2.model.encoder == m.encoder);
}

TEST(FinetuneTest, SinusoidForecastLossDecreases) {
  const auto cfg = tiny_model();
  for (bool freeze : {true, false}) {
    const auto m = attach_head(model::init_params(cfg, 1), cfg, TaskSpec::forecast(8, 1, freeze), 2);
    FinetuneOptions o;
    o.epochs = 50;
    o.learning_rate = 0.01;
    o.stride = 4;
    const auto r = finetune(m, sine(400, 1, 20.0, 0.05), o);
    ASSERT_EQ(r.loss_trace.size(), 50u);
    EXPECT_LT(r.loss_trace.back(), 0.5 * r.loss_trace.front());
  }
}

TEST(FinetuneTest, DataFractionAndShortSeries) {
  const auto cfg = tiny_model();
  const auto m = attach_head(model::init_params(cfg, 1), cfg, TaskSpec::forecast(8), 2);
  FinetuneOptions o;
  o.epochs = 1;
  o.stride = 1;
  const auto full = finetune(m, sine(240, 1, 16.0), o);
  o.data_fraction = 0.05;
  const auto few = finetune(m, sine(240, 1, 16.0), o);
  EXPECT_EQ(full.num_samples, 201u);
  EXPECT_EQ(few.num_samples, 11u);
  EXPECT_THROW(finetune(m, sine(39, 1, 16.0), o), UsageError);
}

TEST(ForecastEvalTest, OracleAndZeroPredictor) {
  const auto series = sine(300, 2, 24.0);
  ForecastEvalOptions o;
  o.seq_len = 32;
  o.horizon = 8;
  o.stride = 5;
  o.short_term = true;
  Eigen::Index cursor = 0;
  const Forecaster perfect = [&](const data::TimeSeries&) {
    Matrix out = series.values.middleRows(cursor + 32, 8);
    cursor += 5;
    return out;
  };
  const auto r = evaluate_forecast(perfect, series, o);
  EXPECT_EQ(r.metrics.at("mse"), 0.0);
  EXPECT_EQ(r.metrics.at("mae"), 0.0);
  EXPECT_EQ(r.metrics.at("smape"), 0.0);

  const Forecaster zero = [](const data::TimeSeries& w) { return Matrix::Zero(8, w.channels()).eval(); };
  double sq = 0.0, n = 0.0;
  for (int s = 0; s + 40 <= 300; s += 5) {
    sq += series.values.middleRows(s + 32, 8).squaredNorm();
    n += 16;
  }
  EXPECT_NEAR(evaluate_forecast(zero, series, o).metrics.at("mse"), sq / n, 1e-6);

  o.horizon = 300;
  EXPECT_THROW(evaluate_forecast(zero, series, o), UsageError);
}

TEST(ForecastEvalTest, ScalerDefinesMetricScale) {
  auto series = sine(100, 1, 10.0);
  series.values = series.values * 3.0 + Matrix::Constant(100, 1, 5.0);
  ForecastEvalOptions o;
  o.seq_len = 20;
  o.horizon = 4;
  const data::Scaler s{Vector::Constant(1, 5.0), Vector::Constant(1, 3.0)};
  const Forecaster shifted = [](const data::TimeSeries&) { return Matrix::Zero(4, 1).eval(); };
  o.scaler = s;
  const auto with = evaluate_forecast(shifted, series, o).metrics.at("mse");
  o.scaler.reset();
  const auto without = evaluate_forecast(shifted, series, o).metrics.at("mse");
  EXPECT_NEAR(with, without / 9.0, 1e-12);
}

TEST(ImputeEvalTest, MasksAndOracles) {
  const auto m = uniform_mask(50, 3, 0.25, 9);
  EXPECT_EQ(m.masked_count(), 38);
  EXPECT_EQ(uniform_mask(50, 3, 0.25, 9).mask, m.mask);

  const auto series = sine(256, 2, 32.0);
  ImputeEvalOptions o;
  o.seq_len = 64;
  for (double ratio : kImputeRatios) {
    o.mask_ratio = ratio;
    std::size_t call = 0;
    const auto windows = data::make_windows(series, 64, 64);
    const Imputer oracle = [&](const data::TimeSeries&, const data::MaskMatrix&) {
      return windows[call++].values;
    };
    EXPECT_EQ(evaluate_impute(oracle, series, o).metrics.at("mse"), 0.0);
    EXPECT_LT(evaluate_impute(linear_interpolation_imputer(), series, o).metrics.at("mse"),
              evaluate_impute(zero_imputer(), series, o).metrics.at("mse"));
  }
  o.mask_ratio = 1e-4;
  try {
    evaluate_impute(zero_imputer(), series, o);
    FAIL();
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("empty objective"), std::string::npos);
  }
}

TEST(ImputeEvalTest, ZeroShotPathDoesNotMutate) {
  const auto cfg = tiny_model();
  const auto params = model::init_params(cfg, 4);
  const auto copy = params;
  ImputeEvalOptions o;
  o.seq_len = 32;
  const auto r = evaluate_impute(pretrained_imputer(params, cfg), sine(100, 2, 12.0), o);
  EXPECT_TRUE(params == copy);
  EXPECT_GT(r.metrics.at("mse"), 0.0);

  const auto adapted = attach_head(params, cfg, TaskSpec::impute(0.25, 2), 1);
  const auto before = adapted;
  evaluate_impute(imputer(adapted), sine(100, 2, 12.0), o);
  EXPECT_TRUE(adapted.head == before.head && adapted.encoder == before.encoder);
}

TEST(AnomalyTest, ScoresCoverEveryPoint) {
  const auto series = sine(70, 2, 9.0);
  const Reconstructor zero = [](const data::TimeSeries& w) {
    return Matrix::Zero(w.length(), w.channels()).eval();
  };
  const auto scores = anomaly_scores(zero, series, 32);
  ASSERT_EQ(scores.size(), 70u);
  for (int t = 0; t < 70; ++t) {
    EXPECT_NEAR(scores[t], series.values.row(t).squaredNorm() / 2.0, 1e-12);
  }
  EXPECT_THROW(anomaly_scores(zero, sine(20, 1, 5.0), 32), UsageError);
}

TEST(AnomalyTest, ThresholdConventions) {
  std::vector<double> test(100, 0.1), train(100, 0.1);
  std::vector<bool> labels(100, false);
  for (int i = 40; i < 45; ++i) {
    test[i] = 5.0;
    labels[i] = true;
  }
  for (bool pa : {false, true}) {
    const auto r = detect_with_threshold(test, labels, 1.0, pa);
    EXPECT_EQ(r.metrics.at("f1"), 1.0);
    EXPECT_TRUE(r.flags.empty());
  }
  const auto none = detect_with_threshold(test, labels, 10.0, false);
  EXPECT_EQ(none.metrics.at("recall"), 0.0);
  EXPECT_EQ(none.metrics.at("f1"), 0.0);
  EXPECT_EQ(none.flags, std::vector<std::string>{"f1_undefined"});

  const auto normal = detect_with_threshold(test, std::vector<bool>(100, false), 1.0, false);
  EXPECT_EQ(normal.metrics.at("f1"), 0.0);
  EXPECT_NE(std::find(normal.flags.begin(), normal.flags.end(), "labels_all_normal"), normal.flags.end());
  EXPECT_THROW(detect_with_threshold(test, std::vector<bool>(3, false), 1.0, false), UsageError);
}

TEST(AnomalyTest, AdjustmentAndQuantileMonotonicity) {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> train(300), test(300);
    std::vector<bool> labels(300, false);
    for (auto& v : train) v = rng.uniform();
    for (std::size_t i = 0; i < test.size(); ++i) test[i] = rng.uniform();
    for (int seg = 0; seg < 4; ++seg) {
      const auto start = rng.below(290);
      for (std::size_t i = start; i < start + 6; ++i) {
        labels[i] = true;
        test[i] += rng.uniform();
      }
    }
    double prev_recall = 2.0;
    for (double q : {0.5, 0.8, 0.9, 0.95, 0.99}) {
      const auto plain = detect_anomalies(train, test, labels, q, false);
      const auto adj = detect_anomalies(train, test, labels, q, true);
      EXPECT_GE(adj.metrics.at("recall"), plain.metrics.at("recall"));
      EXPECT_LE(plain.metrics.at("recall"), prev_recall);
      prev_recall = plain.metrics.at("recall");
      for (const auto& r : {plain, adj}) {
        for (const char* k : {"precision", "recall", "f1"}) {
          EXPECT_GE(r.metrics.at(k), 0.0);
          EXPECT_LE(r.metrics.at(k), 1.0);
        }
      }
    }
  }
}

TEST(EvalReportTest, Json) {
  EvalReport r;
  r.task = "forecast";
  r.metrics = {{"mse", 0.5}};
  r.config_hash = "abc";
  const auto j = r.to_json();
  EXPECT_EQ(j.at("metrics").at("mse"), 0.5);
  EXPECT_EQ(j.at("config_hash"), "abc");
}

TEST(TaskLossTest, GradientMatchesFiniteDifferences) {
  auto cfg = tiny_model();
  cfg.seq_len = 16;
  cfg.d_model = 4;
  cfg.ffn_hidden = 4;
  cfg.num_experts = 3;
  cfg.top_k = 2;
  auto params = model::init_params(cfg, 8);
  Rng rng(5);
  for (auto& e : params.entries())
    for (double& v : e.tensor.data) v += 0.1 * rng.normal();
  for (const auto& spec : {TaskSpec::forecast(4, 2, false), TaskSpec::impute(0.3, 2, false),
                           TaskSpec::detect(0.99, 2, false)}) {
    auto m = attach_head(params, cfg, spec, 3);
    for (auto& e : m.head.entries())
      for (double& v : e.tensor.data) v += 0.1 * rng.normal();
    const int len = cfg.seq_len + spec.horizon.value_or(0);
    const auto window = sine(len, 2, 7.0, 0.3, 2);
    const auto exact = task_loss(m, window, 4);
    const double h = 1e-5;
    auto probe = [&](ParameterSet& set, const std::string& name, std::size_t j) {
      double& v = set.at(name).data[j];
      const double keep = v;
      v = keep + h;
      const double up = task_loss(m, window, 4).loss;
      v = keep - h;
      const double down = task_loss(m, window, 4).loss;
      v = keep;
      return (up - down) / (2 * h);
    };
    double worst = 0.0;
    for (auto* set : {&m.encoder, &m.head}) {
      for (const auto& name : set->names()) {
        const auto n = set->at(name).numel();
        for (std::size_t j = 0; j < n; j += std::max<std::size_t>(1, n / 5)) {
          const double num = probe(*set, name, j);
          const double ana = exact.gradients.at(name).data[j];
          worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-5}));
        }
      }
    }
    EXPECT_LT(worst, 1e-4) << to_string(spec.task);
  }
}
