#include "dcpf/training.h"

#include <cmath>
#include <random>

#include "doctest.h"

namespace dcpf {
namespace {

// Records with a smooth synthetic label so tests need no Monte Carlo.
Dataset SyntheticDataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    DatasetRecord r;
    const double d = 10 * u(gen);
    const double a = 6.283185307179586 * u(gen);
    r.rx = d * std::cos(a);
    r.ry = d * std::sin(a);
    r.rphi = 3 * (2 * u(gen) - 1);
    r.l1 = 0.5 + 3 * u(gen);
    r.l2 = 0.5 + 2 * u(gen);
    for (double& s : r.sigma) s = 0.5 * u(gen);
    r.p_bar = 1 / (1 + std::exp(2 * (d - 0.5 * (r.l1 + r.l2) - 2)));
    if (i % 7 == 0) r.p_bar = d < 4 ? 1.0 : 0.0;
    r.ci_half_width = 0.01;
    ds.records.push_back(r);
    ds.record_ids.push_back(i);
  }
  return ds;
}

const NetworkArch kToy{8, 2, 8, 2, 4, 1.0};

double RelErr(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

TEST_CASE("loss terms") {
  CHECK(BinaryCrossEntropy(1 - 1e-7, 1e-7, 1.0) == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK(BinaryCrossEntropy(0.3, 0.3) ==
        doctest::Approx(-0.3 * std::log(0.3) - 0.7 * std::log(0.7)));
  CHECK(std::isfinite(BinaryCrossEntropy(0.0, 1.0)));
  CHECK(std::isfinite(BinaryCrossEntropy(1.0, 0.0)));
  CHECK(BinaryCrossEntropy(0.0, 1.0) == doctest::Approx(-std::log(1e-7)));

  CHECK(ShapeRegularizer(1, 1, 3, 3) == doctest::Approx(1.0));
  // d = 2, alpha = 1: 2 + sigmoid(1) + sigmoid(-1) = 3
  CHECK(ShapeRegularizer(1, 1, 1, 3) == doctest::Approx(3.0));

  const Dataset ds = SyntheticDataset(50, 1);
  const TrainingBatch batch = ToBatch(ds);
  auto p = NetworkParams::Init(kToy, 3);
  const LossValue pure = Loss(p, batch, 0.0);
  CHECK(pure.total == pure.bce);
  double bce = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    bce += BinaryCrossEntropy(Forward(p, batch.inputs[i]).p_hat, batch.targets[i]);
  }
  CHECK(pure.bce == doctest::Approx(bce / 50).epsilon(1e-9));
  const LossValue reg = Loss(p, batch, 0.5);
  CHECK(reg.bce == doctest::Approx(pure.bce).epsilon(1e-12));
  CHECK(reg.total == doctest::Approx(reg.bce + 0.5 * reg.regularizer));

  // Saturated outputs stay finite for hard labels.
  for (double logit : {-1000.0, 1000.0}) {
    p.main.layers.back().b(0) = logit;
    p.shaping.layers.back().b(kRho1) = logit;
    CHECK(std::isfinite(Loss(p, batch, 0.1).total));
  }
}

TEST_CASE("reverse-mode gradients match central differences") {
  const Dataset ds = SyntheticDataset(64, 2);
  TrainingBatch batch = ToBatch(ds);
  for (double gamma : {0.0, 0.3}) {
    auto p = NetworkParams::Init(kToy, 5);
    // Spread rho1/rho2 so both sigmoid gates and the |d| kink are active.
    p.shaping.layers.back().b(kRho1) = -0.5;
    p.shaping.layers.back().b(kRho2) = 1.5;
    NetworkParams grad;
    LossAndGradients(p, batch, gamma, grad);
    const auto analytic = grad.Tensors();
    auto tensors = p.Tensors();
    const double h = 1e-5;
    double worst = 0;
    std::size_t checked = 0;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      for (std::size_t k = 0; k < tensors[t].size(); ++k) {
        const double saved = tensors[t][k];
        tensors[t][k] = saved + h;
        const double up = Loss(p, batch, gamma).total;
        tensors[t][k] = saved - h;
        const double down = Loss(p, batch, gamma).total;
        tensors[t][k] = saved;
        worst = std::max(worst, RelErr((up - down) / (2 * h), analytic[t][k]));
        ++checked;
      }
    }
    CHECK(checked == p.num_parameters());
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("gradient is a per-record mean") {
  const Dataset ds = SyntheticDataset(6, 3);
  const TrainingBatch once = ToBatch(ds);
  TrainingBatch twice = once;
  twice.inputs.insert(twice.inputs.end(), once.inputs.begin(), once.inputs.end());
  twice.targets.insert(twice.targets.end(), once.targets.begin(), once.targets.end());
  const auto p = NetworkParams::Init(kToy, 7);
  NetworkParams g1, g2;
  LossAndGradients(p, once, 0.1, g1);
  LossAndGradients(p, twice, 0.1, g2);
  const auto a = g1.Tensors();
  const auto b = g2.Tensors();
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t k = 0; k < a[t].size(); ++k) CHECK(a[t][k] == doctest::Approx(b[t][k]));
  }
}

TEST_CASE("adam first step moves each weight by about the learning rate") {
  auto p = NetworkParams::Init(kToy, 8);
  const auto before = p;
  NetworkParams g;
  LossAndGradients(p, ToBatch(SyntheticDataset(32, 4)), 0.0, g);
  AdamOptimizer adam(p, 1e-3);
  adam.Step(p, g);
  CHECK(adam.steps() == 1);
  const auto now = p.Tensors();
  const auto old = before.Tensors();
  const auto grad = g.Tensors();
  for (std::size_t t = 0; t < now.size(); ++t) {
    for (std::size_t k = 0; k < now[t].size(); ++k) {
      const double gk = grad[t][k];
      CHECK(now[t][k] - old[t][k] == doctest::Approx(-1e-3 * gk / (std::abs(gk) + 1e-8)));
    }
  }
}

TEST_CASE("training memorizes a single record and is deterministic") {
  Dataset one = SyntheticDataset(1, 5);
  one.records[0].p_bar = 0.3;
  TrainConfig cfg;
  cfg.arch = kToy;
  cfg.batch_size = 1;
  cfg.epochs = 1500;
  cfg.learning_rate = 1e-2;
  cfg.ensemble_size = 1;
  cfg.gamma = 0.0;
  const TrainResult r = Train(one, one, cfg);
  CHECK(std::abs(Forward(r.model.members[0], ToBatch(one).inputs[0]).p_hat - 0.3) < 0.01);

  const Dataset train = SyntheticDataset(300, 6);
  const Dataset val = SyntheticDataset(100, 7);
  cfg = TrainConfig{};
  cfg.arch = kToy;
  cfg.batch_size = 64;
  cfg.epochs = 3;
  cfg.ensemble_size = 2;
  const TrainResult a = Train(train, val, cfg);
  cfg.threads = 2;
  const TrainResult b = Train(train, val, cfg);
  REQUIRE(a.model.size() == 2);
  CHECK(a.model.mode == EnsembleMode::kCiUpper);
  CHECK(a.history[1].size() == 4);
  CHECK(a.history[1][0].epoch == 0);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto x = a.model.members[k].Tensors();
    const auto y = b.model.members[k].Tensors();
    for (std::size_t t = 0; t < x.size(); ++t) {
      CHECK(std::equal(x[t].begin(), x[t].end(), y[t].begin()));
    }
  }
  CHECK(a.model.members[0].Tensors()[0][0] != a.model.members[1].Tensors()[0][0]);
}

TEST_CASE("training reduces validation loss") {
  const Dataset train = SyntheticDataset(4000, 8);
  const Dataset val = SyntheticDataset(500, 9);
  TrainConfig cfg;
  cfg.arch = NetworkArch{32, 2, 16, 2, 16, 1.0};
  cfg.batch_size = 128;
  cfg.epochs = 5;
  cfg.learning_rate = 2e-3;
  cfg.ensemble_size = 1;
  int logged = 0;
  const TrainResult r = Train(train, val, cfg, [&](const EpochLog&) { ++logged; });
  CHECK(logged == 6);
  CHECK(r.history[0][5].val.bce < r.history[0][0].val.bce);
  const Metrics m = Evaluate(r.model, val, EnsembleMode::kSingle);
  CHECK(m.mae_overall < 0.15);
}

TEST_CASE("divergence is reported") {
  Dataset bad = SyntheticDataset(10, 10);
  bad.records[3].p_bar = std::nan("");
  TrainConfig cfg;
  cfg.arch = kToy;
  cfg.epochs = 1;
  cfg.ensemble_size = 1;
  CHECK_THROWS_AS(Train(bad, SyntheticDataset(5, 11), cfg), TrainingDivergedError);
  cfg.epochs = 0;
  CHECK_THROWS_AS(Train(bad, bad, cfg), std::invalid_argument);
}

TEST_CASE("metrics") {
  Dataset ds;
  ds.profile = AccuracyProfile::Paper();
  for (double p : {0.0, 0.001, 0.005, 0.02, 0.05, 0.08, 0.2, 0.6, 1.0}) {
    DatasetRecord r;
    r.p_bar = p;
    r.ci_half_width = ds.profile.AccuracyFor(p);
    ds.records.push_back(r);
  }
  std::vector<double> exact;
  for (const auto& r : ds.records) exact.push_back(r.p_bar);
  const Metrics perfect = EvaluatePredictions(exact, ds);
  CHECK(perfect.mae_overall == 0.0);
  CHECK(perfect.pap_overall == 1.0);
  CHECK(perfect.count_per_bucket == std::array<std::size_t, 3>{3, 3, 3});

  const std::vector<double> half(ds.size(), 0.5);
  const Metrics flat = EvaluatePredictions(half, ds);
  CHECK(flat.mae_per_bucket[0] >= 0.3);
  CHECK(flat.mae_per_bucket[0] == doctest::Approx(0.5 - 0.002));
  CHECK(flat.pap_overall == 0.0);

  std::vector<double> near = exact;
  near[7] += 0.009;  // inside the +-0.01 interval
  near[4] += 0.002;  // outside +-0.001
  const Metrics m = EvaluatePredictions(near, ds);
  CHECK(m.pap_per_bucket[2] == 1.0);
  CHECK(m.pap_per_bucket[1] == doctest::Approx(2.0 / 3));
  CHECK(m.mae_overall == doctest::Approx(0.011 / 9));
  CHECK_THROWS_AS(EvaluatePredictions(half, Dataset{}), std::invalid_argument);
}

}  // namespace
}  // namespace dcpf
