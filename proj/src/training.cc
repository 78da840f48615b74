#include "dcpf/training.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "dcpf/rng.h"

namespace dcpf {
namespace {

constexpr double kGeluC = 0.7978845608028654;
constexpr double kGeluA = 0.044715;
constexpr std::uint64_t kShuffleStream = 0x7a1e0001;
constexpr std::size_t kEvalChunk = 4096;

// Per-record forward quantities of the distance-bias head.
struct HeadTerms {
  double p;
  double one_minus_p;
  double keep1;  // 1 - sigma1
  double sig1;
  double keep2;  // 1 - sigma2
  double u1;
  double v2;
};

HeadTerms Heads(double f, double a1, double a2, double r1, double r2, double d) {
  HeadTerms h;
  h.u1 = a1 * (r1 - d);
  h.v2 = a2 * (r2 - d);
  h.keep1 = Sigmoid(-h.u1);
  h.sig1 = Sigmoid(h.u1);
  h.keep2 = Sigmoid(h.v2);
  h.p = h.keep1 * h.keep2 * f + h.sig1;
  h.one_minus_p = h.keep1 * (1.0 - h.keep2 * f);
  return h;
}

Eigen::ArrayXXd GeluGradArray(const Eigen::MatrixXd& pre) {
  const auto x = pre.array();
  const Eigen::ArrayXXd s = (1.0 + (-2.0 * kGeluC * (x + kGeluA * x.cube())).exp()).inverse();
  return s + x * s * (1.0 - s) * (2.0 * kGeluC) * (1.0 + 3.0 * kGeluA * x.square());
}

// dz: gradient w.r.t. the last layer's pre-activation.
void MlpBackward(const Mlp& mlp, const MlpCache& cache, Eigen::MatrixXd dz, Mlp& grad) {
  for (std::size_t l = mlp.layers.size(); l-- > 0;) {
    grad.layers[l].w.noalias() = dz * cache.inputs[l].transpose();
    grad.layers[l].b = dz.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd dx(mlp.layers[l].w.cols(), dz.cols());
    dx.noalias() = mlp.layers[l].w.transpose() * dz;
    dz = (dx.array() * GeluGradArray(cache.pre[l - 1])).matrix();
  }
}

void ZeroLike(const NetworkParams& shape, NetworkParams& out) {
  auto copy_shape = [](const Mlp& src, Mlp& dst) {
    dst.layers.resize(src.layers.size());
    for (std::size_t l = 0; l < src.layers.size(); ++l) {
      dst.layers[l].w.setZero(src.layers[l].w.rows(), src.layers[l].w.cols());
      dst.layers[l].b.setZero(src.layers[l].b.size());
    }
  };
  copy_shape(shape.main, out.main);
  copy_shape(shape.shaping, out.shaping);
}

// Sums loss terms over a forward batch; with `cache` set also writes the
// weighted gradients w.r.t. the f logit and the four head logits.
LossValue Accumulate(const FieldBatch& out, const Eigen::ArrayXd& distance,
                     const TrainingBatch& batch, double gamma, std::size_t offset,
                     const ForwardCache* cache, Eigen::MatrixXd* df_logit,
                     Eigen::MatrixXd* dheads, double weight) {
  auto sig_grad = [](double x) { return Sigmoid(x) * Sigmoid(-x); };
  LossValue sum;
  for (Eigen::Index i = 0; i < out.p_hat.size(); ++i) {
    const double f = out.f(i);
    const double a1 = out.alpha1(i);
    const double a2 = out.alpha2(i);
    const double r1 = out.rho1(i);
    const double r2 = out.rho2(i);
    const double target = batch.targets[offset + static_cast<std::size_t>(i)];
    const HeadTerms h = Heads(f, a1, a2, r1, r2, distance(i));
    const double bce = BinaryCrossEntropy(h.p, h.one_minus_p, target);
    const double reg = gamma > 0.0 ? ShapeRegularizer(a1, a2, r1, r2) : 0.0;
    sum.bce += bce;
    sum.regularizer += reg;
    if (!cache) continue;

    // dL/dp under the clamp: zero once p is clamped.
    double dp = 0.0;
    if (h.p > kBceClamp && h.one_minus_p > kBceClamp) {
      dp = -target / h.p + (1.0 - target) / h.one_minus_p;
    }
    const double dp_df = h.keep1 * h.keep2;
    const double dp_du1 = h.sig1 * h.keep1 * (1.0 - h.keep2 * f);
    const double dp_dv2 = h.keep1 * f * h.keep2 * (1.0 - h.keep2);
    double g_a1 = dp * dp_du1 * (r1 - distance(i));
    double g_r1 = dp * dp_du1 * a1;
    double g_a2 = dp * dp_dv2 * (r2 - distance(i));
    double g_r2 = dp * dp_dv2 * a2;
    if (gamma > 0.0) {
      const double gap = r2 - r1;
      const double s1 = Sigmoid(0.5 * a1 * gap);
      const double s2 = Sigmoid(-0.5 * a2 * gap);
      const double ds1 = s1 * (1.0 - s1);
      const double ds2 = s2 * (1.0 - s2);
      const double sign = gap > 0.0 ? 1.0 : (gap < 0.0 ? -1.0 : 0.0);
      const double d_gap = sign + 0.5 * a1 * ds1 - 0.5 * a2 * ds2;
      g_a1 += gamma * 0.5 * gap * ds1;
      g_a2 -= gamma * 0.5 * gap * ds2;
      g_r2 += gamma * d_gap;
      g_r1 -= gamma * d_gap;
    }
    const auto& z = cache->head_logits;
    (*df_logit)(0, i) = weight * dp * dp_df * sig_grad(cache->f_logit(i));
    (*dheads)(kAlpha1, i) = weight * g_a1 * 20.0 * sig_grad(z(kAlpha1, i));
    (*dheads)(kAlpha2, i) = weight * g_a2 * 20.0 * sig_grad(z(kAlpha2, i));
    (*dheads)(kRho1, i) = weight * g_r1 * 12.0 * sig_grad(z(kRho1, i));
    (*dheads)(kRho2, i) = weight * g_r2 * Sigmoid(z(kRho2, i));
  }
  return sum;
}

void CheckFinite(const LossValue& v, const std::string& where) {
  if (!std::isfinite(v.total)) {
    throw TrainingDivergedError("non-finite loss " + where);
  }
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (ensemble_size < 1) throw std::invalid_argument("ensemble_size must be >= 1");
  arch.Validate();
}

double BinaryCrossEntropy(double p, double one_minus_p, double p_bar) {
  const double lo = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  const double hi = std::clamp(one_minus_p, kBceClamp, 1.0 - kBceClamp);
  return -p_bar * std::log(lo) - (1.0 - p_bar) * std::log(hi);
}

double BinaryCrossEntropy(double p, double p_bar) { return BinaryCrossEntropy(p, 1.0 - p, p_bar); }

double ShapeRegularizer(double alpha1, double alpha2, double rho1, double rho2) {
  const double gap = rho2 - rho1;
  return std::abs(gap) + Sigmoid(0.5 * alpha1 * gap) + Sigmoid(-0.5 * alpha2 * gap);
}

TrainingBatch ToBatch(std::span<const DatasetRecord> records) {
  TrainingBatch b;
  b.inputs.reserve(records.size());
  b.targets.reserve(records.size());
  for (const auto& r : records) {
    FieldInput in;
    in.rx = r.rx;
    in.ry = r.ry;
    in.rphi = r.rphi;
    in.l1 = r.l1;
    in.l2 = r.l2;
    in.sigma = r.sigma;
    b.inputs.push_back(in);
    b.targets.push_back(r.p_bar);
  }
  return b;
}

TrainingBatch ToBatch(const Dataset& ds) { return ToBatch(ds.records); }

LossValue Loss(const NetworkParams& params, const TrainingBatch& batch, double gamma) {
  if (batch.size() == 0) throw std::invalid_argument("loss of an empty batch");
  LossValue sum;
  for (std::size_t start = 0; start < batch.size(); start += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, batch.size() - start);
    const auto inputs = std::span(batch.inputs).subspan(start, n);
    const FieldBatch out = ForwardBatch(params, inputs);
    Eigen::ArrayXd distance(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) distance(static_cast<Eigen::Index>(i)) = inputs[i].Distance();
    const LossValue part = Accumulate(out, distance, batch, gamma, start, nullptr, nullptr, nullptr, 0.0);
    sum.bce += part.bce;
    sum.regularizer += part.regularizer;
  }
  const double n = static_cast<double>(batch.size());
  sum.bce /= n;
  sum.regularizer /= n;
  sum.total = sum.bce + gamma * sum.regularizer;
  return sum;
}

LossValue LossAndGradients(const NetworkParams& params, const TrainingBatch& batch, double gamma,
                           NetworkParams& grad) {
  if (batch.size() == 0) throw std::invalid_argument("loss of an empty batch");
  ForwardCache cache;
  const FieldBatch out = ForwardBatch(params, batch.inputs, &cache);
  const auto n = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd df(1, n);
  Eigen::MatrixXd dheads(4, n);
  const double w = 1.0 / static_cast<double>(n);
  LossValue sum = Accumulate(out, cache.distance, batch, gamma, 0, &cache, &df, &dheads, w);
  sum.bce *= w;
  sum.regularizer *= w;
  sum.total = sum.bce + gamma * sum.regularizer;

  ZeroLike(params, grad);
  MlpBackward(params.main, cache.main, std::move(df), grad.main);
  MlpBackward(params.shaping, cache.shaping, std::move(dheads), grad.shaping);
  return sum;
}

AdamOptimizer::AdamOptimizer(const NetworkParams& shape, double learning_rate, double beta1,
                             double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  ZeroLike(shape, m_);
  ZeroLike(shape, v_);
}

void AdamOptimizer::Step(NetworkParams& params, const NetworkParams& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.Tensors();
  const auto g = grad.Tensors();
  auto m = m_.Tensors();
  auto v = v_.Tensors();
  if (p.size() != g.size() || p.size() != m.size()) {
    throw std::invalid_argument("optimizer state does not match the parameters");
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    using Vec = Eigen::Map<Eigen::ArrayXd>;
    using CVec = Eigen::Map<const Eigen::ArrayXd>;
    const auto len = static_cast<Eigen::Index>(p[k].size());
    Vec pk(p[k].data(), len), mk(m[k].data(), len), vk(v[k].data(), len);
    CVec gk(g[k].data(), len);
    mk = beta1_ * mk + (1.0 - beta1_) * gk;
    vk = beta2_ * vk + (1.0 - beta2_) * gk.square();
    pk -= lr_ * (mk / c1) / ((vk / c2).sqrt() + epsilon_);
  }
}

namespace {

NetworkParams TrainMember(const TrainingBatch& train, const TrainingBatch& val,
                          const TrainConfig& cfg, std::size_t member,
                          std::vector<EpochLog>& history,
                          const std::function<void(const EpochLog&)>& on_epoch) {
  using Clock = std::chrono::steady_clock;
  const std::uint64_t seed = MixSeed(cfg.seed ^ MixSeed(member + 1));
  NetworkParams params = NetworkParams::Init(cfg.arch, seed);
  AdamOptimizer adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                     cfg.adam_epsilon);
  RngStream rng(seed, kShuffleStream);

  const auto start = Clock::now();
  auto log_epoch = [&](int epoch, double train_loss) {
    EpochLog e;
    e.member = member;
    e.epoch = epoch;
    e.train_loss = train_loss;
    e.val = Loss(params, val, cfg.gamma);
    e.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    CheckFinite(e.val, "on validation data at epoch " + std::to_string(epoch) + " of member " +
                           std::to_string(member));
    history.push_back(e);
    if (on_epoch) on_epoch(e);
  };
  log_epoch(0, Loss(params, train, cfg.gamma).total);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainingBatch batch;
  NetworkParams grad;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - s);
      batch.inputs.resize(n);
      batch.targets.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        batch.inputs[i] = train.inputs[order[s + i]];
        batch.targets[i] = train.targets[order[s + i]];
      }
      const LossValue v = LossAndGradients(params, batch, cfg.gamma, grad);
      CheckFinite(v, "in epoch " + std::to_string(epoch) + " of member " + std::to_string(member));
      adam.Step(params, grad);
      loss_sum += v.total * static_cast<double>(n);
    }
    log_epoch(epoch, loss_sum / static_cast<double>(order.size()));
  }
  return params;
}

}  // namespace

TrainResult Train(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.Validate();
  if (train.size() == 0 || val.size() == 0) {
    throw std::invalid_argument("training needs nonempty train and validation sets");
  }
  const auto start = std::chrono::steady_clock::now();
  const TrainingBatch train_batch = ToBatch(train);
  const TrainingBatch val_batch = ToBatch(val);

  TrainResult result;
  result.model.members.resize(cfg.ensemble_size);
  result.history.resize(cfg.ensemble_size);
  result.model.mode = cfg.ensemble_size >= 2 ? EnsembleMode::kCiUpper : EnsembleMode::kSingle;

  unsigned threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                      : cfg.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, cfg.ensemble_size));
  std::mutex log_mutex;
  auto locked_log = [&](const EpochLog& e) {
    if (!on_epoch) return;
    std::lock_guard lock(log_mutex);
    on_epoch(e);
  };
  std::vector<std::exception_ptr> errors(cfg.ensemble_size);
  auto run = [&](std::size_t k) {
    try {
      result.model.members[k] =
          TrainMember(train_batch, val_batch, cfg, k, result.history[k], locked_log);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  if (threads <= 1) {
    for (std::size_t k = 0; k < cfg.ensemble_size; ++k) run(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < cfg.ensemble_size; k = next++) run(k);
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

Metrics EvaluatePredictions(std::span<const double> predictions, const Dataset& ds) {
  if (predictions.size() != ds.size()) {
    throw std::invalid_argument("prediction count does not match the dataset");
  }
  Metrics m;
  m.n = ds.size();
  std::array<double, 3> err{};
  std::array<double, 3> ok{};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.records[i];
    const std::size_t b = std::min<std::size_t>(ds.profile.BucketOf(r.p_bar), 2);
    const double e = std::abs(predictions[i] - r.p_bar);
    const double hit = e <= r.ci_half_width ? 1.0 : 0.0;
    ++m.count_per_bucket[b];
    err[b] += e;
    ok[b] += hit;
    m.mae_overall += e;
    m.pap_overall += hit;
  }
  if (m.n > 0) {
    m.mae_overall /= static_cast<double>(m.n);
    m.pap_overall /= static_cast<double>(m.n);
  }
  for (std::size_t b = 0; b < 3; ++b) {
    if (m.count_per_bucket[b] == 0) continue;
    const double c = static_cast<double>(m.count_per_bucket[b]);
    m.mae_per_bucket[b] = err[b] / c;
    m.pap_per_bucket[b] = ok[b] / c;
  }
  return m;
}

Metrics Evaluate(const EnsembleModel& model, const Dataset& ds, EnsembleMode mode) {
  const TrainingBatch b = ToBatch(ds);
  return EvaluatePredictions(model.PredictBatch(b.inputs, mode), ds);
}

void WriteMetricsCsv(const Metrics& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "scope,count,mae,pap\n";
  char line[160];
  std::snprintf(line, sizeof line, "overall,%zu,%.9g,%.9g\n", m.n, m.mae_overall, m.pap_overall);
  os << line;
  for (std::size_t b = 0; b < 3; ++b) {
    std::snprintf(line, sizeof line, "bucket%zu,%zu,%.9g,%.9g\n", b, m.count_per_bucket[b],
                  m.mae_per_bucket[b], m.pap_per_bucket[b]);
    os << line;
  }
}

double MeanRhoGap(const EnsembleModel& model, const Dataset& ds) {
  model.Validate(EnsembleMode::kSingle);
  const TrainingBatch b = ToBatch(ds);
  if (b.size() == 0) throw std::invalid_argument("empty dataset");
  double sum = 0.0;
  for (const auto& p : model.members) {
    for (std::size_t start = 0; start < b.size(); start += kEvalChunk) {
      const auto chunk = std::span(b.inputs).subspan(start, std::min(kEvalChunk, b.size() - start));
      const FieldBatch out = ForwardBatch(p, chunk);
      sum += (out.rho2 - out.rho1).abs().sum();
    }
  }
  return sum / static_cast<double>(b.size() * model.size());
}

}  // namespace dcpf
