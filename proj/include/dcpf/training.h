#ifndef DCPF_TRAINING_H_
#define DCPF_TRAINING_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dcpf/dataset.h"
#include "dcpf/model.h"

namespace dcpf {

inline constexpr double kBceClamp = 1e-7;

struct TrainConfig {
  double learning_rate = 2.4e-4;
  double gamma = 0.01;
  std::size_t batch_size = 1024;
  int epochs = 20;
  std::uint64_t seed = 1;
  std::size_t ensemble_size = 3;
  NetworkArch arch;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Members trained concurrently; 0 = hardware concurrency.
  unsigned threads = 1;

  void Validate() const;
};

struct LossValue {
  double total = 0.0;
  double bce = 0.0;
  double regularizer = 0.0;
};

// Binary cross-entropy of prediction p against label p_bar with p clamped to
// [kBceClamp, 1 - kBceClamp]. `one_minus_p` is passed separately so values
// close to 1 keep their precision.
double BinaryCrossEntropy(double p, double one_minus_p, double p_bar);
double BinaryCrossEntropy(double p, double p_bar);

// |d| + sigmoid(alpha1 d / 2) + sigmoid(-alpha2 d / 2) with d = rho2 - rho1.
double ShapeRegularizer(double alpha1, double alpha2, double rho1, double rho2);

struct TrainingBatch {
  std::vector<FieldInput> inputs;
  std::vector<double> targets;

  std::size_t size() const { return inputs.size(); }
};

TrainingBatch ToBatch(const Dataset& ds);
TrainingBatch ToBatch(std::span<const DatasetRecord> records);

// Mean loss over the batch.
LossValue Loss(const NetworkParams& params, const TrainingBatch& batch, double gamma);

// Mean loss and its exact gradient with respect to every trainable tensor;
// `grad` is resized to the shape of `params`.
LossValue LossAndGradients(const NetworkParams& params, const TrainingBatch& batch, double gamma,
                           NetworkParams& grad);

class AdamOptimizer {
 public:
  AdamOptimizer(const NetworkParams& shape, double learning_rate, double beta1 = 0.9,
                double beta2 = 0.999, double epsilon = 1e-8);
  void Step(NetworkParams& params, const NetworkParams& grad);
  std::uint64_t steps() const { return t_; }

 private:
  NetworkParams m_;
  NetworkParams v_;
  double lr_;
  double beta1_;
  double beta2_;
  double epsilon_;
  std::uint64_t t_ = 0;
};

struct EpochLog {
  std::size_t member = 0;
  int epoch = 0;  // 0 = before the first update
  double train_loss = 0.0;
  LossValue val;
  double seconds = 0.0;
};

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  EnsembleModel model;
  std::vector<std::vector<EpochLog>> history;  // per member
  double seconds = 0.0;
};

// Trains cfg.ensemble_size members with seeds derived from cfg.seed.
// `on_epoch` is called after each epoch (from the training thread).
TrainResult Train(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

struct Metrics {
  std::size_t n = 0;
  double mae_overall = 0.0;
  double pap_overall = 0.0;
  std::array<std::size_t, 3> count_per_bucket = {0, 0, 0};
  std::array<double, 3> mae_per_bucket = {0.0, 0.0, 0.0};
  std::array<double, 3> pap_per_bucket = {0.0, 0.0, 0.0};
};

// MAE = mean |p - p_bar|; PAP = fraction with |p - p_bar| <= ci_half_width;
// buckets follow the dataset's accuracy profile applied to p_bar.
Metrics EvaluatePredictions(std::span<const double> predictions, const Dataset& ds);
Metrics Evaluate(const EnsembleModel& model, const Dataset& ds,
                 EnsembleMode mode = EnsembleMode::kMean);

void WriteMetricsCsv(const Metrics& m, const std::filesystem::path& path);

// Mean |rho2 - rho1| over the dataset, averaged over members.
double MeanRhoGap(const EnsembleModel& model, const Dataset& ds);

}  // namespace dcpf

#endif  // DCPF_TRAINING_H_
