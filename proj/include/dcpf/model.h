#ifndef DCPF_MODEL_H_
#define DCPF_MODEL_H_

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcpf/mc_estimator.h"

namespace dcpf {

// Network input: robot pose in the obstacle frame plus the obstacle's mean
// side lengths and standard deviations.
struct FieldInput {
  double rx = 0.0;
  double ry = 0.0;
  double rphi = 0.0;
  double l1 = 1.0;
  double l2 = 1.0;
  std::array<double, 5> sigma = {0.0, 0.0, 0.0, 0.0, 0.0};

  static FieldInput FromQuery(const CpQuery& q);
  double Distance() const;
  // Throws invalid_argument on non-finite values.
  void Validate() const;
};

// Rows of the raw (pre-encoding) input matrices, grouped as
// main net:    [rx ry | cos rphi sin rphi | l1 l2 | 5 x sigma]
// shaping net: [cos a sin a | cos rphi sin rphi | l1 l2 | 5 x sigma], a = atan2(ry, rx)
inline constexpr int kRawInputDim = 11;
inline constexpr std::array<int, 4> kInputGroupDims = {2, 2, 2, 5};

// Random Fourier features: each group v is mapped to
// [sin(2 pi F v), cos(2 pi F v)] with F drawn once from N(0, scale^2) and
// divided column-wise by the group's input range.
struct FourierEncoder {
  std::uint64_t seed = 0;
  double scale = 1.0;
  int n_frequencies = 16;
  std::vector<Eigen::MatrixXd> frequencies;  // n_frequencies x group_dim

  static FourierEncoder Create(std::span<const int> group_dims,
                               std::span<const double> input_ranges, int n_frequencies,
                               double scale, std::uint64_t seed);

  std::size_t num_groups() const { return frequencies.size(); }
  int input_dim() const;
  int output_dim() const { return 2 * n_frequencies * static_cast<int>(frequencies.size()); }

  Eigen::VectorXd EncodeGroup(std::size_t group, const Eigen::VectorXd& v) const;
  // raw: input_dim x batch; out: output_dim x batch.
  void Encode(const Eigen::MatrixXd& raw, Eigen::MatrixXd& out) const;
};

struct DenseLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

// Hidden layers use GeLU; the last layer is linear.
struct Mlp {
  std::vector<DenseLayer> layers;

  int input_dim() const { return static_cast<int>(layers.front().w.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().w.rows()); }
};

struct NetworkArch {
  int main_width = 256;
  int main_depth = 4;
  int shaping_width = 128;
  int shaping_depth = 3;
  int n_frequencies = 16;
  double fourier_scale = 1.0;

  static NetworkArch Paper() { return {1024, 6, 512, 3, 16, 1.0}; }
  void Validate() const;
  bool operator==(const NetworkArch&) const = default;
};

// Input ranges the Fourier frequencies are divided by, one per raw input row.
inline constexpr std::array<double, kRawInputDim> kMainInputRanges = {
    24.0, 24.0, 3.0, 3.0, 16.0, 16.0, 4.0, 4.0, 4.0, 4.0, 4.0};
inline constexpr std::array<double, kRawInputDim> kShapingInputRanges = {
    3.0, 3.0, 3.0, 3.0, 16.0, 16.0, 4.0, 4.0, 4.0, 4.0, 4.0};

// One ensemble member. The encoders are fixed at creation; only the two
// MLPs are trained.
struct NetworkParams {
  std::uint64_t seed = 0;
  FourierEncoder main_encoder;
  FourierEncoder shaping_encoder;
  Mlp main;     // -> 1 logit for f
  Mlp shaping;  // -> 4 logits for alpha1, alpha2, rho1, rho2

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static NetworkParams Init(const NetworkArch& arch, std::uint64_t seed);

  NetworkArch arch() const;
  std::size_t num_parameters() const;
  // Trainable tensors in a fixed order (weights then bias, main then shaping).
  std::vector<std::span<double>> Tensors();
  std::vector<std::span<const double>> Tensors() const;
};

// Shaping head indices.
enum ShapingHead { kAlpha1 = 0, kAlpha2 = 1, kRho1 = 2, kRho2 = 3 };

double Sigmoid(double x);
double Softplus(double x);
double Gelu(double x);  // tanh form
double GeluGrad(double x);

// p = (1 - s1)(1 - s2) f + s1, s1 = sigmoid(alpha1 (rho1 - d)), s2 = sigmoid(-alpha2 (rho2 - d)).
double CombineField(double f, double alpha1, double alpha2, double rho1, double rho2,
                    double distance);

struct FieldOutput {
  double p_hat = 0.0;
  double f = 0.0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double rho1 = 0.0;
  double rho2 = 0.0;
};

struct MlpCache {
  std::vector<Eigen::MatrixXd> inputs;  // input of each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
};

// Intermediates kept by the batched forward pass for backpropagation.
struct ForwardCache {
  MlpCache main;
  MlpCache shaping;
  Eigen::ArrayXd distance;
  Eigen::ArrayXd f_logit;
  Eigen::ArrayXXd head_logits;  // 4 x batch
};

struct FieldBatch {
  Eigen::ArrayXd p_hat;
  Eigen::ArrayXd f;
  Eigen::ArrayXd alpha1;
  Eigen::ArrayXd alpha2;
  Eigen::ArrayXd rho1;
  Eigen::ArrayXd rho2;

  std::size_t size() const { return static_cast<std::size_t>(p_hat.size()); }
  FieldOutput at(std::size_t i) const;
};

void RawInputs(std::span<const FieldInput> inputs, Eigen::MatrixXd& main_raw,
               Eigen::MatrixXd& shaping_raw);

FieldBatch ForwardBatch(const NetworkParams& params, std::span<const FieldInput> inputs,
                        ForwardCache* cache = nullptr);
FieldOutput Forward(const NetworkParams& params, const FieldInput& input);
FieldOutput Forward(const NetworkParams& params, const CpQuery& q);

enum class EnsembleMode { kSingle, kMean, kMax, kCiUpper, kCiLower };

std::string_view ToString(EnsembleMode mode);
EnsembleMode ParseEnsembleMode(std::string_view name);

// Aggregates member predictions; the result is clipped to [0, 1]. The CI
// modes use mean +- 1.96 s / sqrt(K) with s the sample standard deviation.
double Aggregate(std::span<const double> members, EnsembleMode mode);

struct EnsembleModel {
  std::vector<NetworkParams> members;
  EnsembleMode mode = EnsembleMode::kCiUpper;

  std::size_t size() const { return members.size(); }
  void Validate() const;
  void Validate(EnsembleMode m) const;

  double Predict(const CpQuery& q) const { return Predict(q, mode); }
  double Predict(const CpQuery& q, EnsembleMode m) const;
  std::vector<double> PredictBatch(std::span<const FieldInput> inputs) const {
    return PredictBatch(inputs, mode);
  }
  std::vector<double> PredictBatch(std::span<const FieldInput> inputs, EnsembleMode m) const;
};

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary container: 8-byte magic, u64 header length, JSON header, then
// little-endian f64 blobs in the order the header lists them.
void SaveModel(const EnsembleModel& model, const std::filesystem::path& path);
EnsembleModel LoadModel(const std::filesystem::path& path);

inline constexpr std::string_view kModelMagic = "DCPFNET\x01";
inline constexpr int kModelFormatVersion = 1;

}  // namespace dcpf

#endif  // DCPF_MODEL_H_
