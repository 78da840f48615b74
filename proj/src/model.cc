#include "dcpf/model.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dcpf/rng.h"
#include "json.hpp"

namespace dcpf {
namespace {

using json = nlohmann::json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
constexpr double kZ95 = 1.96;
constexpr std::uint64_t kEncoderStream = 0x5eed0001;
constexpr std::uint64_t kMainInitStream = 0x5eed0002;
constexpr std::uint64_t kShapingInitStream = 0x5eed0003;

Mlp InitMlp(int in, int width, int depth, int out, RngStream& rng) {
  Mlp mlp;
  int fan_in = in;
  for (int l = 0; l <= depth; ++l) {
    const int rows = l == depth ? out : width;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    DenseLayer layer{Eigen::MatrixXd(rows, fan_in), Eigen::VectorXd(rows)};
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = rng.Uniform(-bound, bound);
    }
    for (Eigen::Index r = 0; r < layer.b.size(); ++r) layer.b(r) = rng.Uniform(-bound, bound);
    mlp.layers.push_back(std::move(layer));
    fan_in = rows;
  }
  return mlp;
}

// In-place GeLU over a whole matrix.
void GeluInPlace(Eigen::MatrixXd& z) {
  auto a = z.array();
  const Eigen::ArrayXXd u = kGeluC * (a + kGeluA * a.cube());
  a = a * (1.0 + (-2.0 * u).exp()).inverse();
}

void MlpForward(const Mlp& mlp, Eigen::MatrixXd x, Eigen::MatrixXd& out, MlpCache* cache) {
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  const std::size_t n = mlp.layers.size();
  for (std::size_t l = 0; l < n; ++l) {
    const DenseLayer& layer = mlp.layers[l];
    Eigen::MatrixXd z(layer.w.rows(), x.cols());
    z.noalias() = layer.w * x;
    z.colwise() += layer.b;
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(z);
    }
    if (l + 1 == n) {
      out = std::move(z);
    } else {
      GeluInPlace(z);
      x = std::move(z);
    }
  }
}

void CheckNetwork(const NetworkParams& p) {
  auto mlp_ok = [](const Mlp& m, int in, int out) {
    if (m.layers.size() < 2) return false;
    int cols = in;
    for (const auto& l : m.layers) {
      if (l.w.cols() != cols || l.b.size() != l.w.rows()) return false;
      cols = static_cast<int>(l.w.rows());
    }
    return cols == out;
  };
  if (p.main_encoder.input_dim() != kRawInputDim || p.shaping_encoder.input_dim() != kRawInputDim ||
      !mlp_ok(p.main, p.main_encoder.output_dim(), 1) ||
      !mlp_ok(p.shaping, p.shaping_encoder.output_dim(), 4)) {
    throw std::invalid_argument("network parameters have inconsistent shapes");
  }
}

}  // namespace

FieldInput FieldInput::FromQuery(const CpQuery& q) {
  q.Validate();
  FieldInput in;
  in.rx = q.robot_pose.x;
  in.ry = q.robot_pose.y;
  in.rphi = q.robot_pose.phi;
  in.l1 = q.obstacle.l1();
  in.l2 = q.obstacle.l2();
  in.sigma = q.obstacle.sigma;
  return in;
}

double FieldInput::Distance() const { return std::hypot(rx, ry); }

void FieldInput::Validate() const {
  bool ok = std::isfinite(rx) && std::isfinite(ry) && std::isfinite(rphi) && std::isfinite(l1) &&
            std::isfinite(l2);
  for (double s : sigma) ok = ok && std::isfinite(s);
  if (!ok) throw std::invalid_argument("field input has non-finite values");
}

FourierEncoder FourierEncoder::Create(std::span<const int> group_dims,
                                      std::span<const double> input_ranges, int n_frequencies,
                                      double scale, std::uint64_t seed) {
  if (n_frequencies < 1 || !(scale > 0.0)) {
    throw std::invalid_argument("fourier encoder needs n_frequencies >= 1 and scale > 0");
  }
  FourierEncoder enc;
  enc.seed = seed;
  enc.scale = scale;
  enc.n_frequencies = n_frequencies;
  RngStream rng(seed, kEncoderStream);
  std::size_t row = 0;
  for (int dim : group_dims) {
    Eigen::MatrixXd f(n_frequencies, dim);
    for (int c = 0; c < dim; ++c) {
      if (row + c >= input_ranges.size() || !(input_ranges[row + c] > 0.0)) {
        throw std::invalid_argument("fourier encoder input ranges do not cover the groups");
      }
    }
    for (int r = 0; r < n_frequencies; ++r) {
      for (int c = 0; c < dim; ++c) f(r, c) = rng.Normal(0.0, scale) / input_ranges[row + c];
    }
    row += static_cast<std::size_t>(dim);
    enc.frequencies.push_back(std::move(f));
  }
  return enc;
}

int FourierEncoder::input_dim() const {
  int d = 0;
  for (const auto& f : frequencies) d += static_cast<int>(f.cols());
  return d;
}

Eigen::VectorXd FourierEncoder::EncodeGroup(std::size_t group, const Eigen::VectorXd& v) const {
  if (group >= frequencies.size() || v.size() != frequencies[group].cols()) {
    throw std::invalid_argument("fourier group length mismatch");
  }
  const Eigen::ArrayXd z = kTwoPi * (frequencies[group] * v).array();
  Eigen::VectorXd out(2 * n_frequencies);
  out << z.sin(), z.cos();
  return out;
}

void FourierEncoder::Encode(const Eigen::MatrixXd& raw, Eigen::MatrixXd& out) const {
  if (raw.rows() != input_dim()) throw std::invalid_argument("fourier input length mismatch");
  out.resize(output_dim(), raw.cols());
  Eigen::Index row = 0;
  for (std::size_t g = 0; g < frequencies.size(); ++g) {
    const auto& f = frequencies[g];
    const Eigen::ArrayXXd z = kTwoPi * (f * raw.middleRows(row, f.cols())).array();
    const Eigen::Index at = static_cast<Eigen::Index>(g) * 2 * n_frequencies;
    out.middleRows(at, n_frequencies) = z.sin().matrix();
    out.middleRows(at + n_frequencies, n_frequencies) = z.cos().matrix();
    row += f.cols();
  }
}

void NetworkArch::Validate() const {
  if (main_width < 1 || main_depth < 1 || shaping_width < 1 || shaping_depth < 1 ||
      n_frequencies < 1 || !(fourier_scale > 0.0)) {
    throw std::invalid_argument("network architecture sizes must be positive");
  }
}

NetworkParams NetworkParams::Init(const NetworkArch& arch, std::uint64_t seed) {
  arch.Validate();
  NetworkParams p;
  p.seed = seed;
  const RngStream root(seed);
  p.main_encoder = FourierEncoder::Create(kInputGroupDims, kMainInputRanges, arch.n_frequencies,
                                          arch.fourier_scale, MixSeed(seed) ^ 1);
  p.shaping_encoder = FourierEncoder::Create(kInputGroupDims, kShapingInputRanges,
                                             arch.n_frequencies, arch.fourier_scale,
                                             MixSeed(seed) ^ 2);
  RngStream main_rng = root.Split(kMainInitStream);
  RngStream shaping_rng = root.Split(kShapingInitStream);
  p.main = InitMlp(p.main_encoder.output_dim(), arch.main_width, arch.main_depth, 1, main_rng);
  p.shaping = InitMlp(p.shaping_encoder.output_dim(), arch.shaping_width, arch.shaping_depth, 4,
                      shaping_rng);
  return p;
}

NetworkArch NetworkParams::arch() const {
  NetworkArch a;
  a.main_width = static_cast<int>(main.layers.front().w.rows());
  a.main_depth = static_cast<int>(main.layers.size()) - 1;
  a.shaping_width = static_cast<int>(shaping.layers.front().w.rows());
  a.shaping_depth = static_cast<int>(shaping.layers.size()) - 1;
  a.n_frequencies = main_encoder.n_frequencies;
  a.fourier_scale = main_encoder.scale;
  return a;
}

std::size_t NetworkParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : Tensors()) n += t.size();
  return n;
}

std::vector<std::span<double>> NetworkParams::Tensors() {
  std::vector<std::span<double>> out;
  for (Mlp* m : {&main, &shaping}) {
    for (auto& l : m->layers) {
      out.emplace_back(l.w.data(), static_cast<std::size_t>(l.w.size()));
      out.emplace_back(l.b.data(), static_cast<std::size_t>(l.b.size()));
    }
  }
  return out;
}

std::vector<std::span<const double>> NetworkParams::Tensors() const {
  std::vector<std::span<const double>> out;
  for (auto t : const_cast<NetworkParams*>(this)->Tensors()) out.emplace_back(t);
  return out;
}

double Sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double Softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double Gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return x * Sigmoid(2.0 * u);
}

double GeluGrad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double s = Sigmoid(2.0 * u);
  return s + x * s * (1.0 - s) * 2.0 * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

double CombineField(double f, double alpha1, double alpha2, double rho1, double rho2,
                    double distance) {
  const double u1 = alpha1 * (rho1 - distance);
  const double keep1 = Sigmoid(-u1);  // 1 - sigma1
  const double keep2 = Sigmoid(alpha2 * (rho2 - distance));  // 1 - sigma2
  return std::clamp(keep1 * keep2 * f + Sigmoid(u1), 0.0, 1.0);
}

FieldOutput FieldBatch::at(std::size_t i) const {
  const auto k = static_cast<Eigen::Index>(i);
  return {p_hat(k), f(k), alpha1(k), alpha2(k), rho1(k), rho2(k)};
}

void RawInputs(std::span<const FieldInput> inputs, Eigen::MatrixXd& main_raw,
               Eigen::MatrixXd& shaping_raw) {
  const auto n = static_cast<Eigen::Index>(inputs.size());
  main_raw.resize(kRawInputDim, n);
  shaping_raw.resize(kRawInputDim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const FieldInput& in = inputs[static_cast<std::size_t>(i)];
    in.Validate();
    const double c = std::cos(in.rphi);
    const double s = std::sin(in.rphi);
    const double a = std::atan2(in.ry, in.rx);
    auto m = main_raw.col(i);
    auto h = shaping_raw.col(i);
    m(0) = in.rx;
    m(1) = in.ry;
    h(0) = std::cos(a);
    h(1) = std::sin(a);
    m(2) = h(2) = c;
    m(3) = h(3) = s;
    m(4) = h(4) = in.l1;
    m(5) = h(5) = in.l2;
    for (int k = 0; k < 5; ++k) m(6 + k) = h(6 + k) = in.sigma[static_cast<std::size_t>(k)];
  }
}

FieldBatch ForwardBatch(const NetworkParams& params, std::span<const FieldInput> inputs,
                        ForwardCache* cache) {
  CheckNetwork(params);
  Eigen::MatrixXd main_raw, shaping_raw;
  RawInputs(inputs, main_raw, shaping_raw);
  Eigen::MatrixXd main_enc, shaping_enc, f_logit, heads;
  params.main_encoder.Encode(main_raw, main_enc);
  params.shaping_encoder.Encode(shaping_raw, shaping_enc);
  MlpForward(params.main, std::move(main_enc), f_logit, cache ? &cache->main : nullptr);
  MlpForward(params.shaping, std::move(shaping_enc), heads, cache ? &cache->shaping : nullptr);

  const auto n = static_cast<Eigen::Index>(inputs.size());
  FieldBatch out;
  out.p_hat.resize(n);
  out.f.resize(n);
  out.alpha1.resize(n);
  out.alpha2.resize(n);
  out.rho1.resize(n);
  out.rho2.resize(n);
  Eigen::ArrayXd distance(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    distance(i) = inputs[static_cast<std::size_t>(i)].Distance();
    out.f(i) = Sigmoid(f_logit(0, i));
    out.alpha1(i) = 1.0 + 20.0 * Sigmoid(heads(kAlpha1, i));
    out.alpha2(i) = 1.0 + 20.0 * Sigmoid(heads(kAlpha2, i));
    out.rho1(i) = 12.0 * Sigmoid(heads(kRho1, i));
    out.rho2(i) = Softplus(heads(kRho2, i));
    out.p_hat(i) = CombineField(out.f(i), out.alpha1(i), out.alpha2(i), out.rho1(i), out.rho2(i),
                                distance(i));
  }
  if (cache) {
    cache->distance = std::move(distance);
    cache->f_logit = f_logit.row(0).transpose().array();
    cache->head_logits = heads.array();
  }
  return out;
}

FieldOutput Forward(const NetworkParams& params, const FieldInput& input) {
  return ForwardBatch(params, std::span(&input, 1)).at(0);
}

FieldOutput Forward(const NetworkParams& params, const CpQuery& q) {
  return Forward(params, FieldInput::FromQuery(q));
}

std::string_view ToString(EnsembleMode mode) {
  switch (mode) {
    case EnsembleMode::kSingle:
      return "single";
    case EnsembleMode::kMean:
      return "mean";
    case EnsembleMode::kMax:
      return "max";
    case EnsembleMode::kCiUpper:
      return "ci_upper";
    case EnsembleMode::kCiLower:
      return "ci_lower";
  }
  return "?";
}

EnsembleMode ParseEnsembleMode(std::string_view name) {
  for (auto m : {EnsembleMode::kSingle, EnsembleMode::kMean, EnsembleMode::kMax,
                 EnsembleMode::kCiUpper, EnsembleMode::kCiLower}) {
    if (ToString(m) == name) return m;
  }
  throw std::invalid_argument("unknown ensemble mode: " + std::string(name));
}

double Aggregate(std::span<const double> members, EnsembleMode mode) {
  if (members.empty()) throw std::invalid_argument("no ensemble members");
  const bool ci = mode == EnsembleMode::kCiUpper || mode == EnsembleMode::kCiLower;
  if (ci && members.size() < 2) throw std::invalid_argument("ci modes need at least 2 members");
  double value = 0.0;
  switch (mode) {
    case EnsembleMode::kSingle:
      value = members[0];
      break;
    case EnsembleMode::kMax:
      value = *std::max_element(members.begin(), members.end());
      break;
    case EnsembleMode::kMean:
    case EnsembleMode::kCiUpper:
    case EnsembleMode::kCiLower: {
      const double k = static_cast<double>(members.size());
      double mean = 0.0;
      for (double v : members) mean += v;
      mean /= k;
      value = mean;
      if (ci) {
        double ss = 0.0;
        for (double v : members) ss += (v - mean) * (v - mean);
        const double half = kZ95 * std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
        value = mode == EnsembleMode::kCiUpper ? mean + half : mean - half;
      }
      break;
    }
  }
  return std::clamp(value, 0.0, 1.0);
}

void EnsembleModel::Validate() const { Validate(mode); }

void EnsembleModel::Validate(EnsembleMode m) const {
  if (members.empty()) throw std::invalid_argument("ensemble has no members");
  if ((m == EnsembleMode::kCiUpper || m == EnsembleMode::kCiLower) && members.size() < 2) {
    throw std::invalid_argument("ci modes need at least 2 members");
  }
  for (const auto& p : members) CheckNetwork(p);
}

double EnsembleModel::Predict(const CpQuery& q, EnsembleMode m) const {
  const FieldInput in = FieldInput::FromQuery(q);
  return PredictBatch(std::span(&in, 1), m)[0];
}

std::vector<double> EnsembleModel::PredictBatch(std::span<const FieldInput> inputs,
                                                EnsembleMode m) const {
  Validate(m);
  constexpr std::size_t kChunk = 1024;
  const std::size_t k = m == EnsembleMode::kSingle ? 1 : members.size();
  std::vector<double> out(inputs.size());
  std::vector<double> values(k * kChunk);
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const auto chunk = inputs.subspan(start, std::min(kChunk, inputs.size() - start));
    for (std::size_t j = 0; j < k; ++j) {
      const FieldBatch b = ForwardBatch(members[j], chunk);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        values[i * k + j] = b.p_hat(static_cast<Eigen::Index>(i));
      }
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out[start + i] = Aggregate(std::span(values).subspan(i * k, k), m);
    }
  }
  return out;
}

namespace {

void PutU64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t GetU64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ModelFormatError("model file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

// Every blob in file order; written row-major.
template <class Fn>
void ForEachBlob(NetworkParams& p, std::size_t member, Fn&& fn) {
  const std::string prefix = "m" + std::to_string(member) + ".";
  for (auto [name, enc] : {std::pair{"main_encoder", &p.main_encoder},
                           std::pair{"shaping_encoder", &p.shaping_encoder}}) {
    for (std::size_t g = 0; g < enc->frequencies.size(); ++g) {
      fn(prefix + name + ".g" + std::to_string(g), enc->frequencies[g]);
    }
  }
  for (auto [name, mlp] : {std::pair{"main", &p.main}, std::pair{"shaping", &p.shaping}}) {
    for (std::size_t l = 0; l < mlp->layers.size(); ++l) {
      const std::string base = prefix + name + ".l" + std::to_string(l);
      fn(base + ".w", mlp->layers[l].w);
      Eigen::Map<Eigen::MatrixXd> b(mlp->layers[l].b.data(), mlp->layers[l].b.size(), 1);
      fn(base + ".b", b);
    }
  }
}

json ActivationSpec() {
  return {{"hidden", "gelu_tanh"},
          {"f", "sigmoid"},
          {"alpha", "1+20*sigmoid"},
          {"rho1", "12*sigmoid"},
          {"rho2", "softplus"}};
}

json EncoderJson(const FourierEncoder& e) {
  json dims = json::array();
  for (const auto& f : e.frequencies) dims.push_back(f.cols());
  return {{"seed", e.seed}, {"scale", e.scale}, {"n_frequencies", e.n_frequencies},
          {"group_dims", dims}};
}

FourierEncoder EncoderFromJson(const json& j) {
  FourierEncoder e;
  e.seed = j.at("seed").get<std::uint64_t>();
  e.scale = j.at("scale").get<double>();
  e.n_frequencies = j.at("n_frequencies").get<int>();
  for (int d : j.at("group_dims").get<std::vector<int>>()) {
    e.frequencies.emplace_back(Eigen::MatrixXd::Zero(e.n_frequencies, d));
  }
  return e;
}

Mlp MlpShell(int in, int width, int depth, int out) {
  Mlp m;
  int cols = in;
  for (int l = 0; l <= depth; ++l) {
    const int rows = l == depth ? out : width;
    m.layers.push_back({Eigen::MatrixXd::Zero(rows, cols), Eigen::VectorXd::Zero(rows)});
    cols = rows;
  }
  return m;
}

}  // namespace

void SaveModel(const EnsembleModel& model, const std::filesystem::path& path) {
  model.Validate();
  EnsembleModel copy = model;
  json header;
  header["format_version"] = kModelFormatVersion;
  header["mode"] = std::string(ToString(model.mode));
  header["K"] = model.size();
  header["activations"] = ActivationSpec();
  json members = json::array();
  json blobs = json::array();
  for (std::size_t k = 0; k < copy.members.size(); ++k) {
    NetworkParams& p = copy.members[k];
    const NetworkArch a = p.arch();
    members.push_back({{"seed", p.seed},
                       {"main_width", a.main_width},
                       {"main_depth", a.main_depth},
                       {"shaping_width", a.shaping_width},
                       {"shaping_depth", a.shaping_depth},
                       {"main_encoder", EncoderJson(p.main_encoder)},
                       {"shaping_encoder", EncoderJson(p.shaping_encoder)}});
    ForEachBlob(p, k, [&](const std::string& name, const auto& m) {
      blobs.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    });
  }
  header["members"] = members;
  header["blobs"] = blobs;

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write model file " + path.string());
  const std::string text = header.dump();
  os.write(kModelMagic.data(), static_cast<std::streamsize>(kModelMagic.size()));
  PutU64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t k = 0; k < copy.members.size(); ++k) {
    ForEachBlob(copy.members[k], k, [&](const std::string&, const auto& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) PutU64(os, std::bit_cast<std::uint64_t>(m(r, c)));
      }
    });
  }
  if (!os) throw std::runtime_error("failed writing model file " + path.string());
}

EnsembleModel LoadModel(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open model file " + path.string());
  std::string magic(kModelMagic.size(), '\0');
  if (!is.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kModelMagic) {
    throw ModelFormatError("not a model file (bad magic): " + path.string());
  }
  const std::uint64_t header_len = GetU64(is);
  if (header_len > (1u << 26)) throw ModelFormatError("model header too large");
  std::string text(header_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw ModelFormatError("model file truncated in header");
  }
  EnsembleModel model;
  try {
    const json header = json::parse(text);
    if (header.at("format_version").get<int>() != kModelFormatVersion) {
      throw ModelFormatError("unsupported model format version");
    }
    if (header.at("activations") != ActivationSpec()) {
      throw ModelFormatError("model uses unsupported activations");
    }
    model.mode = ParseEnsembleMode(header.at("mode").get<std::string>());
    const auto& members = header.at("members");
    if (members.size() != header.at("K").get<std::size_t>()) {
      throw ModelFormatError("member count does not match K");
    }
    const auto& blobs = header.at("blobs");
    std::size_t next = 0;
    for (std::size_t k = 0; k < members.size(); ++k) {
      const json& m = members[k];
      NetworkParams p;
      p.seed = m.at("seed").get<std::uint64_t>();
      p.main_encoder = EncoderFromJson(m.at("main_encoder"));
      p.shaping_encoder = EncoderFromJson(m.at("shaping_encoder"));
      p.main = MlpShell(p.main_encoder.output_dim(), m.at("main_width").get<int>(),
                        m.at("main_depth").get<int>(), 1);
      p.shaping = MlpShell(p.shaping_encoder.output_dim(), m.at("shaping_width").get<int>(),
                           m.at("shaping_depth").get<int>(), 4);
      ForEachBlob(p, k, [&](const std::string& name, auto& mat) {
        if (next >= blobs.size() || blobs[next].at("name").get<std::string>() != name ||
            blobs[next].at("rows").get<Eigen::Index>() != mat.rows() ||
            blobs[next].at("cols").get<Eigen::Index>() != mat.cols()) {
          throw ModelFormatError("model blob table does not match its layout at " + name);
        }
        ++next;
        for (Eigen::Index r = 0; r < mat.rows(); ++r) {
          for (Eigen::Index c = 0; c < mat.cols(); ++c) mat(r, c) = std::bit_cast<double>(GetU64(is));
        }
      });
      model.members.push_back(std::move(p));
    }
    if (next != blobs.size()) throw ModelFormatError("model blob table has extra entries");
  } catch (const json::exception& e) {
    throw ModelFormatError(std::string("malformed model header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(std::string("invalid model: ") + e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw ModelFormatError("model file has trailing bytes");
  }
  try {
    model.Validate();
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(std::string("invalid model: ") + e.what());
  }
  return model;
}

}  // namespace dcpf
