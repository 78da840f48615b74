#include "dcpf/model.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"

namespace dcpf {
namespace {

const NetworkArch kSmall{32, 2, 16, 2, 16, 1.0};

FieldInput RandomInput(std::mt19937_64& gen, double max_radius = 15.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FieldInput in;
  const double r = max_radius * u(gen);
  const double a = 2 * std::numbers::pi * u(gen);
  in.rx = r * std::cos(a);
  in.ry = r * std::sin(a);
  in.rphi = std::numbers::pi * (2 * u(gen) - 1);
  in.l1 = 0.1 + 4.9 * u(gen);
  in.l2 = 0.1 + 4.9 * u(gen);
  for (double& s : in.sigma) s = 1.4 * u(gen);
  return in;
}

// Sets the network's output layers so the heads take the given values for
// every input.
void SetHeads(NetworkParams& p, double f_logit, const std::array<double, 4>& head_logits) {
  auto& out = p.main.layers.back();
  out.w.setZero();
  out.b(0) = f_logit;
  auto& heads = p.shaping.layers.back();
  heads.w.setZero();
  for (int i = 0; i < 4; ++i) heads.b(i) = head_logits[static_cast<std::size_t>(i)];
}

double Logit(double p) { return std::log(p / (1 - p)); }

TEST_CASE("fourier encoding") {
  const auto enc = FourierEncoder::Create(kInputGroupDims, kMainInputRanges, 16, 1.0, 3);
  CHECK(enc.output_dim() == 128);
  CHECK(enc.input_dim() == 11);

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(5);
  const Eigen::VectorXd z = enc.EncodeGroup(3, zero);
  REQUIRE(z.size() == 32);
  for (int i = 0; i < 16; ++i) {
    CHECK(z(i) == 0.0);
    CHECK(z(16 + i) == 1.0);
  }

  const auto again = FourierEncoder::Create(kInputGroupDims, kMainInputRanges, 16, 1.0, 3);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(5, -0.3, 1.1);
  CHECK(enc.EncodeGroup(3, v) == again.EncodeGroup(3, v));
  CHECK(enc.frequencies[0] != FourierEncoder::Create(kInputGroupDims, kMainInputRanges, 16, 1.0, 4)
                                  .frequencies[0]);

  std::mt19937_64 gen(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t g = 0; g < enc.num_groups(); ++g) {
    const auto& f = enc.frequencies[g];
    const double op_norm = Eigen::JacobiSVD<Eigen::MatrixXd>(f).singularValues()(0);
    for (int trial = 0; trial < 200; ++trial) {
      Eigen::VectorXd a(f.cols()), d(f.cols());
      for (Eigen::Index i = 0; i < f.cols(); ++i) {
        a(i) = 3 * n(gen);
        d(i) = 1e-3 * n(gen);
      }
      const double moved = (enc.EncodeGroup(g, a + d) - enc.EncodeGroup(g, a)).norm();
      CHECK(moved <= 2 * std::numbers::pi * op_norm * d.norm() * (1 + 1e-9));
    }
  }

  CHECK_THROWS_AS(enc.EncodeGroup(0, zero), std::invalid_argument);
  CHECK_THROWS_AS(enc.EncodeGroup(4, zero), std::invalid_argument);
}

TEST_CASE("distance bias with hand-set heads") {
  // alpha1 = alpha2 = 21, rho1 = 5, rho2 = 6, f = 0.5
  CHECK(CombineField(0.5, 21, 21, 5, 6, 20) <= 1e-6);
  CHECK(CombineField(0.5, 21, 21, 5, 6, 0) >= 1 - 1e-6);
  CHECK(CombineField(0.5, 21, 21, 5, 6, 5.5) == doctest::Approx(0.5 * (1 - 1 / (1 + std::exp(10.5)))
                                                                    * (1 / (1 + std::exp(-10.5)))
                                                                + 1 / (1 + std::exp(10.5))));

  auto p = NetworkParams::Init(kSmall, 9);
  SetHeads(p, 0.0, {40.0, 40.0, Logit(5.0 / 12.0), std::log(std::expm1(6.0))});
  FieldInput far;
  far.rx = 12;
  far.ry = -16;
  const auto out = Forward(p, far);
  CHECK(out.f == 0.5);
  CHECK(out.alpha1 == doctest::Approx(21).epsilon(1e-12));
  CHECK(out.alpha2 == doctest::Approx(21).epsilon(1e-12));
  CHECK(out.rho1 == doctest::Approx(5).epsilon(1e-12));
  CHECK(out.rho2 == doctest::Approx(6).epsilon(1e-12));
  CHECK(out.p_hat <= 1e-6);
  CHECK(Forward(p, FieldInput{}).p_hat >= 1 - 1e-6);
}

TEST_CASE("output range and batch consistency") {
  std::mt19937_64 gen(2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = NetworkParams::Init(kSmall, seed);
    std::vector<FieldInput> inputs;
    for (int i = 0; i < 200; ++i) inputs.push_back(RandomInput(gen, seed == 4 ? 1e4 : 20.0));
    const FieldBatch b = ForwardBatch(p, inputs);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const FieldOutput o = b.at(i);
      CHECK(o.p_hat >= 0.0);
      CHECK(o.p_hat <= 1.0);
      CHECK(o.alpha1 >= 1.0);
      CHECK(o.alpha1 <= 21.0);
      CHECK(o.rho1 >= 0.0);
      CHECK(o.rho1 <= 12.0);
      CHECK(o.rho2 >= 0.0);
      const FieldOutput single = Forward(p, inputs[i]);
      CHECK(single.p_hat == doctest::Approx(o.p_hat).epsilon(1e-9));
      CHECK(single.rho2 == doctest::Approx(o.rho2).epsilon(1e-9));
    }
  }
}

TEST_CASE("far-field and near-field bounds for random models") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int near_checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = NetworkParams::Init(kSmall, 100 + seed);
    std::vector<FieldInput> probe(100);
    for (auto& in : probe) in = RandomInput(gen);
    const FieldBatch heads = ForwardBatch(p, probe);

    // The shaping net only sees the polar angle, so moving along the ray
    // keeps the heads fixed.
    std::vector<FieldInput> far = probe;
    for (std::size_t i = 0; i < far.size(); ++i) {
      const double r = std::max(heads.rho1(i), heads.rho2(i)) + 6 + 30 * u(gen);
      const double a = std::atan2(probe[i].ry, probe[i].rx);
      far[i].rx = r * std::cos(a);
      far[i].ry = r * std::sin(a);
    }
    const FieldBatch fb = ForwardBatch(p, far);
    for (std::size_t i = 0; i < far.size(); ++i) {
      CHECK(fb.rho1(i) == doctest::Approx(heads.rho1(i)).epsilon(1e-12));
      CHECK(fb.p_hat(i) < 0.005);
    }

    p.shaping.layers.back().b(kRho1) += 6.0;
    const FieldBatch pushed = ForwardBatch(p, probe);
    std::vector<FieldInput> near;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (pushed.rho1(i) < 6.0) continue;
      FieldInput in = probe[i];
      const double r = (pushed.rho1(i) - 6.0) * u(gen);
      const double a = std::atan2(in.ry, in.rx);
      in.rx = r * std::cos(a);
      in.ry = r * std::sin(a);
      near.push_back(in);
    }
    const FieldBatch nb = ForwardBatch(p, near);
    for (std::size_t i = 0; i < near.size(); ++i) CHECK(nb.p_hat(i) > 0.9975);
    near_checked += static_cast<int>(near.size());
  }
  CHECK(near_checked > 1000);
}

TEST_CASE("ensemble aggregation") {
  const std::vector<double> same = {0.2, 0.2, 0.2};
  for (auto m : {EnsembleMode::kSingle, EnsembleMode::kMean, EnsembleMode::kMax,
                 EnsembleMode::kCiUpper, EnsembleMode::kCiLower}) {
    CHECK(Aggregate(same, m) == doctest::Approx(0.2).epsilon(1e-15));
  }
  const std::vector<double> two = {0.1, 0.3};
  CHECK(Aggregate(two, EnsembleMode::kMax) == 0.3);
  CHECK(Aggregate(two, EnsembleMode::kSingle) == 0.1);
  const std::vector<double> three = {0.1, 0.2, 0.3};
  CHECK(Aggregate(three, EnsembleMode::kCiUpper) == doctest::Approx(0.3131607).epsilon(1e-6));
  CHECK(Aggregate(three, EnsembleMode::kCiLower) == doctest::Approx(0.0868393).epsilon(1e-6));
  CHECK(Aggregate(std::vector<double>{0.0, 0.0, 0.05}, EnsembleMode::kCiLower) == 0.0);

  const std::vector<double> one = {0.4};
  CHECK_THROWS_AS(Aggregate(one, EnsembleMode::kCiUpper), std::invalid_argument);
  CHECK_THROWS_AS(Aggregate(std::vector<double>{}, EnsembleMode::kMean), std::invalid_argument);

  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(2 + trial % 9);
    for (double& x : v) x = u(gen);
    double mean = 0, ss = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double x : v) ss += (x - mean) * (x - mean);
    const double half = 1.96 * std::sqrt(ss / static_cast<double>(v.size() - 1) / v.size());
    const double lo = Aggregate(v, EnsembleMode::kCiLower);
    const double mid = Aggregate(v, EnsembleMode::kMean);
    const double hi = Aggregate(v, EnsembleMode::kCiUpper);
    const double mx = Aggregate(v, EnsembleMode::kMax);
    CHECK(lo <= mid);
    CHECK(mid <= hi);
    CHECK(hi <= mx + half + 1e-15);
    CHECK(mid <= mx);
  }

  CHECK(ParseEnsembleMode("ci_upper") == EnsembleMode::kCiUpper);
  CHECK(ToString(EnsembleMode::kCiLower) == "ci_lower");
  CHECK_THROWS_AS(ParseEnsembleMode("median"), std::invalid_argument);

  EnsembleModel single;
  single.members.push_back(NetworkParams::Init(kSmall, 1));
  single.mode = EnsembleMode::kCiUpper;
  CHECK_THROWS_AS(single.Validate(), std::invalid_argument);
  single.mode = EnsembleMode::kSingle;
  CHECK_NOTHROW(single.Validate());
}

TEST_CASE("ensemble prediction matches member forward passes") {
  EnsembleModel m;
  for (std::uint64_t s = 0; s < 3; ++s) m.members.push_back(NetworkParams::Init(kSmall, 20 + s));
  std::mt19937_64 gen(5);
  std::vector<FieldInput> inputs;
  for (int i = 0; i < 1500; ++i) inputs.push_back(RandomInput(gen, 8.0));
  const auto batch = m.PredictBatch(inputs, EnsembleMode::kMean);
  for (std::size_t i = 0; i < inputs.size(); i += 97) {
    double mean = 0;
    for (const auto& p : m.members) mean += Forward(p, inputs[i]).p_hat;
    CHECK(batch[i] == doctest::Approx(mean / 3).epsilon(1e-9));
  }

  CpQuery q;
  q.robot_pose = Pose2(inputs[0].rx, inputs[0].ry, inputs[0].rphi);
  q.obstacle.mean = {0, 0, 0, inputs[0].l1, inputs[0].l2};
  q.obstacle.sigma = inputs[0].sigma;
  CHECK(m.Predict(q, EnsembleMode::kMean) == doctest::Approx(batch[0]).epsilon(1e-9));
  q.obstacle.mean[0] = 1.0;
  CHECK_THROWS_AS(m.Predict(q), std::invalid_argument);

  FieldInput bad;
  bad.rx = std::nan("");
  CHECK_THROWS_AS(Forward(m.members[0], bad), std::invalid_argument);
}

TEST_CASE("model file round trip") {
  EnsembleModel m;
  m.members.push_back(NetworkParams::Init(kSmall, 31));
  m.members.push_back(NetworkParams::Init(NetworkArch{24, 3, 8, 1, 8, 0.5}, 32));
  m.mode = EnsembleMode::kMax;
  const auto dir = std::filesystem::temp_directory_path() / "dcpf_model_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.dcpf";
  SaveModel(m, path);
  const EnsembleModel back = LoadModel(path);
  REQUIRE(back.size() == 2);
  CHECK(back.mode == EnsembleMode::kMax);
  CHECK(back.members[1].arch() == m.members[1].arch());
  CHECK(back.members[1].main_encoder.seed == m.members[1].main_encoder.seed);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(back.members[k].main_encoder.frequencies == m.members[k].main_encoder.frequencies);
    CHECK(back.members[k].shaping_encoder.frequencies == m.members[k].shaping_encoder.frequencies);
  }

  std::mt19937_64 gen(6);
  for (int i = 0; i < 100; ++i) {
    const FieldInput in = RandomInput(gen);
    for (std::size_t k = 0; k < 2; ++k) {
      const FieldOutput a = Forward(m.members[k], in);
      const FieldOutput b = Forward(back.members[k], in);
      CHECK(std::memcmp(&a, &b, sizeof a) == 0);
    }
  }

  // Blobs are little-endian f64, the first one right after the header.
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), {});
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= std::uint64_t{bytes[8 + i]} << (8 * i);
  std::uint64_t first = 0;
  for (int i = 0; i < 8; ++i) first |= std::uint64_t{bytes[16 + header_len + i]} << (8 * i);
  CHECK(std::bit_cast<double>(first) == m.members[0].main_encoder.frequencies[0](0, 0));

  auto write = [&](const std::vector<unsigned char>& data) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  };
  auto corrupt = bytes;
  corrupt[0] ^= 0xff;
  write(corrupt);
  CHECK_THROWS_AS(LoadModel(path), ModelFormatError);
  write(std::vector<unsigned char>(bytes.begin(), bytes.end() - 9));
  CHECK_THROWS_AS(LoadModel(path), ModelFormatError);
  auto longer = bytes;
  longer.push_back(0);
  write(longer);
  CHECK_THROWS_AS(LoadModel(path), ModelFormatError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace dcpf
