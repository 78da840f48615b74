#include "dcpf/dataset.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "test_support.h"

namespace dcpf {
namespace {

std::string Slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double EdgeDistance(const ConvexPolygon& poly, Vec2 p) {
  double best = 1e300;
  const auto v = poly.vertices();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2 a = v[i];
    const Vec2 e = v[(i + 1) % v.size()] - a;
    const double t = std::clamp(Dot(p - a, e) / Dot(e, e), 0.0, 1.0);
    best = std::min(best, (a + e * t - p).norm());
  }
  return best;
}

Dataset SyntheticDataset(std::size_t per_bucket_a, std::size_t per_bucket_b,
                         std::size_t per_bucket_c) {
  Dataset ds;
  auto add = [&](std::size_t count, double p) {
    for (std::size_t i = 0; i < count; ++i) {
      DatasetRecord r;
      r.rx = static_cast<double>(ds.records.size());
      r.p_bar = p;
      ds.records.push_back(r);
      ds.record_ids.push_back(ds.records.size() - 1);
    }
  };
  add(per_bucket_a, 0.001);
  add(per_bucket_b, 0.05);
  add(per_bucket_c, 0.5);
  return ds;
}

TEST_CASE("heuristic shape without uncertainty is the configuration obstacle") {
  RobotSpec robot;
  ObstacleSpec o;
  o.mean = {0, 0, 0, 3.0, 1.5};
  RngStream rng(1);
  const auto shape = BuildHeuristicShape(robot, o, rng);
  CHECK(test::SameVertexSet(shape.boundary,
                            RectPolygon(3.0 + robot.width, 1.5 + robot.height, Pose2()), 1e-9));

  ObstacleSpec noisy = o;
  noisy.sigma = {1, 1, 0, 0, 0};
  const auto grown = BuildHeuristicShape(robot, noisy, rng);
  for (const Vec2& v : shape.boundary.vertices()) CHECK(grown.boundary.Contains(v, 1e-9));

  ObstacleSpec rotating = o;
  rotating.sigma = {0.2, 0.2, 0.4, 0.1, 0.1};
  const auto swept = BuildHeuristicShape(robot, rotating, rng);
  CHECK(swept.boundary.Area() > shape.boundary.Area());
}

TEST_CASE("heuristic boundary tracks nontrivial isolines") {
  RobotSpec robot;
  ObstacleSpec o;
  o.mean = {0, 0, 0, 3.0, 1.5};
  o.sigma = {0.5, 0.5, 0.3, 0.2, 0.2};
  RngStream rng(3);
  const auto profile = AccuracyProfile::Relaxed();
  int nontrivial = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto shape = BuildHeuristicShape(robot, o, rng, 0.0);
    const Vec2 p = BoundaryPoint(shape.boundary, rng.Uniform());
    CpQuery q;
    q.robot_pose = Pose2(p.x, p.y, 0.0);
    q.obstacle = o;
    RngStream label(11, static_cast<std::uint64_t>(i));
    const double cp = EstimateCpAdaptive(q, profile, label).p_hat;
    nontrivial += (cp > 1e-4 && cp < 1 - 1e-4) ? 1 : 0;
  }
  CHECK(nontrivial >= 6000);
}

TEST_CASE("robot configuration sampling") {
  RobotSpec robot;
  ObstacleSpec o;
  o.mean = {0, 0, 0, 2.0, 2.0};
  o.sigma = {0.3, 0.3, 0.2, 0.1, 0.1};
  RngStream rng(5);
  const auto shape = BuildHeuristicShape(robot, o, rng);

  for (double u : {0.0, 0.13, 0.5, 0.77, 0.999}) {
    CHECK(EdgeDistance(shape.boundary, BoundaryPoint(shape.boundary, u)) < 1e-9);
  }
  RobotSampling unit_scale;
  unit_scale.boundary_fraction = 1.0;
  unit_scale.scale_min = unit_scale.scale_max = 1.0;
  for (int i = 0; i < 100; ++i) {
    const Pose2 p = SampleRobotConfig(shape, rng, unit_scale);
    CHECK(EdgeDistance(shape.boundary, p.position()) < 1e-9);
  }

  const auto box = shape.boundary.Bounds();
  const double cx = 0.5 * (box[0] + box[2]);
  const double cy = 0.5 * (box[1] + box[3]);
  const double hx = 1.5 * (box[2] - box[0]);
  const double hy = 1.5 * (box[3] - box[1]);
  int inside = 0;
  for (int i = 0; i < 10000; ++i) {
    const Pose2 p = SampleRobotConfig(shape, rng);
    inside += (std::abs(p.x - cx) <= hx && std::abs(p.y - cy) <= hy) ? 1 : 0;
    CHECK(p.phi > -std::numbers::pi);
    CHECK(p.phi <= std::numbers::pi);
  }
  CHECK(inside >= 9900);

  HeuristicShape fixed = shape;
  fixed.robot_heading = 0.25;
  CHECK(SampleRobotConfig(fixed, rng).phi == 0.25);
}

TEST_CASE("default sampling mix covers every bucket") {
  DatasetConfig cfg;
  cfg.profile = AccuracyProfile::Relaxed();
  RobotSpec robot;
  ObstacleSpec o;
  o.mean = {0, 0, 0, 2.5, 1.5};
  o.sigma = {0.7, 0.7, 0.7, 0.7, 0.7};
  std::array<int, 3> counts{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    RngStream rng(21, static_cast<std::uint64_t>(i));
    const double heading = rng.Uniform(-std::numbers::pi, std::numbers::pi);
    const auto shape = BuildHeuristicShape(robot, o, rng, heading);
    CpQuery q;
    q.robot_pose = SampleRobotConfig(shape, rng);
    q.obstacle = o;
    ++counts[cfg.profile.BucketOf(EstimateCpAdaptive(q, cfg.profile, rng).p_hat)];
  }
  for (int c : counts) CHECK(c >= n / 10);
}

TEST_CASE("balanced generation, determinism and reproducible labels") {
  DatasetConfig cfg;
  cfg.n_records = 30;
  cfg.profile = AccuracyProfile::Relaxed();
  cfg.seed = 42;
  cfg.threads = 1;
  const Dataset ds = GenerateDataset(cfg);
  REQUIRE(ds.size() == 30);
  CHECK(ds.BucketCounts() == std::vector<std::size_t>{10, 10, 10});

  cfg.threads = 3;
  const Dataset again = GenerateDataset(cfg);
  CHECK(again.records == ds.records);

  const auto dir = std::filesystem::temp_directory_path() / "dcpf_dataset_test";
  std::filesystem::create_directories(dir);
  WriteDataset(ds, dir / "a.csv");
  WriteDataset(again, dir / "b.csv");
  CHECK(Slurp(dir / "a.csv") == Slurp(dir / "b.csv"));
  CHECK(Slurp(dir / "a.csv.meta.json") == Slurp(dir / "b.csv.meta.json"));
  CHECK(Slurp(dir / "a.csv").rfind(kDatasetCsvHeader, 0) == 0);

  const Dataset loaded = ReadDataset(dir / "a.csv");
  CHECK(loaded.records == ds.records);
  CHECK(loaded.record_ids == ds.record_ids);
  CHECK(loaded.seed == 42);
  CHECK(loaded.profile.accuracies == cfg.profile.accuracies);

  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.records[i];
    CHECK(r.p_bar >= 0.0);
    CHECK(r.p_bar <= 1.0);
    if (r.n_samples < cfg.profile.max_samples) {
      CHECK(r.ci_half_width <= cfg.profile.AccuracyFor(r.p_bar));
    }
    CHECK(r.l1 >= cfg.length_min);
    CHECK(r.l1 <= cfg.length_max);
  }
  for (std::size_t i = 0; i < ds.size(); i += 7) {
    CHECK(RelabelRecord(loaded, i).p_hat == ds.records[i].p_bar);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("unfillable quota reports the partial dataset") {
  DatasetConfig cfg;
  cfg.n_records = 3;
  cfg.quotas = {1, 1, 1};
  cfg.sigma_max = 0.0;  // labels are exactly 0 or 1
  cfg.profile = AccuracyProfile::Relaxed();
  cfg.threads = 1;
  try {
    GenerateDataset(cfg);
    FAIL("expected PartialDatasetError");
  } catch (const PartialDatasetError& e) {
    CHECK(e.partial().BucketCounts() == std::vector<std::size_t>{1, 0, 1});
  }
  cfg.quotas = {1, 1};
  CHECK_THROWS_AS(GenerateDataset(cfg), std::invalid_argument);
}

TEST_CASE("stratified split") {
  const Dataset ds = SyntheticDataset(34, 33, 33);
  const auto parts = Split(ds, {0.8, 0.1, 0.1}, 7);
  CHECK(parts[0].size() == 80);
  CHECK(parts[1].size() == 10);
  CHECK(parts[2].size() == 10);

  std::multiset<double> all;
  for (const auto& p : parts) {
    for (const auto& r : p.records) all.insert(r.rx);
  }
  CHECK(all.size() == 100);
  CHECK(std::set<double>(all.begin(), all.end()).size() == 100);

  const std::array<double, 3> ratios = {0.8, 0.1, 0.1};
  const auto full = ds.BucketCounts();
  for (int s = 0; s < 3; ++s) {
    const auto counts = parts[s].BucketCounts();
    for (std::size_t b = 0; b < 3; ++b) {
      CHECK(std::abs(static_cast<double>(counts[b]) -
                     ratios[s] * static_cast<double>(full[b])) <= 1.0);
    }
  }
  CHECK(Split(ds, {0.8, 0.1, 0.1}, 7)[1].records == parts[1].records);

  const auto odd = Split(SyntheticDataset(7, 13, 5), {0.6, 0.25, 0.15}, 1);
  CHECK(odd[0].size() + odd[1].size() + odd[2].size() == 25);
  CHECK(odd[0].size() == 15);

  CHECK_THROWS_AS(Split(SyntheticDataset(10, 0, 10), {0.8, 0.1, 0.1}, 1), std::invalid_argument);
  CHECK_THROWS_AS(Split(ds, {0.8, 0.3, 0.1}, 1), std::invalid_argument);
}

TEST_CASE("malformed csv is rejected") {
  const auto path = std::filesystem::temp_directory_path() / "dcpf_bad.csv";
  {
    std::ofstream out(path);
    out << "x,y\n1,2\n";
  }
  CHECK_THROWS(ReadDataset(path));
  {
    std::ofstream out(path);
    out << kDatasetCsvHeader << "\n1,2,3\n";
  }
  CHECK_THROWS(ReadDataset(path));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace dcpf
