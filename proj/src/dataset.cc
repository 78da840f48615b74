#include "dcpf/dataset.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace dcpf {
namespace {

constexpr int kEllipseVertices = 32;
constexpr std::uint64_t kLabelStream = 0x4c4142454cULL;
constexpr int kDatasetFormatVersion = 1;

// Ring for the positional-uncertainty ellipse; degenerates to a segment or a
// point when a semi-axis is zero.
std::vector<Vec2> EllipseRing(double ax, double ay) {
  if (ax > 0.0 && ay > 0.0) {
    const auto e = EllipsePolygon(ax, ay, kEllipseVertices);
    return {e.vertices().begin(), e.vertices().end()};
  }
  if (ax > 0.0) return {{-ax, 0.0}, {ax, 0.0}};
  if (ay > 0.0) return {{0.0, -ay}, {0.0, ay}};
  return {{0.0, 0.0}};
}

unsigned ResolveThreads(unsigned requested) {
  if (requested != 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

struct Attempt {
  DatasetRecord record;
  std::size_t bucket = 0;
};

Attempt RunAttempt(const DatasetConfig& cfg, std::uint64_t id) {
  RngStream rng(cfg.seed, id);
  const ObstacleSpec obstacle = DrawObstacle(cfg, rng);
  const double heading = NormalizeAngle(rng.Uniform(-std::numbers::pi, std::numbers::pi));
  const HeuristicShape shape = BuildHeuristicShape(cfg.robot, obstacle, rng, heading);
  const Pose2 pose = SampleRobotConfig(shape, rng);

  Attempt a;
  a.record.rx = pose.x;
  a.record.ry = pose.y;
  a.record.rphi = pose.phi;
  a.record.l1 = obstacle.l1();
  a.record.l2 = obstacle.l2();
  a.record.sigma = obstacle.sigma;

  RngStream label_rng = RngStream(cfg.seed, id).Split(kLabelStream);
  const CpEstimate est = EstimateCpAdaptive(a.record.ToQuery(cfg.robot), cfg.profile, label_rng);
  a.record.p_bar = est.p_hat;
  a.record.ci_half_width = est.ci_half_width;
  a.record.n_samples = est.n;
  a.bucket = cfg.profile.BucketOf(est.p_hat);
  return a;
}

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json ProfileToJson(const AccuracyProfile& p) {
  return {{"boundaries", p.boundaries},
          {"accuracies", p.accuracies},
          {"batch_size", p.batch_size},
          {"max_samples", p.max_samples}};
}

AccuracyProfile ProfileFromJson(const nlohmann::json& j) {
  AccuracyProfile p;
  p.boundaries = j.at("boundaries").get<std::vector<double>>();
  p.accuracies = j.at("accuracies").get<std::vector<double>>();
  p.batch_size = j.at("batch_size").get<std::uint64_t>();
  p.max_samples = j.at("max_samples").get<std::uint64_t>();
  p.Validate();
  return p;
}

std::filesystem::path MetaPath(const std::filesystem::path& csv) {
  return std::filesystem::path(csv.string() + ".meta.json");
}

}  // namespace

CpQuery DatasetRecord::ToQuery(const RobotSpec& robot) const {
  CpQuery q;
  q.robot_pose = Pose2(rx, ry, rphi);
  q.robot = robot;
  q.obstacle = Obstacle();
  return q;
}

ObstacleSpec DatasetRecord::Obstacle() const {
  ObstacleSpec o;
  o.mean = {0.0, 0.0, 0.0, l1, l2};
  o.sigma = sigma;
  return o;
}

std::vector<std::size_t> DatasetConfig::ResolvedQuotas() const {
  if (!quotas.empty()) return quotas;
  const std::size_t k = profile.num_buckets();
  std::vector<std::size_t> q(k, n_records / k);
  for (std::size_t i = 0; i < n_records % k; ++i) ++q[i];
  return q;
}

void DatasetConfig::Validate() const {
  robot.Validate();
  profile.Validate();
  if (n_records == 0) throw std::invalid_argument("dataset needs at least one record");
  if (!quotas.empty()) {
    if (quotas.size() != profile.num_buckets()) {
      throw std::invalid_argument("one quota per accuracy bucket required");
    }
    if (std::accumulate(quotas.begin(), quotas.end(), std::size_t{0}) != n_records) {
      throw std::invalid_argument("bucket quotas must sum to n_records");
    }
  }
  if (!(sigma_max >= 0.0)) throw std::invalid_argument("sigma_max must be >= 0");
  if (!(length_min > 0.0 && length_min <= length_max)) {
    throw std::invalid_argument("obstacle length bounds must satisfy 0 < min <= max");
  }
}

std::vector<std::size_t> Dataset::BucketCounts() const {
  std::vector<std::size_t> counts(profile.num_buckets(), 0);
  for (const auto& r : records) ++counts[profile.BucketOf(r.p_bar)];
  return counts;
}

HeuristicShape BuildHeuristicShape(const RobotSpec& robot, const ObstacleSpec& obstacle,
                                   RngStream& rng, std::optional<double> robot_heading) {
  robot.Validate();
  obstacle.Validate();
  const auto& s = obstacle.sigma;
  const auto robot_rect = RectPolygon(robot.width, robot.height,
                                      Pose2(0.0, 0.0, robot_heading.value_or(0.0)));
  const ConvexPolygon kernel = MinkowskiSum(robot_rect, EllipseRing(s[0] + s[3], s[1] + s[4]));

  const double sigma_phi = s[2];
  const double phi_m = sigma_phi > 0.0 ? rng.Uniform(sigma_phi, 3.1 * sigma_phi) : 0.0;
  std::vector<Vec2> points;
  for (double r : {-phi_m, 0.0, phi_m}) {
    const auto inflated =
        MinkowskiSum(RectPolygon(obstacle.l1(), obstacle.l2(), Pose2(0.0, 0.0, r)), kernel);
    points.insert(points.end(), inflated.vertices().begin(), inflated.vertices().end());
    if (phi_m == 0.0) break;
  }
  return {ConvexHull(points), robot_heading};
}

Vec2 BoundaryPoint(const ConvexPolygon& boundary, double u) {
  const double target = std::clamp(u, 0.0, 1.0) * boundary.Perimeter();
  double walked = 0.0;
  const auto v = boundary.vertices();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2& a = v[i];
    const Vec2& b = v[(i + 1) % v.size()];
    const double len = (b - a).norm();
    if (walked + len >= target || i + 1 == v.size()) {
      const double t = len > 0.0 ? std::clamp((target - walked) / len, 0.0, 1.0) : 0.0;
      return a + (b - a) * t;
    }
    walked += len;
  }
  return v[0];
}

Pose2 SampleRobotConfig(const HeuristicShape& shape, RngStream& rng, const RobotSampling& mix) {
  Vec2 p;
  if (rng.Uniform() < mix.boundary_fraction) {
    const Vec2 b = BoundaryPoint(shape.boundary, rng.Uniform());
    p = b * rng.Uniform(mix.scale_min, mix.scale_max);
  } else {
    const auto box = shape.boundary.Bounds();
    const double cx = 0.5 * (box[0] + box[2]);
    const double cy = 0.5 * (box[1] + box[3]);
    const double hx = 0.5 * (box[2] - box[0]) * mix.background_inflation;
    const double hy = 0.5 * (box[3] - box[1]) * mix.background_inflation;
    p = {rng.Uniform(cx - hx, cx + hx), rng.Uniform(cy - hy, cy + hy)};
  }
  const double heading =
      shape.robot_heading ? *shape.robot_heading
                          : NormalizeAngle(rng.Uniform(-std::numbers::pi, std::numbers::pi));
  return {p.x, p.y, heading};
}

ObstacleSpec DrawObstacle(const DatasetConfig& cfg, RngStream& rng) {
  ObstacleSpec o;
  o.mean = {0.0, 0.0, 0.0, rng.Uniform(cfg.length_min, cfg.length_max),
            rng.Uniform(cfg.length_min, cfg.length_max)};
  for (double& s : o.sigma) s = rng.Uniform(0.0, cfg.sigma_max);
  return o;
}

Dataset GenerateDataset(const DatasetConfig& cfg) {
  cfg.Validate();
  const std::vector<std::size_t> quotas = cfg.ResolvedQuotas();
  const unsigned threads = ResolveThreads(cfg.threads);
  const std::uint64_t max_attempts = 100 * static_cast<std::uint64_t>(cfg.n_records);
  const std::uint64_t block = std::max<std::uint64_t>(64, 16ULL * threads);

  Dataset ds;
  ds.robot = cfg.robot;
  ds.profile = cfg.profile;
  ds.seed = cfg.seed;
  std::vector<std::size_t> filled(quotas.size(), 0);
  auto done = [&] {
    for (std::size_t b = 0; b < quotas.size(); ++b) {
      if (filled[b] < quotas[b]) return false;
    }
    return true;
  };

  std::vector<Attempt> results(block);
  std::uint64_t next_id = 0;
  while (!done()) {
    if (next_id >= max_attempts) {
      throw PartialDatasetError("a bucket quota could not be filled within the attempt limit",
                                std::move(ds));
    }
    const std::uint64_t count = std::min(block, max_attempts - next_id);
    std::atomic<std::uint64_t> cursor{0};
    auto work = [&] {
      for (std::uint64_t i = cursor++; i < count; i = cursor++) {
        results[i] = RunAttempt(cfg, next_id + i);
      }
    };
    if (threads == 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    }
    // Slots are claimed in attempt order after labelling; overflow is dropped.
    for (std::uint64_t i = 0; i < count && !done(); ++i) {
      const Attempt& a = results[i];
      if (filled[a.bucket] < quotas[a.bucket]) {
        ++filled[a.bucket];
        ds.records.push_back(a.record);
        ds.record_ids.push_back(next_id + i);
      }
    }
    next_id += count;
  }
  return ds;
}

CpEstimate RelabelRecord(const Dataset& ds, std::size_t index) {
  RngStream label_rng = RngStream(ds.seed, ds.record_ids.at(index)).Split(kLabelStream);
  return EstimateCpAdaptive(ds.records.at(index).ToQuery(ds.robot), ds.profile, label_rng);
}

std::array<Dataset, 3> Split(const Dataset& ds, const std::array<double, 3>& ratios,
                             std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(ratios.begin(), ratios.end()) < 0.0) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  const std::size_t k = ds.profile.num_buckets();
  if (k > 6) throw std::invalid_argument("too many buckets for stratified split");
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    members[ds.profile.BucketOf(ds.records[i].p_bar)].push_back(i);
  }
  for (const auto& m : members) {
    if (m.empty()) throw std::invalid_argument("cannot stratify: a bucket is empty");
  }

  // Split totals by largest remainder.
  const double n = static_cast<double>(ds.records.size());
  std::array<std::size_t, 3> target{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double ideal = n * ratios[s];
    target[s] = static_cast<std::size_t>(std::floor(ideal + 1e-9));
    frac[s] = ideal - static_cast<double>(target[s]);
    assigned += target[s];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < ds.records.size(); ++i, ++assigned) ++target[order[i % 3]];

  // Round every bucket x split cell to floor or ceil so that rows and
  // columns both add up; tables this small are searched exhaustively.
  std::vector<std::array<std::size_t, 3>> lo(k);
  std::vector<std::array<bool, 3>> fractional(k);
  std::vector<int> free_cells;
  for (std::size_t b = 0; b < k; ++b) {
    for (int s = 0; s < 3; ++s) {
      const double ideal = static_cast<double>(members[b].size()) * ratios[s];
      lo[b][s] = static_cast<std::size_t>(std::floor(ideal + 1e-9));
      fractional[b][s] = ideal - static_cast<double>(lo[b][s]) > 1e-9;
      if (fractional[b][s]) free_cells.push_back(static_cast<int>(b * 3 + s));
    }
  }
  std::vector<std::array<std::size_t, 3>> alloc;
  for (std::uint64_t mask = 0; mask < (1ULL << free_cells.size()); ++mask) {
    std::vector<std::array<std::size_t, 3>> trial = lo;
    for (std::size_t c = 0; c < free_cells.size(); ++c) {
      if (mask & (1ULL << c)) ++trial[free_cells[c] / 3][free_cells[c] % 3];
    }
    bool ok = true;
    for (std::size_t b = 0; b < k && ok; ++b) {
      ok = trial[b][0] + trial[b][1] + trial[b][2] == members[b].size();
    }
    for (int s = 0; s < 3 && ok; ++s) {
      std::size_t col = 0;
      for (std::size_t b = 0; b < k; ++b) col += trial[b][s];
      ok = col == target[s];
    }
    if (ok) {
      alloc = std::move(trial);
      break;
    }
  }
  if (alloc.empty()) throw std::logic_error("no consistent stratified rounding found");

  RngStream rng(seed, 0x53504c4954ULL);
  std::array<std::vector<std::size_t>, 3> picks;
  for (std::size_t b = 0; b < k; ++b) {
    std::vector<std::size_t> idx = members[b];
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t c = 0; c < alloc[b][s]; ++c) picks[s].push_back(idx[pos++]);
    }
  }
  std::array<Dataset, 3> out;
  for (int s = 0; s < 3; ++s) {
    std::sort(picks[s].begin(), picks[s].end());
    out[s].robot = ds.robot;
    out[s].profile = ds.profile;
    out[s].seed = ds.seed;
    for (std::size_t i : picks[s]) {
      out[s].records.push_back(ds.records[i]);
      if (i < ds.record_ids.size()) out[s].record_ids.push_back(ds.record_ids[i]);
    }
  }
  return out;
}

void WriteDataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream csv(path, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + path.string());
  csv << kDatasetCsvHeader << '\n';
  for (const auto& r : ds.records) {
    csv << FormatDouble(r.rx) << ',' << FormatDouble(r.ry) << ',' << FormatDouble(r.rphi) << ','
        << FormatDouble(r.l1) << ',' << FormatDouble(r.l2);
    for (double s : r.sigma) csv << ',' << FormatDouble(s);
    csv << ',' << FormatDouble(r.p_bar) << ',' << FormatDouble(r.ci_half_width) << ','
        << r.n_samples << '\n';
  }
  if (!csv) throw std::runtime_error("failed writing " + path.string());

  nlohmann::json meta = {
      {"format_version", kDatasetFormatVersion},
      {"robot", {{"width", ds.robot.width}, {"height", ds.robot.height},
                 {"wheelbase", ds.robot.wheelbase}}},
      {"profile", ProfileToJson(ds.profile)},
      {"seed", ds.seed},
      {"record_ids", ds.record_ids},
  };
  std::ofstream meta_out(MetaPath(path), std::ios::binary);
  if (!meta_out) throw std::runtime_error("cannot write dataset metadata");
  meta_out << meta.dump(1) << '\n';
}

Dataset ReadDataset(const std::filesystem::path& path) {
  std::ifstream csv(path, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(csv, line) || line != kDatasetCsvHeader) {
    throw std::runtime_error("unexpected dataset header in " + path.string());
  }
  Dataset ds;
  std::size_t line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::array<double, 12> v{};
    const char* cur = line.c_str();
    char* end = nullptr;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = std::strtod(cur, &end);
      if (end == cur || *end != ',') {
        throw std::runtime_error("malformed dataset row " + std::to_string(line_no));
      }
      cur = end + 1;
    }
    const unsigned long long n = std::strtoull(cur, &end, 10);
    if (end == cur) throw std::runtime_error("malformed dataset row " + std::to_string(line_no));
    DatasetRecord r;
    r.rx = v[0];
    r.ry = v[1];
    r.rphi = v[2];
    r.l1 = v[3];
    r.l2 = v[4];
    for (std::size_t d = 0; d < 5; ++d) r.sigma[d] = v[5 + d];
    r.p_bar = v[10];
    r.ci_half_width = v[11];
    r.n_samples = n;
    ds.records.push_back(r);
  }

  std::ifstream meta_in(MetaPath(path));
  if (meta_in) {
    const nlohmann::json meta = nlohmann::json::parse(meta_in);
    if (meta.at("format_version").get<int>() != kDatasetFormatVersion) {
      throw std::runtime_error("unsupported dataset metadata version");
    }
    const auto& robot = meta.at("robot");
    ds.robot = {robot.at("width").get<double>(), robot.at("height").get<double>(),
                robot.at("wheelbase").get<double>()};
    ds.profile = ProfileFromJson(meta.at("profile"));
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.record_ids = meta.at("record_ids").get<std::vector<std::uint64_t>>();
  }
  return ds;
}

}  // namespace dcpf
