#include "dcpf/scenarios.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dcpf {
namespace {

using json = nlohmann::json;

// Passage geometry at scale 1.
constexpr double kPassageSide = 30.0;
constexpr double kPassageGap = 6.5;
constexpr double kPassageObstacleX = 3.0;
constexpr double kPassageObstacleY = 5.0;

std::array<double, 5> Sqrt(const std::array<double, 5>& v) {
  std::array<double, 5> out;
  for (std::size_t i = 0; i < 5; ++i) out[i] = std::sqrt(v[i]);
  return out;
}

json PoseJson(const Pose2& p) { return {{"x", p.x}, {"y", p.y}, {"phi", p.phi}}; }
Pose2 PoseFrom(const json& j) { return {j.at("x"), j.at("y"), j.at("phi")}; }

}  // namespace

Scenario MakeNarrowPassage(double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("scale must be positive");
  Scenario s;
  s.name = "narrow_passage";
  const double side = kPassageSide * scale;
  const double mid = 0.5 * side;
  s.workspace = {0.0, 0.0, side, side};
  const double ox = kPassageObstacleX * scale;
  const double oy = kPassageObstacleY * scale;
  const double off = 0.5 * (kPassageGap * scale + oy);

  UncertainObstacle upper;
  upper.spec.mean = {mid, mid + off, 0.0, ox, oy};
  upper.spec.sigma = Sqrt(kPassageVariance1);
  UncertainObstacle lower;
  lower.spec.mean = {mid, mid - off, 0.0, ox, oy};
  lower.spec.sigma = Sqrt(kPassageVariance2);
  s.uncertain_obstacles = {upper, lower};

  s.start = Pose2(side - 4.0 * scale, mid, std::numbers::pi);
  s.goal.center = {4.0 * scale, mid};
  s.goal.radius = 2.0 * scale;
  s.p_max = 0.01;
  s.primitives.short_length = 1.0 * scale;
  s.primitives.long_length = 2.0 * scale;
  s.search.grid_xy = 0.5 * scale;
  s.Validate();
  return s;
}

Scenario MakeRandomMap(const RandomMapParams& params) {
  if (!(params.width > 0.0 && params.height > 0.0 && params.density >= 0.0)) {
    throw std::invalid_argument("invalid random map size or density");
  }
  if (!(params.side_min > 0.0 && params.side_min <= params.side_max)) {
    throw std::invalid_argument("invalid obstacle side bounds");
  }
  if (!(params.sigma_min >= 0.0 && params.sigma_min <= params.sigma_max)) {
    throw std::invalid_argument("invalid sigma bounds");
  }
  if (!(params.distance_min <= params.distance_max)) {
    throw std::invalid_argument("invalid start-goal distance band");
  }
  Scenario s;
  s.name = "random_map_" + std::to_string(params.seed);
  s.workspace = {0.0, 0.0, params.width, params.height};
  RngStream rng(params.seed, 0x3a9);
  const double margin = 0.5 * std::hypot(s.robot.width, s.robot.height) + 0.5;
  if (params.distance_min > std::hypot(params.width, params.height) - 2.0 * margin) {
    throw std::invalid_argument("workspace too small for the start-goal distance");
  }

  // Start and goal first, then obstacles that keep clear of both.
  bool placed = false;
  for (int attempt = 0; attempt < 100000 && !placed; ++attempt) {
    const Vec2 a{rng.Uniform(margin, params.width - margin),
                 rng.Uniform(margin, params.height - margin)};
    const Vec2 b{rng.Uniform(margin, params.width - margin),
                 rng.Uniform(margin, params.height - margin)};
    const double d = (b - a).norm();
    if (d < params.distance_min || d > params.distance_max) continue;
    s.start = Pose2(a.x, a.y, std::atan2(b.y - a.y, b.x - a.x));
    s.goal.center = b;
    placed = true;
  }
  if (!placed) throw std::runtime_error("could not place start and goal");
  s.goal.radius = 2.0;

  const auto count = static_cast<std::size_t>(
      std::lround(params.density * params.width * params.height / 1e4));
  const double keep_out = margin + 0.5 * std::hypot(params.side_max, params.side_max);
  while (s.uncertain_obstacles.size() < count) {
    UncertainObstacle o;
    const double x = rng.Uniform(0.0, params.width);
    const double y = rng.Uniform(0.0, params.height);
    const double phi = rng.Uniform(-std::numbers::pi, std::numbers::pi);
    const double l1 = rng.Uniform(params.side_min, params.side_max);
    const double l2 = rng.Uniform(params.side_min, params.side_max);
    for (double& v : o.spec.sigma) v = rng.Uniform(params.sigma_min, params.sigma_max);
    if ((Vec2{x, y} - s.start.position()).norm() < keep_out ||
        (Vec2{x, y} - s.goal.center).norm() < keep_out) {
      continue;
    }
    o.spec.mean = {x, y, Pose2(0, 0, phi).phi, l1, l2};
    s.uncertain_obstacles.push_back(o);
  }
  s.p_max = 1e-3;
  s.primitives.short_length = 1.0;
  s.primitives.long_length = 2.0;
  s.Validate();
  return s;
}

OvertakeParams OvertakeParams::Sample(std::uint64_t seed) {
  RngStream rng(seed, 0x0e7);
  OvertakeParams p;
  p.lead_gap = rng.Uniform(10.0, 14.0);
  p.lead_speed = rng.Uniform(2.5, 3.5);
  p.oncoming_start = rng.Uniform(60.0, 100.0);
  p.oncoming_speed = rng.Uniform(3.0, 5.0);
  return p;
}

Scenario MakeOvertake(const OvertakeParams& params) {
  Scenario s;
  s.name = "overtake";
  s.dynamic = true;
  const double half = params.lane_width;
  s.workspace = {0.0, -half, params.length, half};
  const double own = -0.5 * params.lane_width;
  s.start = Pose2(4.0, own, 0.0);

  UncertainObstacle lead;
  lead.spec.mean = {s.start.x + params.lead_gap, own, 0.0, 4.5, 1.8};
  lead.spec.sigma = params.sigma;
  lead.growth = params.growth;
  lead.trajectory = {
      {0.0, Pose2(lead.spec.mean[0], own, 0.0)},
      {params.horizon, Pose2(lead.spec.mean[0] + params.lead_speed * params.horizon, own, 0.0)}};

  UncertainObstacle oncoming;
  oncoming.spec.mean = {params.oncoming_start, -own, std::numbers::pi, 4.5, 1.8};
  oncoming.spec.sigma = params.sigma;
  oncoming.growth = params.growth;
  oncoming.trajectory = {
      {0.0, Pose2(params.oncoming_start, -own, std::numbers::pi)},
      {params.horizon, Pose2(params.oncoming_start - params.oncoming_speed * params.horizon, -own,
                             std::numbers::pi)}};
  s.uncertain_obstacles = {lead, oncoming};

  s.goal.center = {params.length - 4.0, own};
  s.goal.radius = 1.5;  // too tight to finish beside the lead car
  s.goal.heading = 0.0;
  s.goal.heading_tolerance = std::numbers::pi / 4;
  s.p_max = 0.01;
  s.primitives.max_steering = 0.5;
  s.primitives.short_length = 2.0;
  s.primitives.long_length = 5.0;
  s.primitives.short_duration = 1.0;
  s.primitives.long_duration = 1.0;
  s.search.node_budget = 50000;
  s.Validate();
  return s;
}

std::string_view ToString(OvertakeOutcome o) {
  switch (o) {
    case OvertakeOutcome::kBefore:
      return "before";
    case OvertakeOutcome::kAfter:
      return "after";
    case OvertakeOutcome::kNone:
      return "none";
  }
  return "none";
}

double MeetingTime(const Scenario& s) {
  if (s.uncertain_obstacles.size() < 2) throw std::invalid_argument("not an overtake scenario");
  const auto gap = [&](double t) {
    return PredictObstacle(s.uncertain_obstacles[1], t).spec.mean[0] -
           PredictObstacle(s.uncertain_obstacles[0], t).spec.mean[0];
  };
  double lo = 0.0;
  double hi = s.uncertain_obstacles[0].trajectory.empty()
                  ? 0.0
                  : s.uncertain_obstacles[0].trajectory.back().t;
  if (gap(lo) <= 0.0) return 0.0;
  if (gap(hi) > 0.0) return std::numeric_limits<double>::infinity();
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) > 0.0 ? lo : hi) = mid;
  }
  return hi;
}

OvertakeOutcome ClassifyOvertake(const Scenario& s, const PlanResult& r) {
  const UncertainObstacle& lead = s.uncertain_obstacles.at(0);
  const double lane_width = 0.5 * (s.workspace.max_y - s.workspace.min_y);
  const double lane = -0.5 * lane_width;
  const double clear = 0.5 * (s.robot.width + lead.spec.l1());
  std::size_t ahead = r.path.size();
  for (std::size_t i = 0; i < r.path.size(); ++i) {
    const double lead_x = PredictObstacle(lead, r.path[i].t).spec.mean[0];
    if (r.path[i].pose.x - lead_x > clear) {
      ahead = i;
      break;
    }
  }
  if (ahead == r.path.size()) return OvertakeOutcome::kNone;
  const double tol = 0.25 * lane_width;
  for (std::size_t i = ahead; i < r.path.size(); ++i) {
    if (std::abs(r.path[i].pose.y - lane) <= tol) {
      return r.path[i].t <= MeetingTime(s) ? OvertakeOutcome::kBefore : OvertakeOutcome::kAfter;
    }
  }
  return OvertakeOutcome::kAfter;
}

std::string ScenarioToJson(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["workspace"] = {{"min_x", s.workspace.min_x},
                    {"min_y", s.workspace.min_y},
                    {"max_x", s.workspace.max_x},
                    {"max_y", s.workspace.max_y}};
  json statics = json::array();
  for (const ConvexPolygon& p : s.static_obstacles) {
    json ring = json::array();
    for (const Vec2& v : p.vertices()) ring.push_back({v.x, v.y});
    statics.push_back(ring);
  }
  j["static_obstacles"] = statics;
  json uncertain = json::array();
  for (const UncertainObstacle& o : s.uncertain_obstacles) {
    json w = json::array();
    for (const Waypoint& p : o.trajectory) {
      w.push_back({{"t", p.t}, {"x", p.pose.x}, {"y", p.pose.y}, {"phi", p.pose.phi}});
    }
    uncertain.push_back(
        {{"mean", o.spec.mean}, {"sigma", o.spec.sigma}, {"waypoints", w}, {"growth", o.growth}});
  }
  j["uncertain_obstacles"] = uncertain;
  j["robot"] = {
      {"width", s.robot.width}, {"height", s.robot.height}, {"wheelbase", s.robot.wheelbase}};
  j["start"] = PoseJson(s.start);
  j["goal"] = {{"x", s.goal.center.x},
               {"y", s.goal.center.y},
               {"radius", s.goal.radius},
               {"heading", s.goal.heading ? json(*s.goal.heading) : json(nullptr)},
               {"heading_tolerance", s.goal.heading_tolerance}};
  j["p_max"] = s.p_max;
  j["dynamic"] = s.dynamic;
  const PrimitiveParams& m = s.primitives;
  j["primitives"] = {{"max_steering", m.max_steering},     {"short_length", m.short_length},
                     {"long_length", m.long_length},       {"short_duration", m.short_duration},
                     {"long_duration", m.long_duration},   {"sweep_samples", m.sweep_samples}};
  const SearchParams& q = s.search;
  j["search"] = {{"grid_xy", q.grid_xy},
                 {"heading_bins", q.heading_bins},
                 {"time_bin", q.time_bin},
                 {"node_budget", q.node_budget},
                 {"timeout_seconds", q.timeout_seconds}};
  return j.dump(2);
}

Scenario ScenarioFromJson(std::string_view text) {
  Scenario s;
  try {
    const json j = json::parse(text);
    s.name = j.value("name", std::string("scenario"));
    const json& w = j.at("workspace");
    s.workspace = {w.at("min_x"), w.at("min_y"), w.at("max_x"), w.at("max_y")};
    for (const json& ring : j.at("static_obstacles")) {
      std::vector<Vec2> v;
      for (const json& p : ring) v.push_back({p.at(0), p.at(1)});
      s.static_obstacles.emplace_back(std::move(v));
    }
    for (const json& o : j.at("uncertain_obstacles")) {
      UncertainObstacle u;
      u.spec.mean = o.at("mean").get<std::array<double, 5>>();
      u.spec.sigma = o.at("sigma").get<std::array<double, 5>>();
      if (o.contains("growth")) u.growth = o.at("growth").get<std::array<double, 5>>();
      if (o.contains("waypoints")) {
        for (const json& p : o.at("waypoints")) {
          u.trajectory.push_back({p.at("t"), Pose2(p.at("x"), p.at("y"), p.at("phi"))});
        }
      }
      s.uncertain_obstacles.push_back(std::move(u));
    }
    if (j.contains("robot")) {
      const json& r = j.at("robot");
      s.robot = {r.at("width"), r.at("height"), r.at("wheelbase")};
    }
    s.start = PoseFrom(j.at("start"));
    const json& g = j.at("goal");
    s.goal.center = {g.at("x"), g.at("y")};
    s.goal.radius = g.at("radius");
    if (g.contains("heading") && !g.at("heading").is_null()) {
      s.goal.heading = g.at("heading").get<double>();
    }
    s.goal.heading_tolerance = g.value("heading_tolerance", std::numbers::pi);
    s.p_max = j.at("p_max");
    s.dynamic = j.value("dynamic", false);
    if (j.contains("primitives")) {
      const json& m = j.at("primitives");
      s.primitives = {m.at("max_steering"),   m.at("short_length"),  m.at("long_length"),
                      m.at("short_duration"), m.at("long_duration"), m.at("sweep_samples")};
    }
    if (j.contains("search")) {
      const json& q = j.at("search");
      s.search = {q.at("grid_xy"), q.at("heading_bins"), q.at("time_bin"), q.at("node_budget"),
                  q.at("timeout_seconds")};
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed scenario: ") + e.what());
  }
  s.Validate();
  return s;
}

void SaveScenario(const Scenario& s, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << ScenarioToJson(s) << '\n';
}

Scenario LoadScenario(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ScenarioFromJson(ss.str());
}

}  // namespace dcpf
