#include "dcpf/planner.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <stdexcept>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

namespace dcpf {
namespace {

bool Deterministic(const ObstacleSpec& o) {
  return std::all_of(o.sigma.begin(), o.sigma.end(), [](double s) { return s == 0.0; });
}

bool RobotHits(const Pose2& pose, const RobotSpec& robot, const ObstacleSpec& o) {
  const auto r = RectCorners(robot.width, robot.height, pose);
  const auto b = RectCorners(o.l1(), o.l2(), o.pose());
  return Intersects(r, b);
}

struct Key {
  std::int64_t x, y, h, t;
  bool operator==(const Key&) const = default;
};

struct KeyHash {
  std::size_t operator()(const Key& k) const {
    std::uint64_t h = MixSeed(static_cast<std::uint64_t>(k.x));
    h = MixSeed(h ^ static_cast<std::uint64_t>(k.y));
    h = MixSeed(h ^ static_cast<std::uint64_t>(k.h));
    return MixSeed(h ^ static_cast<std::uint64_t>(k.t));
  }
};

Key KeyOf(const PlanState& st, const Scenario& s) {
  const SearchParams& p = s.search;
  const double bin = 2.0 * std::numbers::pi / p.heading_bins;
  auto h = static_cast<std::int64_t>(std::floor(st.pose.phi / bin + 0.5));
  h = ((h % p.heading_bins) + p.heading_bins) % p.heading_bins;
  return {static_cast<std::int64_t>(std::floor((st.pose.x - s.workspace.min_x) / p.grid_xy)),
          static_cast<std::int64_t>(std::floor((st.pose.y - s.workspace.min_y) / p.grid_xy)), h,
          s.dynamic ? static_cast<std::int64_t>(std::floor(st.t / p.time_bin + 1e-9)) : 0};
}

}  // namespace

void PrimitiveParams::Validate() const {
  if (!(max_steering >= 0.0 && max_steering < std::numbers::pi / 2)) {
    throw std::invalid_argument("max steering must be in [0, pi/2)");
  }
  if (!(short_length > 0.0 && long_length > 0.0)) {
    throw std::invalid_argument("primitive lengths must be positive");
  }
  if (!(short_duration > 0.0 && long_duration > 0.0)) {
    throw std::invalid_argument("primitive durations must be positive");
  }
  if (sweep_samples < 0) throw std::invalid_argument("sweep samples must be >= 0");
}

Pose2 ArcPose(double kappa, double s) {
  if (std::abs(kappa) < 1e-12) return {s, 0.0, 0.0};
  const double th = kappa * s;
  return {std::sin(th) / kappa, (1.0 - std::cos(th)) / kappa, th};
}

std::vector<MotionPrimitive> MotionPrimitives(const RobotSpec& robot,
                                              const PrimitiveParams& params) {
  robot.Validate();
  params.Validate();
  std::vector<MotionPrimitive> out;
  const double lengths[2] = {params.short_length, params.long_length};
  const double durations[2] = {params.short_duration, params.long_duration};
  for (int l = 0; l < 2; ++l) {
    for (int k = 0; k < 5; ++k) {
      MotionPrimitive m;
      m.id = static_cast<int>(out.size());
      m.steering = params.max_steering * (k - 2) / 2.0;
      m.arc_length = lengths[l];
      m.duration = durations[l];
      const double kappa = std::tan(m.steering) / robot.wheelbase;
      const int n = params.sweep_samples + 1;
      for (int i = 1; i <= n; ++i) m.sweep.push_back(ArcPose(kappa, m.arc_length * i / n));
      out.push_back(std::move(m));
    }
  }
  return out;
}

void UncertainObstacle::Validate() const {
  spec.Validate();
  for (double g : growth) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw std::invalid_argument("growth must be >= 0");
  }
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    if (!(trajectory[i].t > trajectory[i - 1].t)) {
      throw std::invalid_argument("waypoint times must be strictly increasing");
    }
  }
}

Prediction PredictObstacle(const UncertainObstacle& o, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("prediction time must be >= 0");
  Prediction p;
  p.spec = o.spec;
  for (std::size_t d = 0; d < 5; ++d) {
    const double s = o.spec.sigma[d];
    if (o.growth[d] > 0.0) p.spec.sigma[d] = std::sqrt(s * s + t * o.growth[d]);
  }
  const auto& w = o.trajectory;
  if (w.empty()) return p;
  Pose2 mean;
  if (t <= w.front().t) {
    mean = w.front().pose;
  } else if (t >= w.back().t) {
    mean = w.back().pose;
    p.beyond_trajectory = t > w.back().t;
  } else {
    const auto hi = std::upper_bound(w.begin(), w.end(), t,
                                     [](double v, const Waypoint& x) { return v < x.t; });
    const Waypoint& b = *hi;
    const Waypoint& a = *(hi - 1);
    const double u = (t - a.t) / (b.t - a.t);
    const double dphi = NormalizeAngle(b.pose.phi - a.pose.phi);
    mean = Pose2(a.pose.x + u * (b.pose.x - a.pose.x), a.pose.y + u * (b.pose.y - a.pose.y),
                 a.pose.phi + u * dphi);
  }
  p.spec.mean[0] = mean.x;
  p.spec.mean[1] = mean.y;
  p.spec.mean[2] = mean.phi;
  return p;
}

double CombinedCp(std::span<const double> per_obstacle) {
  double keep = 1.0;
  for (double p : per_obstacle) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probability outside [0, 1]");
    keep *= 1.0 - p;
  }
  return 1.0 - keep;
}

bool GoalRegion::Contains(const Pose2& p) const {
  if ((p.position() - center).norm() > radius) return false;
  if (!heading) return true;
  return std::abs(NormalizeAngle(p.phi - *heading)) <= heading_tolerance;
}

void Scenario::Validate() const {
  robot.Validate();
  primitives.Validate();
  if (!(workspace.max_x > workspace.min_x && workspace.max_y > workspace.min_y)) {
    throw std::invalid_argument("empty workspace");
  }
  if (!(p_max > 0.0 && p_max < 1.0)) throw std::invalid_argument("p_max must be in (0, 1)");
  if (!(goal.radius > 0.0)) throw std::invalid_argument("goal radius must be positive");
  if (!(search.grid_xy > 0.0 && search.heading_bins > 0 && search.time_bin > 0.0)) {
    throw std::invalid_argument("invalid search discretisation");
  }
  for (const auto& o : uncertain_obstacles) o.Validate();
  if (!FootprintFree(start, *this)) throw std::invalid_argument("start is not collision free");
}

bool MayCollide(const Pose2& robot_pose, const RobotSpec& robot, const ObstacleSpec& o) {
  const double k = kRelevanceSigmas;
  const double robot_r = 0.5 * std::hypot(robot.width, robot.height);
  const double obs_r = 0.5 * std::hypot(o.l1() + k * o.sigma[3], o.l2() + k * o.sigma[4]);
  const double drift = k * std::hypot(o.sigma[0], o.sigma[1]);
  const double d = std::hypot(robot_pose.x - o.mean[0], robot_pose.y - o.mean[1]);
  return d <= robot_r + obs_r + drift;
}

bool FootprintFree(const Pose2& pose, const Scenario& s) {
  const auto corners = RectCorners(s.robot.width, s.robot.height, pose);
  for (const Vec2& c : corners) {
    if (c.x < s.workspace.min_x || c.x > s.workspace.max_x || c.y < s.workspace.min_y ||
        c.y > s.workspace.max_y) {
      return false;
    }
  }
  for (const ConvexPolygon& p : s.static_obstacles) {
    if (Intersects(corners, p.vertices())) return false;
  }
  return true;
}

std::vector<CpChecker::Verdict> CpChecker::Check(std::span<const Item> items, const Scenario& s) {
  std::vector<Verdict> out(items.size());
  std::vector<std::size_t> pending;
  std::vector<std::vector<ObstacleSpec>> relevant;
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::vector<ObstacleSpec> rel;
    bool hit = false;
    for (const UncertainObstacle& o : s.uncertain_obstacles) {
      const ObstacleSpec spec = PredictObstacle(o, items[i].t).spec;
      if (Deterministic(spec)) {
        hit = hit || RobotHits(items[i].pose, s.robot, spec);
      } else if (MayCollide(items[i].pose, s.robot, spec)) {
        rel.push_back(spec);
      }
    }
    if (hit) {
      out[i] = {false, 1.0};
    } else if (rel.empty()) {
      out[i] = {true, 0.0};
    } else {
      pending.push_back(i);
      relevant.push_back(std::move(rel));
    }
  }
  if (pending.empty()) return out;
  std::vector<Item> sub;
  sub.reserve(pending.size());
  for (std::size_t i : pending) sub.push_back(items[i]);
  const std::vector<Verdict> v = CheckRelevant(sub, relevant, s);
  for (std::size_t j = 0; j < pending.size(); ++j) out[pending[j]] = v[j];
  return out;
}

DcpfChecker::DcpfChecker(std::shared_ptr<const EnsembleModel> model, EnsembleMode mode)
    : model_(std::move(model)), mode_(mode) {
  if (!model_) throw std::invalid_argument("DCPF checker needs a model");
  model_->Validate(mode_);
}

std::vector<CpChecker::Verdict> DcpfChecker::CheckRelevant(
    std::span<const Item> items, const std::vector<std::vector<ObstacleSpec>>& relevant,
    const Scenario& s) {
  std::vector<FieldInput> inputs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (const ObstacleSpec& o : relevant[i]) {
      inputs.push_back(FieldInput::FromQuery(CpQuery::FromWorld(items[i].pose, s.robot, o)));
    }
  }
  queries_ += inputs.size();
  const std::vector<double> p = model_->PredictBatch(inputs, mode_);
  std::vector<Verdict> out(items.size());
  std::size_t at = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::size_t n = relevant[i].size();
    const double cp = CombinedCp(std::span<const double>(p).subspan(at, n));
    at += n;
    out[i] = {cp <= s.p_max, cp};
  }
  return out;
}

namespace {

JointSampler SamplerFor(const Pose2& pose, const std::vector<ObstacleSpec>& obstacles,
                        const RobotSpec& robot) {
  std::vector<CpQuery> q;
  q.reserve(obstacles.size());
  for (const ObstacleSpec& o : obstacles) q.push_back(CpQuery::FromWorld(pose, robot, o));
  return JointSampler(q);
}

}  // namespace

ZTestChecker::ZTestChecker(std::uint64_t max_samples, std::uint64_t seed)
    : max_samples_(max_samples), seed_(seed), rng_(seed, 0x2e57) {
  if (max_samples == 0) throw std::invalid_argument("sample cap must be positive");
}

std::vector<CpChecker::Verdict> ZTestChecker::CheckRelevant(
    std::span<const Item> items, const std::vector<std::vector<ObstacleSpec>>& relevant,
    const Scenario& s) {
  std::vector<Verdict> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const SafetyDecision d =
        ZTestCheck(SamplerFor(items[i].pose, relevant[i], s.robot), s.p_max, max_samples_, rng_);
    queries_ += d.samples_used;
    out[i] = {d.safe(), d.p_hat};
  }
  return out;
}

SprtChecker::SprtChecker(std::uint64_t max_samples, std::uint64_t seed, SprtParams params)
    : max_samples_(max_samples), seed_(seed), params_(params), rng_(seed, 0x5b27) {
  if (max_samples == 0) throw std::invalid_argument("sample cap must be positive");
}

std::vector<CpChecker::Verdict> SprtChecker::CheckRelevant(
    std::span<const Item> items, const std::vector<std::vector<ObstacleSpec>>& relevant,
    const Scenario& s) {
  std::vector<Verdict> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const SafetyDecision d = SprtCheck(SamplerFor(items[i].pose, relevant[i], s.robot), s.p_max,
                                       max_samples_, params_, rng_);
    queries_ += d.samples_used;
    out[i] = {d.safe(), d.p_hat};
  }
  return out;
}

bool StateSafe(const PlanState& state, const MotionPrimitive* via, const Pose2& from,
               const Scenario& s, CpChecker& checker) {
  if (via) {
    for (const Pose2& local : via->sweep) {
      if (!FootprintFree(from.Compose(local), s)) return false;
    }
  }
  if (!FootprintFree(state.pose, s)) return false;
  const CpChecker::Item item{state.pose, state.t};
  return checker.Check(std::span<const CpChecker::Item>(&item, 1), s)[0].safe;
}

PlanResult HybridAStar(const Scenario& s, CpChecker& checker) {
  s.Validate();
  const auto started = std::chrono::steady_clock::now();
  const std::uint64_t queries_before = checker.queries();
  checker.Reset();
  PlanResult r;
  auto finish = [&]() {
    r.checker_queries = checker.queries() - queries_before;
    r.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return r;
  };

  const std::vector<MotionPrimitive> prims = MotionPrimitives(s.robot, s.primitives);
  double v_max = 0.0;
  for (const auto& m : prims) v_max = std::max(v_max, m.arc_length / m.duration);
  auto heuristic = [&](const Pose2& p) {
    const double d = std::max(0.0, (p.position() - s.goal.center).norm() - s.goal.radius);
    return s.dynamic ? d / v_max : d;
  };

  std::vector<PlanState> nodes;
  PlanState start;
  start.pose = s.start;
  const CpChecker::Item start_item{s.start, 0.0};
  const auto sv = checker.Check(std::span<const CpChecker::Item>(&start_item, 1), s)[0];
  if (!sv.safe) {
    r.start_unsafe = true;
    return finish();
  }
  start.cp = sv.cp;
  nodes.push_back(start);

  // (f, h, insertion order, node)
  using Entry = std::tuple<double, double, std::uint64_t, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> open;
  std::uint64_t order = 0;
  open.emplace(heuristic(start.pose), heuristic(start.pose), order++, 0);
  std::unordered_set<Key, KeyHash> closed;
  std::unordered_map<Key, double, KeyHash> best_g;
  best_g[KeyOf(start, s)] = 0.0;

  std::vector<PlanState> cand;
  std::vector<CpChecker::Item> items;
  while (!open.empty()) {
    const int idx = std::get<3>(open.top());
    open.pop();
    const PlanState cur = nodes[idx];
    const Key key = KeyOf(cur, s);
    if (!closed.insert(key).second) continue;
    if (s.goal.Contains(cur.pose)) {
      for (int i = idx; i >= 0; i = nodes[i].parent) r.path.push_back(nodes[i]);
      std::reverse(r.path.begin(), r.path.end());
      r.found = true;
      r.cost = cur.g_cost;
      return finish();
    }
    if (r.expanded >= s.search.node_budget) {
      r.budget_exhausted = true;
      return finish();
    }
    if (s.search.timeout_seconds > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() >
            s.search.timeout_seconds) {
      r.timed_out = true;
      return finish();
    }
    ++r.expanded;

    cand.clear();
    items.clear();
    for (const MotionPrimitive& m : prims) {
      PlanState next;
      next.pose = cur.pose.Compose(m.end());
      next.t = s.dynamic ? cur.t + m.duration : 0.0;
      next.g_cost = cur.g_cost + (s.dynamic ? m.duration : m.arc_length);
      next.parent = idx;
      next.primitive_id = m.id;
      const Key k = KeyOf(next, s);
      if (closed.contains(k)) continue;
      const auto it = best_g.find(k);
      if (it != best_g.end() && it->second <= next.g_cost) continue;
      bool free = true;
      for (const Pose2& local : m.sweep) {
        if (!FootprintFree(cur.pose.Compose(local), s)) {
          free = false;
          break;
        }
      }
      if (!free) continue;
      cand.push_back(next);
      items.push_back({next.pose, next.t});
    }
    if (cand.empty()) continue;
    const auto verdicts = checker.Check(items, s);
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (!verdicts[i].safe) continue;
      cand[i].cp = verdicts[i].cp;
      best_g[KeyOf(cand[i], s)] = cand[i].g_cost;
      const double h = heuristic(cand[i].pose);
      nodes.push_back(cand[i]);
      open.emplace(cand[i].g_cost + h, h, order++, static_cast<int>(nodes.size() - 1));
    }
  }
  return finish();
}

OracleCheck OracleCp(const Pose2& pose, double t, const Scenario& s, std::uint64_t n,
                     RngStream& rng) {
  std::vector<CpQuery> q;
  for (const UncertainObstacle& o : s.uncertain_obstacles) {
    q.push_back(CpQuery::FromWorld(pose, s.robot, PredictObstacle(o, t).spec));
  }
  OracleCheck c;
  c.estimate = EstimateCpFixed(JointSampler(q), n, rng);
  std::tie(c.ci_lower, c.ci_upper) = CltInterval(c.estimate.hits, c.estimate.n);
  return c;
}

void WritePathCsv(const PlanResult& r, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.precision(10);
  f << kPathCsvHeader << '\n';
  for (const PlanState& st : r.path) {
    f << st.t << ',' << st.pose.x << ',' << st.pose.y << ',' << st.pose.phi << ','
      << st.primitive_id << ',' << st.cp << '\n';
  }
}

}  // namespace dcpf
