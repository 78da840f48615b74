#ifndef DCPF_PLANNER_H_
#define DCPF_PLANNER_H_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcpf/geometry.h"
#include "dcpf/mc_estimator.h"
#include "dcpf/model.h"
#include "dcpf/rng.h"

namespace dcpf {

struct PrimitiveParams {
  double max_steering = 0.5;  // radians
  double short_length = 1.0;
  double long_length = 2.0;
  // Durations are only used by time-indexed searches.
  double short_duration = 1.0;
  double long_duration = 1.0;
  int sweep_samples = 5;  // interior poses per primitive

  void Validate() const;
  bool operator==(const PrimitiveParams&) const = default;
};

struct MotionPrimitive {
  int id = 0;
  double steering = 0.0;
  double arc_length = 0.0;
  double duration = 0.0;
  // Interior poses followed by the endpoint, relative to the start pose.
  std::vector<Pose2> sweep;

  const Pose2& end() const { return sweep.back(); }
};

// Pose reached after driving `s` meters with curvature `kappa` from the origin.
Pose2 ArcPose(double kappa, double s);

// 5 steering angles evenly spaced in [-max, +max] times {short, long}.
std::vector<MotionPrimitive> MotionPrimitives(const RobotSpec& robot, const PrimitiveParams& params);

struct Waypoint {
  double t = 0.0;
  Pose2 pose;
  bool operator==(const Waypoint& o) const {
    return t == o.t && pose.x == o.pose.x && pose.y == o.pose.y && pose.phi == o.pose.phi;
  }
};

struct UncertainObstacle {
  // Mean pose in `spec` is the pose at t = 0 when there is no trajectory.
  ObstacleSpec spec;
  std::vector<Waypoint> trajectory;  // strictly increasing times
  std::array<double, 5> growth = {0.0, 0.0, 0.0, 0.0, 0.0};  // variance per second

  void Validate() const;
  bool operator==(const UncertainObstacle&) const = default;
};

struct Prediction {
  ObstacleSpec spec;
  bool beyond_trajectory = false;
};

// Mean pose interpolated along the waypoints (held outside them), variances
// grown by t * growth.
Prediction PredictObstacle(const UncertainObstacle& o, double t);

// 1 - prod(1 - p_i).
double CombinedCp(std::span<const double> per_obstacle);

struct Workspace {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 10.0;
  double max_y = 10.0;
  bool operator==(const Workspace&) const = default;
};

struct GoalRegion {
  Vec2 center;
  double radius = 1.0;
  std::optional<double> heading;
  double heading_tolerance = 3.141592653589793;

  bool Contains(const Pose2& p) const;
  bool operator==(const GoalRegion&) const = default;
};

struct SearchParams {
  double grid_xy = 0.5;
  int heading_bins = 16;
  double time_bin = 0.5;
  std::size_t node_budget = 200000;
  double timeout_seconds = 0.0;  // 0 = none
  bool operator==(const SearchParams&) const = default;
};

struct Scenario {
  std::string name;
  Workspace workspace;
  std::vector<ConvexPolygon> static_obstacles;
  std::vector<UncertainObstacle> uncertain_obstacles;
  RobotSpec robot;
  Pose2 start;
  GoalRegion goal;
  double p_max = 0.01;
  bool dynamic = false;
  PrimitiveParams primitives;
  SearchParams search;

  void Validate() const;
};

// Obstacles further than this many standard deviations (in every noisy
// dimension) from touching the robot are skipped by every checker.
inline constexpr double kRelevanceSigmas = 6.0;

bool MayCollide(const Pose2& robot_pose, const RobotSpec& robot, const ObstacleSpec& obstacle);

// Robot footprint inside the workspace and clear of every static obstacle.
bool FootprintFree(const Pose2& pose, const Scenario& s);

// Decides combined CP <= p_max for batches of robot states.
class CpChecker {
 public:
  struct Item {
    Pose2 pose;
    double t = 0.0;
  };
  struct Verdict {
    bool safe = false;
    double cp = 0.0;  // the checker's estimate of the combined CP
  };

  virtual ~CpChecker() = default;
  virtual std::string_view name() const = 0;
  std::vector<Verdict> Check(std::span<const Item> items, const Scenario& s);
  // Called at the start of each search.
  virtual void Reset() {}

  std::uint64_t queries() const { return queries_; }

 protected:
  // Obstacles in `relevant[i]` may be hit by items[i]; all have some noise.
  virtual std::vector<Verdict> CheckRelevant(std::span<const Item> items,
                                             const std::vector<std::vector<ObstacleSpec>>& relevant,
                                             const Scenario& s) = 0;
  std::uint64_t queries_ = 0;
};

class DcpfChecker final : public CpChecker {
 public:
  DcpfChecker(std::shared_ptr<const EnsembleModel> model, EnsembleMode mode);
  std::string_view name() const override { return "dcpf"; }

 protected:
  std::vector<Verdict> CheckRelevant(std::span<const Item> items,
                                     const std::vector<std::vector<ObstacleSpec>>& relevant,
                                     const Scenario& s) override;

 private:
  std::shared_ptr<const EnsembleModel> model_;
  EnsembleMode mode_;
};

// Queries are counted in samples for the sampling checkers.
class ZTestChecker final : public CpChecker {
 public:
  ZTestChecker(std::uint64_t max_samples, std::uint64_t seed);
  std::string_view name() const override { return "ztest"; }
  void Reset() override { rng_ = RngStream(seed_, 0x2e57); }

 protected:
  std::vector<Verdict> CheckRelevant(std::span<const Item> items,
                                     const std::vector<std::vector<ObstacleSpec>>& relevant,
                                     const Scenario& s) override;

 private:
  std::uint64_t max_samples_;
  std::uint64_t seed_;
  RngStream rng_;
};

class SprtChecker final : public CpChecker {
 public:
  SprtChecker(std::uint64_t max_samples, std::uint64_t seed, SprtParams params = {});
  std::string_view name() const override { return "sprt"; }
  void Reset() override { rng_ = RngStream(seed_, 0x5b27); }

 protected:
  std::vector<Verdict> CheckRelevant(std::span<const Item> items,
                                     const std::vector<std::vector<ObstacleSpec>>& relevant,
                                     const Scenario& s) override;

 private:
  std::uint64_t max_samples_;
  std::uint64_t seed_;
  SprtParams params_;
  RngStream rng_;
};

struct PlanState {
  Pose2 pose;
  double t = 0.0;
  double g_cost = 0.0;
  int parent = -1;        // index into the search's node table
  int primitive_id = -1;  // primitive leading into this state
  double cp = 0.0;
};

struct PlanResult {
  std::vector<PlanState> path;  // start first
  bool found = false;
  bool start_unsafe = false;
  bool budget_exhausted = false;
  bool timed_out = false;
  double cost = 0.0;
  std::size_t expanded = 0;
  std::uint64_t checker_queries = 0;
  double seconds = 0.0;
};

// Static states sweep the primitive poses against the static obstacles, then
// ask the checker about the endpoint.
bool StateSafe(const PlanState& state, const MotionPrimitive* via, const Pose2& from,
               const Scenario& s, CpChecker& checker);

PlanResult HybridAStar(const Scenario& s, CpChecker& checker);

// Monte Carlo re-verification of a state with n samples of every obstacle.
struct OracleCheck {
  CpEstimate estimate;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
};
OracleCheck OracleCp(const Pose2& pose, double t, const Scenario& s, std::uint64_t n,
                     RngStream& rng);

inline constexpr const char* kPathCsvHeader = "t,x,y,phi,primitive_id,combined_cp_estimate";
void WritePathCsv(const PlanResult& r, const std::filesystem::path& path);

}  // namespace dcpf

#endif  // DCPF_PLANNER_H_
