#ifndef DCPF_SCENARIOS_H_
#define DCPF_SCENARIOS_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "dcpf/planner.h"

namespace dcpf {

// Two uncertain obstacles with a gap between them; start on the right, goal
// region on the left. Lengths scale with `scale`, covariances do not.
Scenario MakeNarrowPassage(double scale = 1.0);

// Diagonal covariances of the two passage obstacles (variances).
inline constexpr std::array<double, 5> kPassageVariance1 = {0.05, 0.2, 0.03, 0.0001, 0.0001};
inline constexpr std::array<double, 5> kPassageVariance2 = {0.15, 0.4, 0.13, 0.01, 0.015};

struct RandomMapParams {
  std::uint64_t seed = 1;
  double width = 50.0;
  double height = 50.0;
  // Obstacles per 100 m x 100 m of free area.
  double density = 120.0;
  double side_min = 0.1;
  double side_max = 3.0;
  double sigma_min = 0.001;
  double sigma_max = 0.1;
  double distance_min = 35.0;
  double distance_max = 40.0;
};

Scenario MakeRandomMap(const RandomMapParams& params);

// Two-lane road along +x. The agent's lane is y < 0. Uncertain obstacle 0 is
// the lead car ahead of the agent, obstacle 1 the oncoming car.
struct OvertakeParams {
  double lane_width = 4.0;
  double length = 100.0;
  double lead_gap = 12.0;    // lead car centre ahead of the agent
  double lead_speed = 3.0;
  double oncoming_start = 80.0;
  double oncoming_speed = 4.0;
  double horizon = 60.0;     // seconds covered by the waypoints
  std::array<double, 5> sigma = {0.1, 0.05, 0.02, 0.02, 0.02};
  std::array<double, 5> growth = {0.02, 0.002, 0.0005, 0.0, 0.0};

  // Randomised gaps and speeds for instance `seed`.
  static OvertakeParams Sample(std::uint64_t seed);
};

Scenario MakeOvertake(const OvertakeParams& params = {});

enum class OvertakeOutcome { kBefore, kAfter, kNone };
std::string_view ToString(OvertakeOutcome o);

// Time at which the oncoming car reaches the lead car.
double MeetingTime(const Scenario& s);

// "Before" iff the agent is back in its lane, ahead of the lead car, before
// the meeting time; "none" if it never gets ahead of the lead car.
OvertakeOutcome ClassifyOvertake(const Scenario& s, const PlanResult& r);

std::string ScenarioToJson(const Scenario& s);
Scenario ScenarioFromJson(std::string_view text);
void SaveScenario(const Scenario& s, const std::filesystem::path& path);
Scenario LoadScenario(const std::filesystem::path& path);

}  // namespace dcpf

#endif  // DCPF_SCENARIOS_H_
