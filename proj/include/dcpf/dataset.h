#ifndef DCPF_DATASET_H_
#define DCPF_DATASET_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcpf/geometry.h"
#include "dcpf/mc_estimator.h"
#include "dcpf/rng.h"

namespace dcpf {

// One labelled sample: robot pose in the obstacle frame, obstacle mean side
// lengths and standard deviations, and the Monte Carlo label.
struct DatasetRecord {
  double rx = 0.0;
  double ry = 0.0;
  double rphi = 0.0;
  double l1 = 1.0;
  double l2 = 1.0;
  std::array<double, 5> sigma = {0.0, 0.0, 0.0, 0.0, 0.0};
  double p_bar = 0.0;
  double ci_half_width = 0.0;
  std::uint64_t n_samples = 0;

  CpQuery ToQuery(const RobotSpec& robot) const;
  ObstacleSpec Obstacle() const;
  bool operator==(const DatasetRecord&) const = default;
};

// Sampling region around an obstacle that follows the mid-range isolines of
// the collision probability, built for one robot heading.
struct HeuristicShape {
  ConvexPolygon boundary;
  std::optional<double> robot_heading;
};

struct DatasetConfig {
  std::size_t n_records = 30;
  // Per-bucket record counts; empty means equal shares.
  std::vector<std::size_t> quotas;
  double sigma_max = 1.4142135623730951;
  double length_min = 0.1;
  double length_max = 5.0;
  RobotSpec robot;
  AccuracyProfile profile = AccuracyProfile::Paper();
  std::uint64_t seed = 1;
  // 0 = hardware concurrency.
  unsigned threads = 0;

  std::vector<std::size_t> ResolvedQuotas() const;
  void Validate() const;
};

struct Dataset {
  RobotSpec robot;
  AccuracyProfile profile;
  std::uint64_t seed = 0;
  std::vector<DatasetRecord> records;
  // Attempt index each record was generated from; with `seed` this
  // reproduces the record's label stream.
  std::vector<std::uint64_t> record_ids;

  std::size_t size() const { return records.size(); }
  std::vector<std::size_t> BucketCounts() const;
};

class PartialDatasetError : public std::runtime_error {
 public:
  PartialDatasetError(const std::string& what, Dataset partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const Dataset& partial() const { return partial_; }

 private:
  Dataset partial_;
};

// Minkowski-sum heuristic: obstacle footprint grown by a one-sigma ellipse
// and the robot footprint, for three obstacle rotations in [-phi_m, phi_m]
// with phi_m ~ U(sigma_phi, 3.1 sigma_phi), merged by their convex hull.
HeuristicShape BuildHeuristicShape(const RobotSpec& robot, const ObstacleSpec& obstacle,
                                   RngStream& rng, std::optional<double> robot_heading = {});

// Point on the boundary at arc-length fraction u in [0, 1).
Vec2 BoundaryPoint(const ConvexPolygon& boundary, double u);

struct RobotSampling {
  double boundary_fraction = 0.8;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double background_inflation = 3.0;
};

// Robot configuration near the heuristic boundary (radially rescaled) or,
// with probability 1 - boundary_fraction, anywhere in the inflated bounding
// box. The heading is the shape's heading when it has one, else uniform.
Pose2 SampleRobotConfig(const HeuristicShape& shape, RngStream& rng,
                        const RobotSampling& mix = {});

// Draws one obstacle from the configured length/sigma bounds.
ObstacleSpec DrawObstacle(const DatasetConfig& cfg, RngStream& rng);

// Balanced dataset: keeps drawing and labelling until every bucket quota is
// met. Deterministic for a given seed regardless of thread count.
Dataset GenerateDataset(const DatasetConfig& cfg);

// Re-runs the label computation of record `index`.
CpEstimate RelabelRecord(const Dataset& ds, std::size_t index);

// Stratified, disjoint split; sizes per bucket are within one record of the
// exact proportions.
std::array<Dataset, 3> Split(const Dataset& ds, const std::array<double, 3>& ratios,
                             std::uint64_t seed);

// CSV with a fixed 13-column header plus `<path>.meta.json`.
void WriteDataset(const Dataset& ds, const std::filesystem::path& path);
Dataset ReadDataset(const std::filesystem::path& path);

inline constexpr const char* kDatasetCsvHeader =
    "rx,ry,rphi,l1,l2,s_x,s_y,s_phi,s_l1,s_l2,p_bar,ci_half_width,n_samples";

}  // namespace dcpf

#endif  // DCPF_DATASET_H_
