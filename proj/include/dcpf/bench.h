#ifndef DCPF_BENCH_H_
#define DCPF_BENCH_H_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dcpf/dataset.h"
#include "dcpf/model.h"
#include "dcpf/planner.h"
#include "dcpf/scenarios.h"

namespace dcpf {

enum class CheckerKind { kDcpf, kZTest, kSprt };
std::string_view ToString(CheckerKind k);
CheckerKind ParseCheckerKind(std::string_view name);

struct CheckerSpec {
  CheckerKind kind = CheckerKind::kDcpf;
  std::uint64_t max_samples = 4000000;  // sampling checkers only
  EnsembleMode mode = EnsembleMode::kCiUpper;  // DCPF only

  // e.g. "dcpf", "ztest_1e5", "sprt_4e6"
  std::string label() const;
};

std::unique_ptr<CpChecker> MakeChecker(const CheckerSpec& spec,
                                       std::shared_ptr<const EnsembleModel> model,
                                       std::uint64_t seed);

struct BenchConfig {
  std::vector<Scenario> scenarios;
  std::vector<CheckerSpec> checkers;
  std::vector<double> p_max = {0.1, 0.01, 0.001};
  std::shared_ptr<const EnsembleModel> model;  // required when a DCPF checker is listed
  std::uint64_t oracle_samples = 1000000;
  std::uint64_t seed = 1;
  double timeout_seconds = 0.0;  // per cell, 0 = none
  unsigned threads = 1;          // 0 = hardware concurrency
};

struct StateMargin {
  double t = 0.0;
  double checker_cp = 0.0;
  OracleCheck oracle;
  bool violated = false;  // oracle CI lower bound above p_max
};

struct CellResult {
  std::size_t scenario = 0;
  std::size_t checker = 0;
  double p_max = 0.0;
  PlanResult plan;
  std::vector<StateMargin> margins;  // one per path state
  std::size_t violations = 0;
  std::optional<OvertakeOutcome> overtake;
};

struct BenchRow {
  std::string checker;
  double p_max = 0.0;
  std::size_t instances = 0;
  std::size_t solved = 0;
  double cost_mean = 0.0;
  double cost_std = 0.0;
  double time_mean = 0.0;
  double time_std = 0.0;
  double queries_mean = 0.0;
  double min_margin = 0.0;  // min over states of p_max - oracle estimate
  std::size_t violations = 0;
  std::size_t overtake_before = 0;
  std::size_t overtake_after = 0;
  std::size_t overtake_none = 0;
};

struct BenchReport {
  std::vector<std::string> checker_labels;
  std::vector<CellResult> cells;
  std::vector<BenchRow> rows;  // one per (checker, p_max)
};

// Scenario set, checkers and p_max values of a named suite: "narrow",
// "random" or "overtake". `instances` applies to the random and overtake
// suites. The model is left for the caller to set.
BenchConfig MakeSuite(std::string_view suite, std::size_t instances = 0, std::uint64_t seed = 1);

// Runs every scenario x checker x p_max cell. Cells are independent and seeded
// from (seed, cell index), so results do not depend on the thread count.
BenchReport RunBench(const BenchConfig& cfg);

inline constexpr const char* kBenchCsvVersion = "# dcpf bench csv v1";
inline constexpr const char* kBenchCsvHeader =
    "checker,p_max,instances,solved,cost_mean,cost_std,time_mean_s,time_std_s,queries_mean,"
    "min_margin,violations,overtake_before,overtake_after,overtake_none";
inline constexpr const char* kCellCsvHeader =
    "scenario,checker,p_max,found,cost,expanded,queries,seconds,violations,overtake";

// Wall-clock columns are excluded when `with_times` is false so repeated runs
// compare byte for byte.
void WriteBenchCsv(const BenchReport& r, const std::filesystem::path& path, bool with_times = true);
void WriteCellCsv(const BenchReport& r, const BenchConfig& cfg, const std::filesystem::path& path,
                  bool with_times = true);

// Path, obstacle means and `draws` sampled obstacle configurations per
// uncertain obstacle.
void WritePathSvg(const Scenario& s, const PlanResult& plan, const std::filesystem::path& path,
                  int draws = 20, std::uint64_t seed = 1);

// Writes the summary CSV, the per-cell CSV and one SVG per solved cell.
void WriteBenchOutputs(const BenchReport& r, const BenchConfig& cfg,
                       const std::filesystem::path& dir);

struct TimingConfig {
  std::shared_ptr<const EnsembleModel> model;
  std::vector<FieldInput> dcpf_queries;  // query mix
  std::vector<CpQuery> mc_queries;       // same mix for the samplers
  std::vector<double> p_max = {0.1, 0.01, 0.001};
  std::vector<std::size_t> batch_sizes = {1, 16, 1024};
  std::uint64_t max_samples = 4000000;
  std::uint64_t bernoulli_runs = 300;
  std::uint64_t seed = 1;
};

struct TimingRow {
  std::string method;
  double p_max = 0.0;  // 0 for the network
  std::size_t batch = 1;
  std::size_t queries = 0;
  double mean_seconds = 0.0;  // thread CPU time per query
  double std_seconds = 0.0;
  double cv = 0.0;
  double mean_samples = 0.0;
};

struct SprtSampleCount {
  double p_max = 0.0;
  double samples_at_p_max = 0.0;
  double samples_at_tenth = 0.0;
};

struct TimingReport {
  std::vector<TimingRow> rows;
  std::vector<SprtSampleCount> sprt_counts;
};

// Builds a query mix of `n` dataset records (both representations).
void FillQueryMix(TimingConfig& cfg, const Dataset& ds, std::size_t n, std::uint64_t seed);
// Same, drawing unlabelled queries the way the dataset generator does.
void FillQueryMix(TimingConfig& cfg, std::size_t n, std::uint64_t seed);

TimingReport RunTimingSuite(const TimingConfig& cfg);
void WriteTimingCsv(const TimingReport& r, const std::filesystem::path& path);

}  // namespace dcpf

#endif  // DCPF_BENCH_H_
