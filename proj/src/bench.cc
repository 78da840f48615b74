#include "dcpf/bench.h"

#include <algorithm>
#include <atomic>
#include <ctime>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace dcpf {
namespace {

// CPU time of the calling thread. Latencies exclude time the thread spends
// descheduled, which otherwise dominates the spread on a busy machine.
double ThreadSeconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

std::pair<double, double> MeanStd(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string Sci(std::uint64_t n) {
  char buf[32];
  const int e = static_cast<int>(std::floor(std::log10(static_cast<double>(n))));
  const double m = static_cast<double>(n) / std::pow(10.0, e);
  if (std::abs(m - std::round(m)) < 1e-9 && std::round(m) == 1.0) {
    std::snprintf(buf, sizeof buf, "1e%d", e);
  } else {
    std::snprintf(buf, sizeof buf, "%ge%d", m, e);
  }
  return buf;
}

CellResult RunCell(const BenchConfig& cfg, std::size_t scenario, std::size_t checker, double p_max,
                   std::uint64_t cell_seed) {
  CellResult c;
  c.scenario = scenario;
  c.checker = checker;
  c.p_max = p_max;
  Scenario s = cfg.scenarios[scenario];
  s.p_max = p_max;
  if (cfg.timeout_seconds > 0.0) s.search.timeout_seconds = cfg.timeout_seconds;
  auto chk = MakeChecker(cfg.checkers[checker], cfg.model, cell_seed);
  c.plan = HybridAStar(s, *chk);
  RngStream rng(cell_seed, 0x0a1e);
  for (const PlanState& st : c.plan.path) {
    StateMargin m;
    m.t = st.t;
    m.checker_cp = st.cp;
    m.oracle = OracleCp(st.pose, st.t, s, cfg.oracle_samples, rng);
    m.violated = m.oracle.ci_lower > p_max;
    c.violations += m.violated ? 1 : 0;
    c.margins.push_back(m);
  }
  if (s.dynamic && s.uncertain_obstacles.size() >= 2 && c.plan.found) {
    c.overtake = ClassifyOvertake(s, c.plan);
  }
  return c;
}

// Vertices of one sampled obstacle configuration.
std::array<Vec2, 4> DrawFootprint(const ObstacleSpec& o, RngStream& rng) {
  const Pose2 mean = o.pose();
  const Vec2 d = mean.Transform({rng.Normal(0.0, o.sigma[0]), rng.Normal(0.0, o.sigma[1])});
  const double phi = mean.phi + rng.Normal(0.0, o.sigma[2]);
  const double l1 = std::max(1e-3, o.l1() + rng.Normal(0.0, o.sigma[3]));
  const double l2 = std::max(1e-3, o.l2() + rng.Normal(0.0, o.sigma[4]));
  return RectCorners(l1, l2, Pose2(d.x, d.y, phi));
}

template <typename Range>
std::string Points(const Range& pts, double ymax) {
  std::string out;
  char buf[64];
  for (const Vec2& p : pts) {
    std::snprintf(buf, sizeof buf, "%.3f,%.3f ", p.x, ymax - p.y);
    out += buf;
  }
  if (!out.empty()) out.pop_back();
  return out;
}

}  // namespace

std::string_view ToString(CheckerKind k) {
  switch (k) {
    case CheckerKind::kDcpf:
      return "dcpf";
    case CheckerKind::kZTest:
      return "ztest";
    case CheckerKind::kSprt:
      return "sprt";
  }
  return "dcpf";
}

CheckerKind ParseCheckerKind(std::string_view name) {
  if (name == "dcpf") return CheckerKind::kDcpf;
  if (name == "ztest") return CheckerKind::kZTest;
  if (name == "sprt") return CheckerKind::kSprt;
  throw std::invalid_argument("unknown checker: " + std::string(name));
}

std::string CheckerSpec::label() const {
  if (kind == CheckerKind::kDcpf) {
    return mode == EnsembleMode::kCiUpper ? "dcpf" : "dcpf_" + std::string(ToString(mode));
  }
  return std::string(ToString(kind)) + "_" + Sci(max_samples);
}

std::unique_ptr<CpChecker> MakeChecker(const CheckerSpec& spec,
                                       std::shared_ptr<const EnsembleModel> model,
                                       std::uint64_t seed) {
  switch (spec.kind) {
    case CheckerKind::kDcpf:
      return std::make_unique<DcpfChecker>(std::move(model), spec.mode);
    case CheckerKind::kZTest:
      return std::make_unique<ZTestChecker>(spec.max_samples, seed);
    case CheckerKind::kSprt:
      return std::make_unique<SprtChecker>(spec.max_samples, seed);
  }
  throw std::invalid_argument("unknown checker kind");
}

BenchConfig MakeSuite(std::string_view suite, std::size_t instances, std::uint64_t seed) {
  BenchConfig cfg;
  cfg.seed = seed;
  const CheckerSpec dcpf{CheckerKind::kDcpf, 0, EnsembleMode::kCiUpper};
  if (suite == "narrow") {
    cfg.scenarios = {MakeNarrowPassage(1.0)};
    cfg.checkers = {dcpf,
                    {CheckerKind::kZTest, 100000, EnsembleMode::kCiUpper},
                    {CheckerKind::kSprt, 4000000, EnsembleMode::kCiUpper}};
    cfg.p_max = {0.1, 0.01, 0.001};
  } else if (suite == "random") {
    for (std::size_t i = 0; i < (instances ? instances : 10); ++i) {
      RandomMapParams p;
      p.seed = MixSeed(seed + i);
      cfg.scenarios.push_back(MakeRandomMap(p));
    }
    cfg.checkers = {dcpf,
                    {CheckerKind::kZTest, 1000000, EnsembleMode::kCiUpper},
                    {CheckerKind::kSprt, 4000000, EnsembleMode::kCiUpper}};
    cfg.p_max = {0.001};
  } else if (suite == "overtake") {
    for (std::size_t i = 0; i < (instances ? instances : 20); ++i) {
      Scenario s = MakeOvertake(OvertakeParams::Sample(MixSeed(seed + i)));
      s.name = "overtake_" + std::to_string(i);
      cfg.scenarios.push_back(std::move(s));
    }
    cfg.checkers = {dcpf};
    cfg.p_max = {0.1, 0.01, 0.001};
  } else {
    throw std::invalid_argument("unknown suite: " + std::string(suite));
  }
  return cfg;
}

BenchReport RunBench(const BenchConfig& cfg) {
  if (cfg.scenarios.empty() || cfg.checkers.empty() || cfg.p_max.empty()) {
    throw std::invalid_argument("bench needs scenarios, checkers and p_max values");
  }
  for (const CheckerSpec& c : cfg.checkers) {
    if (c.kind == CheckerKind::kDcpf && !cfg.model) {
      throw std::invalid_argument("DCPF checker requested without a model");
    }
  }
  struct Task {
    std::size_t scenario, checker, p;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cfg.checkers.size(); ++c) {
    for (std::size_t p = 0; p < cfg.p_max.size(); ++p) {
      for (std::size_t s = 0; s < cfg.scenarios.size(); ++s) tasks.push_back({s, c, p});
    }
  }
  BenchReport report;
  for (const CheckerSpec& c : cfg.checkers) report.checker_labels.push_back(c.label());
  report.cells.resize(tasks.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&]() {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        const Task& t = tasks[i];
        report.cells[i] =
            RunCell(cfg, t.scenario, t.checker, cfg.p_max[t.p], MixSeed(cfg.seed ^ MixSeed(i)));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                      : cfg.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, tasks.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t c = 0; c < cfg.checkers.size(); ++c) {
    for (std::size_t p = 0; p < cfg.p_max.size(); ++p) {
      BenchRow row;
      row.checker = report.checker_labels[c];
      row.p_max = cfg.p_max[p];
      std::vector<double> costs, times, queries;
      row.min_margin = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].checker != c || tasks[i].p != p) continue;
        const CellResult& cell = report.cells[i];
        ++row.instances;
        times.push_back(cell.plan.seconds);
        queries.push_back(static_cast<double>(cell.plan.checker_queries));
        if (!cell.plan.path.empty() && cell.plan.found) {
          ++row.solved;
          costs.push_back(cell.plan.cost);
        }
        row.violations += cell.violations;
        for (const StateMargin& m : cell.margins) {
          row.min_margin = std::min(row.min_margin, row.p_max - m.oracle.estimate.p_hat);
        }
        if (cell.overtake) {
          switch (*cell.overtake) {
            case OvertakeOutcome::kBefore:
              ++row.overtake_before;
              break;
            case OvertakeOutcome::kAfter:
              ++row.overtake_after;
              break;
            case OvertakeOutcome::kNone:
              ++row.overtake_none;
              break;
          }
        }
      }
      if (!std::isfinite(row.min_margin)) row.min_margin = 0.0;
      std::tie(row.cost_mean, row.cost_std) = MeanStd(costs);
      std::tie(row.time_mean, row.time_std) = MeanStd(times);
      row.queries_mean = MeanStd(queries).first;
      report.rows.push_back(row);
    }
  }
  return report;
}

void WriteBenchCsv(const BenchReport& r, const std::filesystem::path& path, bool with_times) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << kBenchCsvVersion << '\n' << kBenchCsvHeader << '\n';
  f.precision(8);
  for (const BenchRow& row : r.rows) {
    f << row.checker << ',' << row.p_max << ',' << row.instances << ',' << row.solved << ','
      << row.cost_mean << ',' << row.cost_std << ',';
    if (with_times) {
      f << row.time_mean << ',' << row.time_std;
    } else {
      f << ',';
    }
    f << ',' << row.queries_mean << ',' << row.min_margin << ',' << row.violations << ','
      << row.overtake_before << ',' << row.overtake_after << ',' << row.overtake_none << '\n';
  }
}

void WriteCellCsv(const BenchReport& r, const BenchConfig& cfg, const std::filesystem::path& path,
                  bool with_times) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << kBenchCsvVersion << '\n' << kCellCsvHeader << '\n';
  f.precision(8);
  for (const CellResult& c : r.cells) {
    f << cfg.scenarios[c.scenario].name << ',' << r.checker_labels[c.checker] << ',' << c.p_max
      << ',' << (c.plan.found ? 1 : 0) << ',' << c.plan.cost << ',' << c.plan.expanded << ','
      << c.plan.checker_queries << ',';
    if (with_times) f << c.plan.seconds;
    f << ',' << c.violations << ',' << (c.overtake ? ToString(*c.overtake) : "") << '\n';
  }
}

void WritePathSvg(const Scenario& s, const PlanResult& plan, const std::filesystem::path& path,
                  int draws, std::uint64_t seed) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  const Workspace& w = s.workspace;
  const double width = w.max_x - w.min_x;
  const double height = w.max_y - w.min_y;
  // SVG y grows downwards; points are flipped against max_y.
  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"" << w.min_x << ' ' << 0 << ' '
    << width << ' ' << height << "\" width=\"" << 20 * width << "\" height=\"" << 20 * height
    << "\">\n";
  f << "<rect x=\"" << w.min_x << "\" y=\"0\" width=\"" << width << "\" height=\"" << height
    << "\" fill=\"white\" stroke=\"black\" stroke-width=\"0.05\"/>\n";
  for (const ConvexPolygon& p : s.static_obstacles) {
    f << "<polygon points=\"" << Points(p.vertices(), w.max_y) << "\" fill=\"gray\"/>\n";
  }
  RngStream rng(seed, 0x5f9);
  const double t0 = plan.path.empty() ? 0.0 : plan.path.front().t;
  for (const UncertainObstacle& o : s.uncertain_obstacles) {
    const ObstacleSpec spec = PredictObstacle(o, t0).spec;
    for (int k = 0; k < draws; ++k) {
      f << "<polygon points=\"" << Points(DrawFootprint(spec, rng), w.max_y)
        << "\" fill=\"blue\" fill-opacity=\"0.08\" stroke=\"none\"/>\n";
    }
    f << "<polygon points=\"" << Points(RectCorners(spec.l1(), spec.l2(), spec.pose()), w.max_y)
      << "\" fill=\"none\" stroke=\"blue\" stroke-width=\"0.08\"/>\n";
  }
  f << "<circle cx=\"" << s.goal.center.x << "\" cy=\"" << w.max_y - s.goal.center.y << "\" r=\""
    << s.goal.radius << "\" fill=\"green\" fill-opacity=\"0.2\"/>\n";
  for (const PlanState& st : plan.path) {
    f << "<polygon points=\""
      << Points(RectCorners(s.robot.width, s.robot.height, st.pose), w.max_y)
      << "\" fill=\"none\" stroke=\"darkgreen\" stroke-width=\"0.04\"/>\n";
  }
  std::vector<Vec2> line;
  for (const PlanState& st : plan.path) line.push_back(st.pose.position());
  f << "<polyline points=\"" << Points(line, w.max_y)
    << "\" fill=\"none\" stroke=\"red\" stroke-width=\"0.1\"/>\n";
  f << "</svg>\n";
}

void WriteBenchOutputs(const BenchReport& r, const BenchConfig& cfg,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  WriteBenchCsv(r, dir / "bench.csv");
  WriteCellCsv(r, cfg, dir / "cells.csv");
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const CellResult& c = r.cells[i];
    if (!c.plan.found) continue;
    char name[160];
    std::snprintf(name, sizeof name, "%s_%s_p%g_%zu.svg", cfg.scenarios[c.scenario].name.c_str(),
                  r.checker_labels[c.checker].c_str(), c.p_max, i);
    Scenario s = cfg.scenarios[c.scenario];
    s.p_max = c.p_max;
    WritePathSvg(s, c.plan, dir / name, 20, cfg.seed);
  }
}

void FillQueryMix(TimingConfig& cfg, const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (ds.size() == 0) throw std::invalid_argument("empty dataset");
  RngStream rng(seed, 0x7133);
  cfg.dcpf_queries.clear();
  cfg.mc_queries.clear();
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(rng.Next() % ds.size());
    const CpQuery q = ds.records[k].ToQuery(ds.robot);
    cfg.mc_queries.push_back(q);
    cfg.dcpf_queries.push_back(FieldInput::FromQuery(q));
  }
}

void FillQueryMix(TimingConfig& cfg, std::size_t n, std::uint64_t seed) {
  DatasetConfig dc;
  RngStream rng(seed, 0x7134);
  cfg.dcpf_queries.clear();
  cfg.mc_queries.clear();
  for (std::size_t i = 0; i < n; ++i) {
    CpQuery q;
    q.robot = dc.robot;
    q.obstacle = DrawObstacle(dc, rng);
    const HeuristicShape shape = BuildHeuristicShape(dc.robot, q.obstacle, rng,
                                                     rng.Uniform(-std::numbers::pi, std::numbers::pi));
    q.robot_pose = SampleRobotConfig(shape, rng);
    cfg.mc_queries.push_back(q);
    cfg.dcpf_queries.push_back(FieldInput::FromQuery(q));
  }
}

TimingReport RunTimingSuite(const TimingConfig& cfg) {
  if (!cfg.model) throw std::invalid_argument("timing suite needs a model");
  if (cfg.dcpf_queries.empty() || cfg.dcpf_queries.size() != cfg.mc_queries.size()) {
    throw std::invalid_argument("timing suite needs a non-empty query mix");
  }
  TimingReport report;
  const EnsembleModel& model = *cfg.model;
  const std::size_t n = cfg.dcpf_queries.size();

  for (std::size_t b : cfg.batch_sizes) {
    std::vector<FieldInput> batch(b);
    std::vector<double> per_query;
    // At least n queries and at least 8 batches.
    const std::size_t rounds = std::max<std::size_t>(8, (n + b - 1) / b);
    for (std::size_t i = 0; i < b; ++i) batch[i] = cfg.dcpf_queries[i % n];
    model.PredictBatch(batch);  // warm-up
    for (std::size_t r = 0; r < rounds; ++r) {
      for (std::size_t i = 0; i < b; ++i) batch[i] = cfg.dcpf_queries[(r * b + i) % n];
      const double t0 = ThreadSeconds();
      const auto out = model.PredictBatch(batch);
      const double t1 = ThreadSeconds();
      if (out.size() != b) throw std::logic_error("batch size mismatch");
      per_query.push_back((t1 - t0) / static_cast<double>(b));
    }
    TimingRow row;
    row.method = "dcpf";
    row.batch = b;
    row.queries = rounds * b;
    std::tie(row.mean_seconds, row.std_seconds) = MeanStd(per_query);
    row.cv = row.mean_seconds > 0 ? row.std_seconds / row.mean_seconds : 0.0;
    report.rows.push_back(row);
  }

  RngStream rng(cfg.seed, 0x71e);
  for (double p_max : cfg.p_max) {
    for (int method = 0; method < 2; ++method) {
      std::vector<double> times;
      std::vector<double> samples;
      for (const CpQuery& q : cfg.mc_queries) {
        const QuerySampler source(q);
        const double t0 = ThreadSeconds();
        const SafetyDecision d = method == 0
                                     ? ZTestCheck(source, p_max, cfg.max_samples, rng)
                                     : SprtCheck(source, p_max, cfg.max_samples, {}, rng);
        times.push_back(ThreadSeconds() - t0);
        samples.push_back(static_cast<double>(d.samples_used));
      }
      TimingRow row;
      row.method = method == 0 ? "ztest" : "sprt";
      row.p_max = p_max;
      row.queries = n;
      std::tie(row.mean_seconds, row.std_seconds) = MeanStd(times);
      row.cv = row.mean_seconds > 0 ? row.std_seconds / row.mean_seconds : 0.0;
      row.mean_samples = MeanStd(samples).first;
      report.rows.push_back(row);
    }
    SprtSampleCount c;
    c.p_max = p_max;
    for (int which = 0; which < 2; ++which) {
      const BernoulliSource source(which == 0 ? p_max : p_max / 10);
      double total = 0.0;
      for (std::uint64_t k = 0; k < cfg.bernoulli_runs; ++k) {
        total += static_cast<double>(SprtCheck(source, p_max, cfg.max_samples, {}, rng).samples_used);
      }
      (which == 0 ? c.samples_at_p_max : c.samples_at_tenth) =
          total / static_cast<double>(cfg.bernoulli_runs);
    }
    report.sprt_counts.push_back(c);
  }
  return report;
}

void WriteTimingCsv(const TimingReport& r, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.precision(8);
  f << "method,p_max,batch,queries,mean_s,std_s,cv,mean_samples\n";
  for (const TimingRow& row : r.rows) {
    f << row.method << ',' << row.p_max << ',' << row.batch << ',' << row.queries << ','
      << row.mean_seconds << ',' << row.std_seconds << ',' << row.cv << ',' << row.mean_samples
      << '\n';
  }
  f << "\nsprt_p_max,samples_at_p_max,samples_at_p_max_over_10\n";
  for (const SprtSampleCount& c : r.sprt_counts) {
    f << c.p_max << ',' << c.samples_at_p_max << ',' << c.samples_at_tenth << '\n';
  }
}

}  // namespace dcpf
