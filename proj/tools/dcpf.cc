// Command-line front end: dataset generation, training, evaluation, single
// queries, planning and benchmarks.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dcpf/bench.h"
#include "dcpf/dataset.h"
#include "dcpf/model.h"
#include "dcpf/scenarios.h"
#include "dcpf/training.h"

namespace {

using namespace dcpf;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInfeasible = 2;

AccuracyProfile ProfileByName(const std::string& name) {
  if (name == "paper") return AccuracyProfile::Paper();
  if (name == "relaxed") return AccuracyProfile::Relaxed();
  throw std::invalid_argument("unknown profile: " + name);
}

NetworkArch ParseArch(const std::string& text, NetworkArch arch) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw std::invalid_argument("--arch expects WxD, e.g. 256x4");
  arch.main_width = std::stoi(text.substr(0, x));
  arch.main_depth = std::stoi(text.substr(x + 1));
  return arch;
}

std::vector<double> ParseNumbers(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

void PrintMetrics(const Metrics& m) {
  std::printf("%-10s %8s %10s %8s\n", "scope", "count", "mae", "pap");
  std::printf("%-10s %8zu %10.5f %8.4f\n", "overall", m.n, m.mae_overall, m.pap_overall);
  const char* names[3] = {"[0,.01)", "[.01,.1)", "[.1,1]"};
  for (std::size_t b = 0; b < 3; ++b) {
    std::printf("%-10s %8zu %10.5f %8.4f\n", names[b], m.count_per_bucket[b], m.mae_per_bucket[b],
                m.pap_per_bucket[b]);
  }
}

struct GenArgs {
  std::string out;
  std::size_t n_records = 30;
  std::uint64_t seed = 1;
  std::string profile = "paper";
  unsigned threads = 0;
};

int RunGenDataset(const GenArgs& a) {
  DatasetConfig cfg;
  cfg.n_records = a.n_records;
  cfg.seed = a.seed;
  cfg.profile = ProfileByName(a.profile);
  cfg.threads = a.threads;
  const auto start = std::chrono::steady_clock::now();
  try {
    const Dataset ds = GenerateDataset(cfg);
    WriteDataset(ds, a.out);
    const auto counts = ds.BucketCounts();
    std::printf("wrote %zu records to %s (buckets %zu/%zu/%zu) in %.1f s\n", ds.size(),
                a.out.c_str(), counts[0], counts[1], counts[2],
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  } catch (const PartialDatasetError& e) {
    WriteDataset(e.partial(), a.out);
    std::fprintf(stderr, "error: %s (partial dataset of %zu records written)\n", e.what(),
                 e.partial().size());
    return kExitError;
  }
  return kExitOk;
}

struct TrainArgs {
  std::string dataset;
  std::string out;
  int epochs = 20;
  double lr = 2.4e-4;
  double gamma = 0.01;
  std::string arch = "256x4";
  bool paper_arch = false;
  std::size_t ensemble = 3;
  std::size_t batch = 1024;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

int RunTrain(const TrainArgs& a) {
  const Dataset ds = ReadDataset(a.dataset);
  const auto parts = Split(ds, {0.8, 0.1, 0.1}, a.seed);
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.gamma = a.gamma;
  cfg.arch = a.paper_arch ? NetworkArch::Paper() : ParseArch(a.arch, NetworkArch{});
  cfg.ensemble_size = a.ensemble;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  std::ofstream history(a.out + ".history.csv");
  history << "member,epoch,train_loss,val_loss,val_bce,val_regularizer,seconds\n";
  const TrainResult r = Train(parts[0], parts[1], cfg, [&](const EpochLog& e) {
    std::printf("member %zu epoch %2d train %.5f val %.5f (bce %.5f) %.0fs\n", e.member, e.epoch,
                e.train_loss, e.val.total, e.val.bce, e.seconds);
    std::fflush(stdout);
    history << e.member << ',' << e.epoch << ',' << e.train_loss << ',' << e.val.total << ','
            << e.val.bce << ',' << e.val.regularizer << ',' << e.seconds << '\n';
  });
  SaveModel(r.model, a.out);
  std::printf("trained %zu members in %.1f s; held-out test split (ensemble mean):\n",
              r.model.size(), r.seconds);
  PrintMetrics(Evaluate(r.model, parts[2], EnsembleMode::kMean));
  return kExitOk;
}

int RunEval(const std::string& model_path, const std::string& dataset_path,
            const std::string& mode, const std::string& csv) {
  const EnsembleModel model = LoadModel(model_path);
  const Dataset ds = ReadDataset(dataset_path);
  const Metrics m = Evaluate(model, ds, ParseEnsembleMode(mode));
  PrintMetrics(m);
  if (!csv.empty()) WriteMetricsCsv(m, csv);
  return kExitOk;
}

int RunEstimate(const std::string& model_path, const std::string& query, const std::string& mode,
                bool monte_carlo, std::uint64_t seed) {
  const std::vector<double> v = ParseNumbers(query);
  if (v.size() != 10) throw std::invalid_argument("--query expects 10 comma-separated numbers");
  CpQuery q;
  q.robot_pose = Pose2(v[0], v[1], v[2]);
  q.obstacle.mean = {0, 0, 0, v[3], v[4]};
  q.obstacle.sigma = {v[5], v[6], v[7], v[8], v[9]};
  q.Validate();
  if (!model_path.empty()) {
    const EnsembleModel model = LoadModel(model_path);
    const EnsembleMode m = ParseEnsembleMode(mode);
    std::printf("dcpf %s: %.6g\n", std::string(ToString(m)).c_str(), model.Predict(q, m));
  }
  if (monte_carlo || model_path.empty()) {
    RngStream rng(seed);
    const CpEstimate e = EstimateCpAdaptive(q, AccuracyProfile::Paper(), rng);
    std::printf("monte carlo: %.6g +- %.3g (%llu samples)\n", e.p_hat, e.ci_half_width,
                static_cast<unsigned long long>(e.n));
  }
  return kExitOk;
}

std::shared_ptr<const EnsembleModel> ModelIfNeeded(const std::string& path, bool needed) {
  if (!needed) return nullptr;
  if (path.empty()) throw std::invalid_argument("--model is required for the dcpf checker");
  return std::make_shared<const EnsembleModel>(LoadModel(path));
}

// A scenario file, or one of the built-in "narrow", "random:SEED", "overtake:SEED".
Scenario ScenarioByName(const std::string& name) {
  if (name == "narrow") return MakeNarrowPassage(1.0);
  const auto colon = name.find(':');
  if (colon != std::string::npos) {
    const std::string kind = name.substr(0, colon);
    const std::uint64_t seed = std::stoull(name.substr(colon + 1));
    if (kind == "random") {
      RandomMapParams p;
      p.seed = seed;
      return MakeRandomMap(p);
    }
    if (kind == "overtake") return MakeOvertake(OvertakeParams::Sample(seed));
  }
  return LoadScenario(name);
}

struct PlanArgs {
  std::string scenario;
  std::string checker = "dcpf";
  double p_max = -1.0;
  std::string out;
  std::string model;
  std::string mode = "ci_upper";
  std::uint64_t max_samples = 4000000;
  std::uint64_t oracle_samples = 0;
  std::uint64_t seed = 1;
};

int RunPlan(const PlanArgs& a) {
  Scenario s = ScenarioByName(a.scenario);
  if (a.p_max >= 0) s.p_max = a.p_max;
  s.Validate();
  CheckerSpec spec;
  spec.kind = ParseCheckerKind(a.checker);
  spec.max_samples = a.max_samples;
  spec.mode = ParseEnsembleMode(a.mode);
  auto checker =
      MakeChecker(spec, ModelIfNeeded(a.model, spec.kind == CheckerKind::kDcpf), a.seed);
  const PlanResult r = HybridAStar(s, *checker);

  std::filesystem::create_directories(a.out);
  SaveScenario(s, std::filesystem::path(a.out) / "scenario.json");
  std::printf("%s with %s at p_max %g: expanded %zu, queries %llu, %.2f s\n", s.name.c_str(),
              spec.label().c_str(), s.p_max, r.expanded,
              static_cast<unsigned long long>(r.checker_queries), r.seconds);
  if (!r.found) {
    const char* why = r.start_unsafe       ? "start state unsafe"
                      : r.timed_out        ? "timed out"
                      : r.budget_exhausted ? "node budget exhausted"
                                           : "no safe path";
    std::printf("infeasible: %s\n", why);
    return kExitInfeasible;
  }
  WritePathCsv(r, std::filesystem::path(a.out) / "path.csv");
  WritePathSvg(s, r, std::filesystem::path(a.out) / "path.svg", 20, a.seed);
  std::printf("path of %zu states, cost %.3f\n", r.path.size(), r.cost);
  if (a.oracle_samples > 0) {
    RngStream rng(a.seed, 0x0c1e);
    std::size_t violations = 0;
    double worst = 0.0;
    for (const PlanState& st : r.path) {
      const OracleCheck o = OracleCp(st.pose, st.t, s, a.oracle_samples, rng);
      worst = std::max(worst, o.estimate.p_hat);
      if (o.ci_lower > s.p_max) ++violations;
    }
    std::printf("oracle: max cp %.4g, %zu violations\n", worst, violations);
  }
  return kExitOk;
}

struct BenchArgs {
  std::string suite;
  std::string out;
  std::string model;
  std::string dataset;
  std::size_t instances = 0;
  std::size_t queries = 200;
  std::uint64_t oracle_samples = 1000000;
  std::uint64_t seed = 1;
  double timeout = 0.0;
  unsigned threads = 1;
};

void PrintBench(const BenchReport& r) {
  std::printf("%-12s %7s %9s %9s %10s %12s %10s\n", "checker", "p_max", "solved", "cost",
              "time_s", "min_margin", "violations");
  for (const BenchRow& row : r.rows) {
    std::printf("%-12s %7g %4zu/%-4zu %9.2f %10.3f %12.3g %10zu", row.checker.c_str(), row.p_max,
                row.solved, row.instances, row.cost_mean, row.time_mean, row.min_margin,
                row.violations);
    if (row.overtake_before + row.overtake_after + row.overtake_none > 0) {
      std::printf("  before %zu after %zu none %zu", row.overtake_before, row.overtake_after,
                  row.overtake_none);
    }
    std::printf("\n");
  }
}

int RunBenchSuite(const BenchArgs& a) {
  std::filesystem::create_directories(a.out);
  if (a.suite == "timing") {
    TimingConfig cfg;
    cfg.model = ModelIfNeeded(a.model, true);
    cfg.seed = a.seed;
    if (a.dataset.empty()) {
      FillQueryMix(cfg, a.queries, a.seed);
    } else {
      FillQueryMix(cfg, ReadDataset(a.dataset), a.queries, a.seed);
    }
    const TimingReport r = RunTimingSuite(cfg);
    WriteTimingCsv(r, std::filesystem::path(a.out) / "timing.csv");
    std::printf("%-6s %7s %6s %12s %8s %12s\n", "method", "p_max", "batch", "mean_s", "cv",
                "samples");
    for (const TimingRow& row : r.rows) {
      std::printf("%-6s %7g %6zu %12.4g %8.3f %12.0f\n", row.method.c_str(), row.p_max, row.batch,
                  row.mean_seconds, row.cv, row.mean_samples);
    }
    for (const SprtSampleCount& c : r.sprt_counts) {
      std::printf("sprt samples at p_max %g: %.0f (true cp = p_max), %.0f (true cp = p_max/10)\n",
                  c.p_max, c.samples_at_p_max, c.samples_at_tenth);
    }
    return kExitOk;
  }
  BenchConfig cfg = MakeSuite(a.suite, a.instances, a.seed);
  bool needs_model = false;
  for (const CheckerSpec& c : cfg.checkers) needs_model |= c.kind == CheckerKind::kDcpf;
  cfg.model = ModelIfNeeded(a.model, needs_model);
  cfg.oracle_samples = a.oracle_samples;
  cfg.timeout_seconds = a.timeout;
  cfg.threads = a.threads;
  for (std::size_t i = 0; i < cfg.scenarios.size(); ++i) {
    SaveScenario(cfg.scenarios[i],
                 std::filesystem::path(a.out) / (cfg.scenarios[i].name + ".json"));
  }
  const BenchReport r = RunBench(cfg);
  WriteBenchOutputs(r, cfg, a.out);
  PrintBench(r);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep collision probability fields"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-dataset", "Generate a balanced labelled dataset");
  gen_cmd->add_option("--out", gen.out, "Output CSV path")->required();
  gen_cmd->add_option("--n-records", gen.n_records, "Number of records");
  gen_cmd->add_option("--seed", gen.seed, "Seed");
  gen_cmd->add_option("--profile", gen.profile, "Accuracy profile")
      ->check(CLI::IsMember({"paper", "relaxed"}));
  gen_cmd->add_option("--threads", gen.threads, "Worker threads (0 = all cores)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train an ensemble");
  train_cmd->add_option("--dataset", tr.dataset, "Dataset CSV")->required();
  train_cmd->add_option("--out", tr.out, "Output model path")->required();
  train_cmd->add_option("--epochs", tr.epochs, "Epochs");
  train_cmd->add_option("--lr", tr.lr, "Learning rate");
  train_cmd->add_option("--gamma", tr.gamma, "Regularizer weight");
  train_cmd->add_option("--arch", tr.arch, "Main net size WxD");
  train_cmd->add_flag("--paper-arch", tr.paper_arch, "Use the 6x1024 / 3x512 sizes");
  train_cmd->add_option("--ensemble", tr.ensemble, "Members K");
  train_cmd->add_option("--batch", tr.batch, "Batch size");
  train_cmd->add_option("--seed", tr.seed, "Seed");
  train_cmd->add_option("--threads", tr.threads, "Members trained in parallel");

  std::string model_path, dataset_path, mode = "mean", csv;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a dataset");
  eval_cmd->add_option("--model", model_path, "Model file")->required();
  eval_cmd->add_option("--dataset", dataset_path, "Dataset CSV")->required();
  eval_cmd->add_option("--mode", mode, "Ensemble mode");
  eval_cmd->add_option("--csv", csv, "Write metrics CSV");

  std::string query, est_mode = "ci_upper";
  bool monte_carlo = false;
  std::uint64_t est_seed = 1;
  auto* est_cmd = app.add_subcommand("estimate", "Collision probability of one query");
  est_cmd->add_option("--model", model_path, "Model file (omit for Monte Carlo only)");
  est_cmd->add_option("--query", query, "rx,ry,rphi,l1,l2,sx,sy,sphi,sl1,sl2")->required();
  est_cmd->add_option("--mode", est_mode, "Ensemble mode");
  est_cmd->add_flag("--mc", monte_carlo, "Also run the Monte Carlo estimator");
  est_cmd->add_option("--seed", est_seed, "Monte Carlo seed");

  PlanArgs pl;
  auto* plan_cmd = app.add_subcommand("plan", "Plan a path under a collision probability bound");
  plan_cmd->add_option("--scenario", pl.scenario,
                       "Scenario JSON, or narrow / random:SEED / overtake:SEED")
      ->required();
  plan_cmd->add_option("--checker", pl.checker, "Checker")
      ->check(CLI::IsMember({"dcpf", "ztest", "sprt"}));
  plan_cmd->add_option("--pmax", pl.p_max, "Bound on the combined CP (default: scenario value)");
  plan_cmd->add_option("--out", pl.out, "Output directory")->required();
  plan_cmd->add_option("--model", pl.model, "Model file (dcpf checker)");
  plan_cmd->add_option("--mode", pl.mode, "Ensemble mode");
  plan_cmd->add_option("--max-samples", pl.max_samples, "Sample cap of the sampling checkers");
  plan_cmd->add_option("--oracle-samples", pl.oracle_samples,
                       "Re-check each path state with this many samples (0 = off)");
  plan_cmd->add_option("--seed", pl.seed, "Seed");

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark suite");
  bench_cmd->add_option("--suite", bn.suite, "Suite")
      ->required()
      ->check(CLI::IsMember({"narrow", "random", "overtake", "timing"}));
  bench_cmd->add_option("--out", bn.out, "Output directory")->required();
  bench_cmd->add_option("--model", bn.model, "Model file");
  bench_cmd->add_option("--dataset", bn.dataset, "Dataset to draw timing queries from");
  bench_cmd->add_option("--instances", bn.instances, "Scenario instances (random, overtake)");
  bench_cmd->add_option("--queries", bn.queries, "Timing query mix size");
  bench_cmd->add_option("--oracle-samples", bn.oracle_samples, "Oracle samples per path state");
  bench_cmd->add_option("--timeout", bn.timeout, "Per-plan timeout in seconds (0 = none)");
  bench_cmd->add_option("--threads", bn.threads, "Worker threads (0 = all cores)");
  bench_cmd->add_option("--seed", bn.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (*gen_cmd) return RunGenDataset(gen);
    if (*train_cmd) return RunTrain(tr);
    if (*eval_cmd) return RunEval(model_path, dataset_path, mode, csv);
    if (*est_cmd) return RunEstimate(model_path, query, est_mode, monte_carlo, est_seed);
    if (*plan_cmd) return RunPlan(pl);
    if (*bench_cmd) return RunBenchSuite(bn);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
