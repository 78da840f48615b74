#include "dcpf/mc_estimator.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcpf {
namespace {

constexpr double kZ95TwoSided = 1.96;
constexpr double kZ95OneSided = 1.645;
constexpr double kMinSampledLength = 1e-3;

// Exact one-sided 95% bound on p after n misses.
double ZeroHitUpper(std::uint64_t n) {
  return -std::expm1(std::log(0.05) / static_cast<double>(n));
}

}  // namespace

void ObstacleSpec::Validate() const {
  for (double v : mean) {
    if (!std::isfinite(v)) throw std::invalid_argument("obstacle mean is not finite");
  }
  if (!(l1() > 0.0) || !(l2() > 0.0)) {
    throw std::invalid_argument("obstacle side lengths must be positive");
  }
  for (double s : sigma) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("obstacle standard deviations must be finite and >= 0");
    }
  }
}

void CpQuery::Validate() const {
  robot.Validate();
  obstacle.Validate();
  if (!std::isfinite(robot_pose.x) || !std::isfinite(robot_pose.y) ||
      !std::isfinite(robot_pose.phi)) {
    throw std::invalid_argument("robot pose is not finite");
  }
  if (obstacle.mean[0] != 0.0 || obstacle.mean[1] != 0.0 || obstacle.mean[2] != 0.0) {
    throw std::invalid_argument("query obstacle must sit at the frame origin");
  }
}

CpQuery CpQuery::FromWorld(const Pose2& robot_pose, const RobotSpec& robot,
                           const ObstacleSpec& obstacle) {
  CpQuery q;
  q.robot_pose = obstacle.pose().Relative(robot_pose);
  q.robot = robot;
  q.obstacle = obstacle;
  q.obstacle.mean[0] = 0.0;
  q.obstacle.mean[1] = 0.0;
  q.obstacle.mean[2] = 0.0;
  return q;
}

AccuracyProfile AccuracyProfile::Relaxed() {
  AccuracyProfile p;
  p.accuracies = {1e-3, 1e-2, 1e-2};
  p.batch_size = 10000;
  return p;
}

void AccuracyProfile::Validate() const {
  if (boundaries.size() < 2 || accuracies.size() + 1 != boundaries.size()) {
    throw std::invalid_argument("profile needs one accuracy per interval");
  }
  for (std::size_t i = 0; i + 1 < boundaries.size(); ++i) {
    if (!(boundaries[i] < boundaries[i + 1])) {
      throw std::invalid_argument("profile boundaries must be strictly increasing");
    }
  }
  if (boundaries.front() != 0.0 || boundaries.back() != 1.0) {
    throw std::invalid_argument("profile must cover [0, 1]");
  }
  for (double a : accuracies) {
    if (!(a > 0.0)) throw std::invalid_argument("accuracies must be positive");
  }
  if (batch_size < 1 || max_samples < batch_size) {
    throw std::invalid_argument("profile batch_size must be in [1, max_samples]");
  }
}

std::size_t AccuracyProfile::BucketOf(double p) const {
  for (std::size_t i = 0; i + 2 < boundaries.size(); ++i) {
    if (p < boundaries[i + 1]) return i;
  }
  return accuracies.size() - 1;
}

std::uint64_t HitSource::CountHits(std::uint64_t n, RngStream& rng) const {
  std::uint64_t hits = 0;
  for (std::uint64_t i = 0; i < n; ++i) hits += Draw(rng) ? 1 : 0;
  return hits;
}

QuerySampler::QuerySampler(const CpQuery& query) : query_(query) {
  query_.Validate();
  robot_corners_ = RectCorners(query.robot.width, query.robot.height, query.robot_pose);
  robot_center_ = query.robot_pose.position();
  robot_outer_radius_ = 0.5 * std::hypot(query.robot.width, query.robot.height);
  robot_inner_radius_ = 0.5 * std::min(query.robot.width, query.robot.height);
}

bool QuerySampler::Draw(RngStream& rng) const {
  const ObstacleSpec& o = query_.obstacle;
  std::array<double, 5> q = o.mean;
  for (std::size_t d = 0; d < 5; ++d) {
    if (o.sigma[d] > 0.0) q[d] += o.sigma[d] * rng.Normal();
  }
  const double l1 = std::max(q[3], kMinSampledLength);
  const double l2 = std::max(q[4], kMinSampledLength);

  // Circle bounds decide most far-field and deep-overlap draws exactly.
  const double dx = q[0] - robot_center_.x;
  const double dy = q[1] - robot_center_.y;
  const double dist2 = dx * dx + dy * dy;
  const double outer = robot_outer_radius_ + 0.5 * std::sqrt(l1 * l1 + l2 * l2) + kGeomTolerance;
  if (dist2 > outer * outer) return false;
  const double inner = robot_inner_radius_ + 0.5 * std::min(l1, l2);
  if (dist2 < inner * inner) return true;

  const double c = std::cos(q[2]);
  const double s = std::sin(q[2]);
  const Vec2 u{0.5 * l1 * c, 0.5 * l1 * s};
  const Vec2 v{-0.5 * l2 * s, 0.5 * l2 * c};
  const Vec2 center{q[0], q[1]};
  const std::array<Vec2, 4> obstacle = {center - u - v, center + u - v, center + u + v,
                                        center - u + v};
  return Intersects(robot_corners_, obstacle);
}

JointSampler::JointSampler(std::span<const CpQuery> queries) {
  samplers_.reserve(queries.size());
  for (const CpQuery& q : queries) samplers_.emplace_back(q);
}

bool JointSampler::Draw(RngStream& rng) const {
  // Every obstacle is drawn even after a hit so the stream layout does not
  // depend on the outcome order.
  bool hit = false;
  for (const QuerySampler& s : samplers_) hit = s.Draw(rng) || hit;
  return hit;
}

BernoulliSource::BernoulliSource(double p) : p_(p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probability outside [0, 1]");
}

bool SampleCollision(const CpQuery& query, RngStream& rng) {
  return QuerySampler(query).Draw(rng);
}

std::pair<double, double> CltInterval(std::uint64_t hits, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("CLT interval needs at least one sample");
  if (hits > n) throw std::invalid_argument("hits exceed sample count");
  if (hits == 0) return {0.0, ZeroHitUpper(n)};
  if (hits == n) return {1.0 - ZeroHitUpper(n), 1.0};
  const double p = static_cast<double>(hits) / static_cast<double>(n);
  const double half = kZ95TwoSided * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  return {std::max(0.0, p - half), std::min(1.0, p + half)};
}

double CltHalfWidth(std::uint64_t hits, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("CLT interval needs at least one sample");
  if (hits == 0 || hits == n) return ZeroHitUpper(n);
  const double p = static_cast<double>(hits) / static_cast<double>(n);
  return kZ95TwoSided * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

CpEstimate EstimateCpAdaptive(const HitSource& source, const AccuracyProfile& profile,
                              RngStream& rng) {
  profile.Validate();
  CpEstimate est;
  while (est.n < profile.max_samples) {
    const std::uint64_t batch = std::min(profile.batch_size, profile.max_samples - est.n);
    est.hits += source.CountHits(batch, rng);
    est.n += batch;
    est.p_hat = static_cast<double>(est.hits) / static_cast<double>(est.n);
    est.ci_half_width = CltHalfWidth(est.hits, est.n);
    if (est.ci_half_width <= profile.AccuracyFor(est.p_hat)) break;
  }
  return est;
}

CpEstimate EstimateCpAdaptive(const CpQuery& query, const AccuracyProfile& profile,
                              RngStream& rng) {
  return EstimateCpAdaptive(QuerySampler(query), profile, rng);
}

CpEstimate EstimateCpFixed(const HitSource& source, std::uint64_t n, RngStream& rng) {
  CpEstimate est;
  est.n = n;
  est.hits = source.CountHits(n, rng);
  est.p_hat = static_cast<double>(est.hits) / static_cast<double>(n);
  est.ci_half_width = CltHalfWidth(est.hits, n);
  return est;
}

std::uint64_t MaxSamples(const AccuracyProfile& profile) {
  profile.Validate();
  double worst = 0.0;
  for (std::size_t i = 0; i < profile.accuracies.size(); ++i) {
    const double lo = profile.boundaries[i];
    const double hi = profile.boundaries[i + 1];
    // p(1-p) peaks at 0.5; otherwise at the interval end closest to it.
    const double p = (lo <= 0.5 && 0.5 <= hi) ? 0.5 : (hi < 0.5 ? hi : lo);
    const double eps = profile.accuracies[i];
    worst = std::max(worst, kZ95TwoSided * kZ95TwoSided * p * (1.0 - p) / (eps * eps));
  }
  // Absorb representation error before rounding up (3803184.0000000005).
  return static_cast<std::uint64_t>(std::ceil(worst * (1.0 - 1e-12)));
}

SafetyDecision ZTestCheck(const HitSource& source, double p_max, std::uint64_t n_max,
                          RngStream& rng, const ZTestOptions& options) {
  if (!(p_max > 0.0 && p_max < 1.0)) throw std::invalid_argument("p_max must be in (0, 1)");
  SafetyDecision d;
  std::uint64_t hits = 0;
  while (d.samples_used < n_max) {
    const std::uint64_t step =
        d.samples_used < options.switch_at ? options.small_batch : options.large_batch;
    const std::uint64_t batch = std::min(step, n_max - d.samples_used);
    hits += source.CountHits(batch, rng);
    d.samples_used += batch;
    const double n = static_cast<double>(d.samples_used);
    d.p_hat = static_cast<double>(hits) / n;
    double upper;
    double lower;
    if (hits == 0) {
      upper = ZeroHitUpper(d.samples_used);
      lower = 0.0;
    } else if (hits == d.samples_used) {
      upper = 1.0;
      lower = 1.0 - ZeroHitUpper(d.samples_used);
    } else {
      const double se = std::sqrt(d.p_hat * (1.0 - d.p_hat) / n);
      upper = d.p_hat + kZ95OneSided * se;
      lower = d.p_hat - kZ95OneSided * se;
    }
    if (upper < p_max) {
      d.verdict = SafetyDecision::Verdict::kSafe;
      return d;
    }
    if (lower > p_max) {
      d.verdict = SafetyDecision::Verdict::kUnsafe;
      return d;
    }
  }
  d.verdict = SafetyDecision::Verdict::kUnsafe;
  d.budget_exhausted = true;
  return d;
}

SafetyDecision SprtCheck(const HitSource& source, double p_max, std::uint64_t n_max,
                         const SprtParams& params, RngStream& rng) {
  if (!(p_max > 0.0 && p_max < 1.0)) throw std::invalid_argument("p_max must be in (0, 1)");
  if (!(params.delta > 0.0 && params.delta < 1.0)) {
    throw std::invalid_argument("SPRT delta must be in (0, 1)");
  }
  if (!(params.alpha > 0.0 && params.alpha < 0.5 && params.beta > 0.0 && params.beta < 0.5)) {
    throw std::invalid_argument("SPRT alpha and beta must be in (0, 0.5)");
  }
  const double p_unsafe = p_max * (1.0 + params.delta);
  const double p_safe = p_max * (1.0 - params.delta);
  if (p_unsafe >= 1.0) throw std::invalid_argument("p_max * (1 + delta) must be < 1");

  // Log-likelihood ratio of the unsafe over the safe hypothesis.
  const double on_hit = std::log(p_unsafe / p_safe);
  const double on_miss = std::log1p(-p_unsafe) - std::log1p(-p_safe);
  const double accept_unsafe = std::log((1.0 - params.beta) / params.alpha);
  const double accept_safe = std::log(params.beta / (1.0 - params.alpha));

  SafetyDecision d;
  std::uint64_t hits = 0;
  double llr = 0.0;
  while (d.samples_used < n_max) {
    const bool hit = source.Draw(rng);
    ++d.samples_used;
    hits += hit ? 1 : 0;
    llr += hit ? on_hit : on_miss;
    if (llr <= accept_safe || llr >= accept_unsafe) {
      d.verdict = llr <= accept_safe ? SafetyDecision::Verdict::kSafe
                                     : SafetyDecision::Verdict::kUnsafe;
      d.p_hat = static_cast<double>(hits) / static_cast<double>(d.samples_used);
      return d;
    }
  }
  d.p_hat = d.samples_used ? static_cast<double>(hits) / static_cast<double>(d.samples_used) : 0.0;
  d.verdict = SafetyDecision::Verdict::kUnsafe;
  d.budget_exhausted = true;
  return d;
}

}  // namespace dcpf
