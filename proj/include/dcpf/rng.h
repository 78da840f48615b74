#ifndef DCPF_RNG_H_
#define DCPF_RNG_H_

#include <cstdint>
#include <random>

namespace dcpf {

// SplitMix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t MixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// One reproducible random stream. Streams derived from the same seed with
// different ids are statistically independent; each worker owns its own.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : engine_(MixSeed(MixSeed(seed) ^ MixSeed(stream_id + 0x632be59bd9b4e019ULL))) {}

  // Child stream keyed by `id`; does not advance this stream.
  RngStream Split(std::uint64_t id) const { return RngStream(key_ ^ MixSeed(id), id); }

  double Uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double Uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double Normal() { return normal_(engine_); }
  double Normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
  bool Bernoulli(double p) { return Uniform() < p; }
  std::uint64_t Next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t key_ = engine_();
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace dcpf

#endif  // DCPF_RNG_H_
