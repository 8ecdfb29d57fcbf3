// seisbench: DAS-style seismic patch classification benchmark kit.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace seisbench {

// Error taxonomy. CLI maps these onto exit codes.
struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64 finalizer (Steele/Vigna). Used for seed derivation and as the
// avalanche stage of every RNG stream in the project.
inline std::uint64_t avalanche64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

// Per-item seed derivation: mix64(master, index). Published mixer, fixed for
// the life of every serialized artifact.
inline std::uint64_t mix64(std::uint64_t seed, std::uint64_t index) {
  return avalanche64(seed + 0x9e3779b97f4a7c15ULL * (index + 1));
}

// Independent seed streams so e.g. reference images never collide with
// training images generated from the same master seed.
enum class SeedStream : std::uint64_t {
  Dataset = 0x5d4e3c2b1a090807ULL,
  Reference = 0xa1b2c3d4e5f60718ULL,
  ModelInit = 0x123456789abcdef0ULL,
  Shuffle = 0x0fedcba987654321ULL,
  SweepRun = 0x7777777777777777ULL,
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream,
                                 std::uint64_t index) {
  return mix64(mix64(master, static_cast<std::uint64_t>(stream)), index);
}

// Counter-free splitmix64 generator with a Box-Muller gaussian. All sampling
// happens in double so float and double builds draw identical values.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return avalanche64(state_);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace seisbench
