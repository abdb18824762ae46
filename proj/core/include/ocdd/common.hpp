#pragma once

#include <cstdint>
#include <cstdlib>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ocdd {

/// Error taxonomy shared by all modules. The CLI maps kinds to exit codes
/// (io -> 1, usage/config/shape/format -> 2, numeric -> 3).
class Error : public std::runtime_error {
 public:
  enum class Kind { io, usage, config, shape, format, numeric };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(Error::Kind::io, msg); }
[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(Error::Kind::usage, msg); }
[[noreturn]] inline void throw_config(const std::string& msg) { throw Error(Error::Kind::config, msg); }
[[noreturn]] inline void throw_shape(const std::string& msg) { throw Error(Error::Kind::shape, msg); }
[[noreturn]] inline void throw_format(const std::string& msg) { throw Error(Error::Kind::format, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(Error::Kind::numeric, msg); }

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Derive an independent stream seed from a base seed and up to two tags.
/// Used to give every (step, batch item) / (trajectory index) its own RNG so
/// results do not depend on thread scheduling.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0) {
  uint64_t s = base;
  uint64_t h = detail::splitmix64(s);
  s ^= a * 0x9e3779b97f4a7c15ULL;
  h ^= detail::splitmix64(s);
  s ^= b * 0xd1342543de82ef95ULL;
  h ^= detail::splitmix64(s);
  return h;
}

/// xoshiro256++ with explicit uniform/normal converters. Self-contained so
/// streams are bit-identical across standard libraries and runs.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) {
    uint64_t s = seed;
    for (auto& word : state_) word = detail::splitmix64(s);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). n must be > 0.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }

  /// Standard normal via Box-Muller (cached pair).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// k distinct integers drawn from [0, n), in draw order.
  std::vector<int> distinct_ints(int n, int k) {
    std::vector<int> out;
    out.reserve(k);
    while (static_cast<int>(out.size()) < k) {
      int v = uniform_int(n);
      bool dup = false;
      for (int seen : out) dup = dup || (seen == v);
      if (!dup) out.push_back(v);
    }
    return out;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Worker cap: OCDD_THREADS env var, else hardware concurrency.
inline int max_threads() {
  if (const char* env = std::getenv("OCDD_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Run fn(i) for i in [0, n) on up to max_threads() workers. Blocks until all
/// items are done. fn must not throw across items it does not own; exceptions
/// are captured and rethrown (first one wins).
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  int workers = std::min(max_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace ocdd
