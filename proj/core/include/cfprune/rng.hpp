#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace cfprune {

// Stateless standard-normal stream addressed by (key, index), so any noise tensor
// can be regenerated from its key without storing it.
class CounterNormal {
 public:
  CounterNormal(std::uint64_t seed, std::uint64_t layer, std::uint64_t noise);

  std::uint64_t key() const noexcept { return key_; }
  double at(std::uint64_t index) const noexcept;
  void fill(std::span<double> out) const noexcept;

 private:
  std::uint64_t key_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Sequential generator with platform-independent conversions. The std
// distributions are implementation-defined, which would make generated tasks and
// fixtures differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();  // [0, 1)
  double normal();
  std::size_t index(std::size_t n);  // uniform in [0, n)
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cfprune
