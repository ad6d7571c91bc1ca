#include "cfprune/rng.hpp"

#include <cmath>
#include <numbers>

namespace cfprune {

namespace {

// 53 random bits mapped to (0, 1].
double open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

CounterNormal::CounterNormal(std::uint64_t seed, std::uint64_t layer, std::uint64_t noise)
    : key_(splitmix64(splitmix64(splitmix64(seed) ^ layer) ^ noise)) {}

double CounterNormal::at(std::uint64_t index) const noexcept {
  const std::uint64_t pair = index >> 1;
  const double u1 = open_unit(splitmix64(key_ ^ splitmix64(2 * pair)));
  const double u2 = open_unit(splitmix64(key_ ^ splitmix64(2 * pair + 1)));
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return (index & 1) ? r * std::sin(theta) : r * std::cos(theta);
}

void CounterNormal::fill(std::span<double> out) const noexcept {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(i);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = open_unit(engine_());
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::index(std::size_t n) {
  // Multiply-shift keeps this portable; the bias is negligible for the small n used here.
  __extension__ using u128 = unsigned __int128;
  return static_cast<std::size_t>((static_cast<u128>(engine_()) * n) >> 64);
}

}  // namespace cfprune
