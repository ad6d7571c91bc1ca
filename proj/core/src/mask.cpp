#include "cfprune/mask.hpp"

#include <algorithm>

#include "cfprune/error.hpp"

namespace cfprune {

LayerMask LayerMask::all_kept(std::string name, std::size_t rows, std::size_t cols) {
  return LayerMask{std::move(name), rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

std::size_t LayerMask::kept() const noexcept {
  return static_cast<std::size_t>(std::count_if(keep.begin(), keep.end(), [](auto v) { return v != 0; }));
}

double LayerMask::sparsity() const noexcept {
  return numel() == 0 ? 0.0 : static_cast<double>(pruned()) / static_cast<double>(numel());
}

const LayerMask* PruneMask::find(const std::string& name) const {
  auto it = std::find_if(layers.begin(), layers.end(), [&](const auto& m) { return m.name == name; });
  return it == layers.end() ? nullptr : &*it;
}

std::size_t PruneMask::kept() const noexcept {
  std::size_t n = 0;
  for (const auto& m : layers) n += m.kept();
  return n;
}

std::size_t PruneMask::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& m : layers) n += m.numel();
  return n;
}

void apply_mask(Tensor& weight, const LayerMask& mask) {
  if (weight.numel() != mask.numel()) {
    throw DimensionError("mask for '" + mask.name + "' does not match weight size");
  }
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    if (!mask.keep[i]) weight[i] = 0.0;
  }
}

std::vector<std::uint8_t> pack_mask_bits(const LayerMask& mask) {
  std::vector<std::uint8_t> bytes((mask.numel() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    if (mask.keep[i]) bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return bytes;
}

LayerMask unpack_mask_bits(std::string name, std::size_t rows, std::size_t cols,
                           const std::vector<std::uint8_t>& bytes) {
  const std::size_t n = rows * cols;
  if (bytes.size() != (n + 7) / 8) {
    throw IoError("mask '" + name + "' holds " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string((n + 7) / 8));
  }
  LayerMask m{std::move(name), rows, cols, std::vector<std::uint8_t>(n, 0)};
  for (std::size_t i = 0; i < n; ++i) m.keep[i] = (bytes[i / 8] >> (i % 8)) & 1u;
  return m;
}

}  // namespace cfprune
