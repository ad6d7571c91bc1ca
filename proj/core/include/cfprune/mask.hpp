#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cfprune/tensor.hpp"

namespace cfprune {

// Keep-mask for one weight matrix; true = kept.
struct LayerMask {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;

  static LayerMask all_kept(std::string name, std::size_t rows, std::size_t cols);

  std::size_t numel() const noexcept { return keep.size(); }
  std::size_t kept() const noexcept;
  std::size_t pruned() const noexcept { return numel() - kept(); }
  double sparsity() const noexcept;
  bool kept_at(std::size_t r, std::size_t c) const { return keep[r * cols + c] != 0; }

  friend bool operator==(const LayerMask&, const LayerMask&) = default;
};

// Masks for the pruned layers of a model, in model order.
struct PruneMask {
  std::vector<LayerMask> layers;

  const LayerMask* find(const std::string& name) const;
  std::size_t kept() const noexcept;
  std::size_t numel() const noexcept;

  friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

// Zeroes the entries of `weight` not kept by `mask`.
void apply_mask(Tensor& weight, const LayerMask& mask);

// Packs keep bits row-major, least-significant bit first within each byte.
std::vector<std::uint8_t> pack_mask_bits(const LayerMask& mask);
LayerMask unpack_mask_bits(std::string name, std::size_t rows, std::size_t cols,
                           const std::vector<std::uint8_t>& bytes);

}  // namespace cfprune
