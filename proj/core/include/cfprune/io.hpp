#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cfprune/mask.hpp"
#include "cfprune/model.hpp"

namespace cfprune::io {

inline constexpr const char* kFormatVersion = "1";

// Little-endian IEEE-754 binary32, no header.
void write_f32(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Model directory: manifest.json plus one <layer>.bin per weight (and <layer>.bias.bin).
void save_model(const ModelGraph& model, const std::filesystem::path& dir);
ModelGraph load_model(const std::filesystem::path& dir);

// Calibration file: a JSON index at `index_path` with sample shapes; tensors live in
// <stem>.inputs.bin and <stem>.targets.bin next to it, concatenated in sample order.
void save_calibration(const CalibrationSet& set, const std::filesystem::path& index_path);
CalibrationSet load_calibration(const std::filesystem::path& index_path);

// Masks directory: masks.json index plus one <layer>.mask.bin bitmap per layer.
void save_masks(const PruneMask& masks, const std::filesystem::path& dir);
PruneMask load_masks(const std::filesystem::path& dir);

}  // namespace cfprune::io
