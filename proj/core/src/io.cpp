#include "cfprune/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "cfprune/error.hpp"

namespace cfprune::io {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian hosts");

namespace {

ordered_json parse_json_file(const fs::path& path) {
  try {
    return ordered_json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<std::size_t> shape_from_json(const ordered_json& j) {
  auto shape = j.get<std::vector<std::size_t>>();
  if (shape.empty()) throw IoError("empty tensor shape in index");
  return shape;
}

void check_version(const ordered_json& j, const fs::path& path) {
  if (!j.contains("format_version") || j["format_version"] != kFormatVersion) {
    throw IoError(path.string() + ": unsupported or missing format_version");
  }
}

}  // namespace

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_f32(const fs::path& path, std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + 4 * i, &f, 4);
  }
  write_bytes(path, bytes);
}

std::vector<double> read_f32(const fs::path& path, std::size_t expected_count) {
  const auto bytes = read_bytes(path);
  if (bytes.size() != expected_count * 4) {
    throw IoError(path.string() + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(expected_count * 4));
  }
  std::vector<double> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 4 * i, 4);
    out[i] = f;
  }
  return out;
}

void save_model(const ModelGraph& model, const fs::path& dir) {
  fs::create_directories(dir);
  ordered_json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["loss"] = std::string(to_string(model.head()));
  ordered_json blocks = ordered_json::array();
  for (std::size_t b = 0; b < model.block_count(); ++b) {
    ordered_json block;
    block["name"] = model.block_name(b);
    ordered_json layers = ordered_json::array();
    for (auto i : model.block_layers(b)) {
      const auto& l = model.layer(i);
      ordered_json lj;
      lj["name"] = l.name;
      lj["kind"] = std::string(to_string(l.kind));
      lj["shape"] = l.weight.shape();
      lj["activation"] = std::string(to_string(l.activation));
      lj["frozen"] = l.frozen;
      lj["weight_file"] = l.name + ".bin";
      if (l.bias) lj["bias_file"] = l.name + ".bias.bin";
      if (l.kind == LayerKind::kEmbedding) lj["input_slots"] = l.input_slots;
      layers.push_back(std::move(lj));
      write_f32(dir / (l.name + ".bin"), l.weight.values());
      if (l.bias) write_f32(dir / (l.name + ".bias.bin"), l.bias->values());
    }
    block["layers"] = std::move(layers);
    blocks.push_back(std::move(block));
  }
  manifest["blocks"] = std::move(blocks);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

ModelGraph load_model(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  const auto manifest = parse_json_file(path);
  check_version(manifest, path);
  try {
    std::vector<Block> blocks;
    for (const auto& bj : manifest.at("blocks")) {
      Block block{bj.at("name").get<std::string>(), {}};
      for (const auto& lj : bj.at("layers")) {
        LayerSpec l;
        l.name = lj.at("name").get<std::string>();
        l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
        auto shape = shape_from_json(lj.at("shape"));
        if (shape.size() != 2) throw DimensionError("layer '" + l.name + "' shape must be [d_out, d_in]");
        const auto n = shape_numel(shape);
        l.weight = Tensor(shape, read_f32(dir / lj.at("weight_file").get<std::string>(), n));
        if (lj.contains("bias_file")) {
          l.bias = Tensor({shape[0]}, read_f32(dir / lj.at("bias_file").get<std::string>(), shape[0]));
        }
        l.activation = parse_activation(lj.at("activation").get<std::string>());
        l.frozen = lj.at("frozen").get<bool>();
        l.input_slots = lj.value("input_slots", std::size_t{1});
        block.layers.push_back(std::move(l));
      }
      blocks.push_back(std::move(block));
    }
    return ModelGraph(std::move(blocks), parse_loss_kind(manifest.at("loss").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void save_calibration(const CalibrationSet& set, const fs::path& index_path) {
  set.validate();
  const auto dir = index_path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  const auto stem = index_path.stem().string();
  std::vector<double> inputs;
  std::vector<double> targets;
  ordered_json samples = ordered_json::array();
  for (const auto& s : set.samples) {
    inputs.insert(inputs.end(), s.input.data().begin(), s.input.data().end());
    targets.insert(targets.end(), s.target.data().begin(), s.target.data().end());
    samples.push_back({{"input_shape", s.input.shape()}, {"target_shape", s.target.shape()}});
  }
  ordered_json index;
  index["format_version"] = kFormatVersion;
  index["inputs_file"] = stem + ".inputs.bin";
  index["targets_file"] = stem + ".targets.bin";
  index["samples"] = std::move(samples);
  write_f32(dir / (stem + ".inputs.bin"), inputs);
  write_f32(dir / (stem + ".targets.bin"), targets);
  write_text(index_path, index.dump(2) + "\n");
}

CalibrationSet load_calibration(const fs::path& index_path) {
  const auto index = parse_json_file(index_path);
  check_version(index, index_path);
  const auto dir = index_path.parent_path();
  try {
    std::vector<std::vector<std::size_t>> in_shapes;
    std::vector<std::vector<std::size_t>> t_shapes;
    std::size_t n_in = 0;
    std::size_t n_t = 0;
    for (const auto& sj : index.at("samples")) {
      in_shapes.push_back(shape_from_json(sj.at("input_shape")));
      t_shapes.push_back(shape_from_json(sj.at("target_shape")));
      n_in += shape_numel(in_shapes.back());
      n_t += shape_numel(t_shapes.back());
    }
    const auto inputs = read_f32(dir / index.at("inputs_file").get<std::string>(), n_in);
    const auto targets = read_f32(dir / index.at("targets_file").get<std::string>(), n_t);
    CalibrationSet set;
    std::size_t oi = 0;
    std::size_t ot = 0;
    for (std::size_t k = 0; k < in_shapes.size(); ++k) {
      const auto ni = shape_numel(in_shapes[k]);
      const auto nt = shape_numel(t_shapes[k]);
      set.samples.push_back(
          {Tensor(in_shapes[k], {inputs.begin() + static_cast<std::ptrdiff_t>(oi),
                                 inputs.begin() + static_cast<std::ptrdiff_t>(oi + ni)}),
           Tensor(t_shapes[k], {targets.begin() + static_cast<std::ptrdiff_t>(ot),
                                targets.begin() + static_cast<std::ptrdiff_t>(ot + nt)})});
      oi += ni;
      ot += nt;
    }
    set.validate();
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(index_path.string() + ": " + e.what());
  }
}

void save_masks(const PruneMask& masks, const fs::path& dir) {
  fs::create_directories(dir);
  ordered_json index;
  index["format_version"] = kFormatVersion;
  index["bit_order"] = "row-major, lsb-first";
  ordered_json layers = ordered_json::array();
  for (const auto& m : masks.layers) {
    const auto file = m.name + ".mask.bin";
    write_bytes(dir / file, pack_mask_bits(m));
    layers.push_back({{"name", m.name},
                      {"shape", {m.rows, m.cols}},
                      {"file", file},
                      {"kept", m.kept()},
                      {"sparsity", m.sparsity()}});
  }
  index["layers"] = std::move(layers);
  write_text(dir / "masks.json", index.dump(2) + "\n");
}

PruneMask load_masks(const fs::path& dir) {
  const auto path = dir / "masks.json";
  const auto index = parse_json_file(path);
  check_version(index, path);
  PruneMask out;
  try {
    for (const auto& lj : index.at("layers")) {
      auto shape = lj.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw IoError("mask shape must be rank 2");
      out.layers.push_back(unpack_mask_bits(lj.at("name").get<std::string>(), shape[0], shape[1],
                                            read_bytes(dir / lj.at("file").get<std::string>())));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace cfprune::io
