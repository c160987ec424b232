#pragma once

// File formats:
//   tensor container  "S4TT" | u8 version=1 | u8 rank | rank × u32 LE dims | f32 LE payload
//   named entries     repeated { u16 LE name length | UTF-8 name | tensor container } (checkpoints)
//   images            binary PPM (P6, maxval 255), 3×H×W floats in [0,1] ↔ bytes
//   label maps        binary PGM (P5, maxval C−1)
//   binary masks      binary PGM (P5, maxval 255; 0 or 255)
//   manifest          text, one sample per line: <image.ppm>[\t<label.pgm>]

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s4t/maps.hpp"
#include "s4t/tensor.hpp"

namespace s4t {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
// Decodes one container starting at `offset`; advances it. Errors carry byte offsets.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void save_named_tensors(const std::filesystem::path& path, std::span<const NamedTensor> entries);
std::vector<NamedTensor> load_named_tensors(const std::filesystem::path& path);

// 3×H×W image, values quantized to round(255·v) after clamping to [0,1].
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels, std::size_t num_classes);
LabelMap read_label_pgm(const std::filesystem::path& path, std::size_t num_classes);

void write_mask_pgm(const std::filesystem::path& path, const BinaryMap& mask);
BinaryMap read_mask_pgm(const std::filesystem::path& path);

// 3×H×W colour rendering of a label map with a per-class palette (RGB in [0,1]).
void write_label_ppm(const std::filesystem::path& path, const LabelMap& labels,
                     std::span<const std::array<float, 3>> palette);

struct ManifestEntry {
  std::filesystem::path image;
  std::optional<std::filesystem::path> label;
};

// Relative paths are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
// Paths are written relative to the manifest's directory when possible.
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace s4t
