#pragma once

// Seeded synthetic segmentation benchmark. Scenes are horizontal "stuff"
// bands overlaid with "thing" rectangles and disks; class areas follow a
// geometric prior so the label distribution is long-tailed. The two domains
// share the scene generator and differ only photometrically.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s4t/maps.hpp"
#include "s4t/tensor.hpp"

namespace s4t {

using Color = std::array<float, 3>;

enum class Domain { source, target };
const char* to_string(Domain d);

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t num_classes = 8;
  std::size_t num_stuff = 4;     // classes [0, num_stuff) are bands, the rest are things
  double prior_ratio = 0.55;     // p_c ∝ ratio^c
  double band_jitter = 0.3;      // relative jitter of band heights
  double thing_presence = 0.75;  // chance that a thing class appears in a scene
  double color_jitter = 0.05;    // per-region offset of the palette colour
  std::vector<Color> palette = default_palette();

  double source_noise = 0.02;
  double target_noise = 0.08;
  std::array<double, 2> target_gain{0.6, 0.9};
  std::array<double, 2> target_bias{0.05, 0.2};

  static std::vector<Color> default_palette();
  bool is_thing(std::size_t c) const { return c >= num_stuff; }
  // Normalized class prior.
  std::vector<double> prior() const;
  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

// Photometric model of a domain: x ↦ clamp(gain·x + bias + σ·noise).
struct DomainShift {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> bias{0.0, 0.0, 0.0};
  double noise = 0.0;
};

DomainShift make_domain(const SceneSpec& spec, Domain domain, std::uint64_t seed);

struct Scene {
  LabelMap labels;
  Tensor clean;  // 3×H×W noiseless rendering
};

// Scene `index` of the stream identified by `scene_seed`.
Scene generate_scene(const SceneSpec& spec, std::uint64_t scene_seed, std::size_t index);

// Applies the domain and quantizes to multiples of 1/255 (so PPM files
// reproduce the tensor exactly).
Tensor apply_domain(const Tensor& clean, const DomainShift& shift, std::uint64_t noise_seed);

struct Dataset {
  Domain domain = Domain::source;
  std::vector<Tensor> images;
  std::vector<LabelMap> labels;

  std::size_t size() const { return images.size(); }
};

Dataset generate(const SceneSpec& spec, std::size_t n, std::uint64_t scene_seed, Domain domain,
                 std::uint64_t domain_seed);

struct Benchmark {
  Dataset source;
  Dataset target;
};

// Source and target use distinct scene streams derived from `seed`.
Dataset source_dataset(const SceneSpec& spec, std::size_t n, std::uint64_t seed);
Dataset target_dataset(const SceneSpec& spec, std::size_t n, std::uint64_t seed);
Benchmark make_benchmark(const SceneSpec& spec, std::size_t n_source, std::size_t n_target, std::uint64_t seed);

// Writes images/NNNN.ppm, labels/NNNN.pgm and manifest.txt under `dir`;
// returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const Dataset& data, std::size_t num_classes);

// Reads images listed in a manifest; labels are read only when requested.
Dataset read_dataset(const std::filesystem::path& manifest, std::size_t num_classes, bool with_labels);

}  // namespace s4t
