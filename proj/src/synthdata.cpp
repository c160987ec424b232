#include "s4t/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "s4t/error.hpp"
#include "s4t/io.hpp"
#include "s4t/rng.hpp"

namespace s4t {

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

std::vector<Color> SceneSpec::default_palette() {
  return {
      Color{0.45f, 0.60f, 0.80f},  // 0 stuff
      Color{0.35f, 0.55f, 0.30f},  // 1 stuff
      Color{0.55f, 0.50f, 0.45f},  // 2 stuff
      Color{0.60f, 0.40f, 0.30f},  // 3 stuff
      Color{0.80f, 0.30f, 0.30f},  // 4 thing
      Color{0.80f, 0.75f, 0.30f},  // 5 thing
      Color{0.55f, 0.35f, 0.65f},  // 6 thing
      Color{0.30f, 0.70f, 0.70f},  // 7 thing
  };
}

std::vector<double> SceneSpec::prior() const {
  std::vector<double> p(num_classes);
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) total += p[c] = std::pow(prior_ratio, static_cast<double>(c));
  for (double& v : p) v /= total;
  return p;
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("scene spec: " + msg); };
  if (height < 8 || width < 8) fail("images must be at least 8×8");
  if (num_classes < 2) fail("need at least 2 classes");
  if (num_stuff < 2 || num_stuff > num_classes) fail("need at least 2 stuff classes and no more than num_classes");
  if (num_stuff > height) fail("more stuff bands than rows");
  if (palette.size() != num_classes) fail("palette size must equal num_classes");
  if (!(prior_ratio > 0.0 && prior_ratio <= 1.0)) fail("prior_ratio must be in (0, 1]");
  if (!(band_jitter >= 0.0 && band_jitter < 1.0)) fail("band_jitter must be in [0, 1)");
  if (!(thing_presence > 0.0 && thing_presence <= 1.0)) fail("thing_presence must be in (0, 1]");
  if (source_noise < 0.0 || target_noise < 0.0 || color_jitter < 0.0) fail("noise levels must be non-negative");
  if (target_gain[0] > target_gain[1] || target_bias[0] > target_bias[1]) fail("empty target shift range");
}

DomainShift make_domain(const SceneSpec& spec, Domain domain, std::uint64_t seed) {
  DomainShift shift;
  if (domain == Domain::source) {
    shift.noise = spec.source_noise;
    return shift;
  }
  Rng rng(derive_seed(seed, 0xd0a1));
  for (std::size_t ch = 0; ch < 3; ++ch) {
    shift.gain[ch] = rng.uniform(spec.target_gain[0], spec.target_gain[1]);
    shift.bias[ch] = rng.uniform(spec.target_bias[0], spec.target_bias[1]);
  }
  shift.noise = spec.target_noise;
  return shift;
}

namespace {

// Splits `total` rows proportionally to `weights` (largest remainder).
std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rest;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] / sum * static_cast<double>(total);
    out[i] = static_cast<std::size_t>(std::floor(exact));
    used += out[i];
    rest.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < total; ++i, ++used) ++out[rest[i % rest.size()].second];
  // Every band keeps at least one row.
  for (std::size_t i = 0; i < out.size(); ++i) {
    while (out[i] == 0) {
      const auto donor = std::max_element(out.begin(), out.end()) - out.begin();
      --out[static_cast<std::size_t>(donor)];
      ++out[i];
    }
  }
  return out;
}

struct Thing {
  std::size_t cls;
  double area;
  bool disk;
};

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::uint64_t scene_seed, std::size_t index) {
  spec.validate();
  Rng rng(derive_seed(scene_seed, 0x5ce7e, index));
  const std::size_t H = spec.height, W = spec.width, plane = H * W;
  const std::vector<double> prior = spec.prior();

  Scene scene{LabelMap(H, W), Tensor({3, H, W})};
  auto paint = [&](std::size_t r, std::size_t c, std::size_t cls, const Color& color) {
    scene.labels.at(r, c) = static_cast<Label>(cls);
    for (std::size_t ch = 0; ch < 3; ++ch) scene.clean[ch * plane + r * W + c] = color[ch];
  };
  auto region_color = [&](std::size_t cls) {
    Color color = spec.palette[cls];
    for (float& v : color) v = static_cast<float>(v + rng.uniform(-spec.color_jitter, spec.color_jitter));
    return color;
  };

  // Stuff: bands in random order, heights proportional to the jittered prior.
  std::vector<std::size_t> order(spec.num_stuff);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  std::vector<double> weights;
  for (std::size_t cls : order) weights.push_back(prior[cls] * (1.0 + rng.uniform(-spec.band_jitter, spec.band_jitter)));
  const std::vector<std::size_t> heights = apportion(weights, H);
  std::size_t row = 0;
  for (std::size_t b = 0; b < order.size(); ++b) {
    const Color color = region_color(order[b]);
    for (std::size_t r = row; r < row + heights[b]; ++r)
      for (std::size_t c = 0; c < W; ++c) paint(r, c, order[b], color);
    row += heights[b];
  }

  // Things: expected area of class c matches prior_c·H·W; larger shapes first
  // so small ones stay visible.
  std::vector<Thing> things;
  for (std::size_t cls = spec.num_stuff; cls < spec.num_classes; ++cls) {
    if (!rng.bernoulli(spec.thing_presence)) continue;
    const double area = prior[cls] * static_cast<double>(plane) / spec.thing_presence * rng.uniform(0.7, 1.3);
    things.push_back({cls, std::max(area, 4.0), rng.bernoulli(0.5)});
  }
  std::stable_sort(things.begin(), things.end(), [](const Thing& a, const Thing& b) { return a.area > b.area; });
  for (const Thing& t : things) {
    const Color color = region_color(t.cls);
    if (t.disk) {
      const double radius = std::min(std::sqrt(t.area / std::numbers::pi), (std::min(H, W) - 1) / 2.0);
      const double cy = rng.uniform(radius, static_cast<double>(H) - radius);
      const double cx = rng.uniform(radius, static_cast<double>(W) - radius);
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
          const double dy = static_cast<double>(r) + 0.5 - cy, dx = static_cast<double>(c) + 0.5 - cx;
          if (dy * dy + dx * dx <= radius * radius) paint(r, c, t.cls, color);
        }
    } else {
      const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
      const auto h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(t.area * aspect))), 1, H);
      const auto w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(t.area / static_cast<double>(h))), 1, W);
      const auto r0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(H - h)));
      const auto c0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(W - w)));
      for (std::size_t r = r0; r < r0 + h; ++r)
        for (std::size_t c = c0; c < c0 + w; ++c) paint(r, c, t.cls, color);
    }
  }
  return scene;
}

Tensor apply_domain(const Tensor& clean, const DomainShift& shift, std::uint64_t noise_seed) {
  if (clean.rank() != 3 || clean.dim(0) != 3) throw ShapeError("apply_domain: expected 3×H×W image");
  Rng rng(derive_seed(noise_seed, 0x0153));
  const std::size_t plane = clean.dim(1) * clean.dim(2);
  Tensor out(clean.shape());
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      double v = shift.gain[ch] * clean[ch * plane + i] + shift.bias[ch];
      if (shift.noise > 0.0) v += shift.noise * rng.normal();
      v = std::clamp(v, 0.0, 1.0);
      out[ch * plane + i] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
    }
  }
  return out;
}

Dataset generate(const SceneSpec& spec, std::size_t n, std::uint64_t scene_seed, Domain domain,
                 std::uint64_t domain_seed) {
  if (n == 0) throw Error("generate: dataset size must be at least 1");
  spec.validate();
  const DomainShift shift = make_domain(spec, domain, domain_seed);
  Dataset data;
  data.domain = domain;
  data.images.resize(n);
  data.labels.resize(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    Scene scene = generate_scene(spec, scene_seed, i);
    data.images[i] = apply_domain(scene.clean, shift, derive_seed(domain_seed, scene_seed, i, domain == Domain::target));
    data.labels[i] = std::move(scene.labels);
  }
  return data;
}

Dataset source_dataset(const SceneSpec& spec, std::size_t n, std::uint64_t seed) {
  return generate(spec, n, derive_seed(seed, 1), Domain::source, seed);
}

Dataset target_dataset(const SceneSpec& spec, std::size_t n, std::uint64_t seed) {
  return generate(spec, n, derive_seed(seed, 2), Domain::target, seed);
}

Benchmark make_benchmark(const SceneSpec& spec, std::size_t n_source, std::size_t n_target, std::uint64_t seed) {
  return {source_dataset(spec, n_source, seed), target_dataset(spec, n_target, seed)};
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const Dataset& data, std::size_t num_classes) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu", i);
    ManifestEntry e{dir / "images" / (std::string(name) + ".ppm"), std::nullopt};
    write_ppm(e.image, data.images[i]);
    if (i < data.labels.size()) {
      e.label = dir / "labels" / (std::string(name) + ".pgm");
      write_label_pgm(*e.label, data.labels[i], num_classes);
    }
    entries.push_back(std::move(e));
  }
  const std::filesystem::path manifest = dir / "manifest.txt";
  write_manifest(manifest, entries);
  return manifest;
}

Dataset read_dataset(const std::filesystem::path& manifest, std::size_t num_classes, bool with_labels) {
  const std::vector<ManifestEntry> entries = read_manifest(manifest);
  if (entries.empty()) throw Error("manifest " + manifest.string() + " lists no images");
  Dataset data;
  for (const ManifestEntry& e : entries) {
    data.images.push_back(read_ppm(e.image));
    if (with_labels) {
      if (!e.label) throw Error("manifest " + manifest.string() + ": no label for " + e.image.string());
      data.labels.push_back(read_label_pgm(*e.label, num_classes));
    }
  }
  return data;
}

}  // namespace s4t
