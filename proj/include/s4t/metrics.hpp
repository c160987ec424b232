#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "s4t/maps.hpp"
#include "s4t/pseudolabel.hpp"
#include "s4t/reliability.hpp"
#include "s4t/segmodel.hpp"

namespace s4t {

// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  void add(const LabelMap& gt, const LabelMap& pred);
  void merge(const ConfusionMatrix& other);

  std::size_t num_classes() const { return C_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * C_ + pred]; }
  std::uint64_t total() const;

 private:
  std::size_t C_;
  std::vector<std::uint64_t> counts_;
};

struct IoUReport {
  std::vector<std::optional<double>> per_class;  // empty when the class has zero union
  double miou = 0.0;
  double thing_miou = 0.0;
  double stuff_miou = 0.0;
  double pixel_accuracy = 0.0;
};

// Classes [0, num_stuff) are stuff, the rest things.
IoUReport iou(const ConfusionMatrix& conf, std::size_t num_stuff);

// Counts and accuracies of pseudolabels by pixel type for one batch.
struct PseudolabelReport {
  std::size_t total = 0;
  std::size_t reliable = 0, reliable_correct = 0;
  std::size_t unreliable = 0, unreliable_correct = 0;
  std::size_t rel_nbhd = 0, rel_nbhd_correct_before = 0, rel_nbhd_correct_after = 0;
  std::size_t unrel_nbhd = 0, unrel_nbhd_correct = 0;
  std::size_t masked = 0;

  void merge(const PseudolabelReport& o);
  static std::optional<double> ratio(std::size_t num, std::size_t den);
  std::optional<double> reliable_accuracy() const { return ratio(reliable_correct, reliable); }
  std::optional<double> unreliable_accuracy() const { return ratio(unreliable_correct, unreliable); }
  std::optional<double> rel_nbhd_before() const { return ratio(rel_nbhd_correct_before, rel_nbhd); }
  std::optional<double> rel_nbhd_after() const { return ratio(rel_nbhd_correct_after, rel_nbhd); }
  std::optional<double> unrel_nbhd_accuracy() const { return ratio(unrel_nbhd_correct, unrel_nbhd); }
  // Fractions of {reliable, unreliable with reliable neighbours, unreliable
  // with unreliable neighbours} among non-masked pixels.
  double fraction_reliable() const;
  double fraction_rel_nbhd() const;
  double fraction_unrel_nbhd() const;
};

// `interp` may be null (interpolation not run): reliable-neighbourhood pixels
// then keep their own prediction, so before == after.
PseudolabelReport pseudolabel_report(const LabelMap& view2, const ReliabilityMap& rel,
                                     const InterpolationResult* interp, const LabelMap& gt);

struct ReliabilityPrecision {
  std::vector<std::optional<double>> reliable_precision;    // P(correct | reliable, predicted c)
  std::vector<std::optional<double>> unreliable_precision;  // P(incorrect | unreliable, predicted c)
  std::vector<std::uint64_t> reliable_count, reliable_correct, unreliable_count, unreliable_incorrect;
};

ReliabilityPrecision reliability_precision(std::span<const BinaryMap> r, std::span<const LabelMap> view2,
                                           std::span<const LabelMap> gt, std::size_t num_classes);

// Pearson correlation over pairs where both values exist; empty with < 2 pairs
// or zero variance.
std::optional<double> pearson(std::span<const std::optional<double>> a, std::span<const std::optional<double>> b);

// Probabilities averaged over image scales (each resized to (H, W), predicted,
// resized back to native size with nearest neighbour), then renormalized.
// images: N×3×H×W; batch-stat BN sees the whole batch at each scale.
Tensor multiscale_probs(const SegNet& model, const Tensor& images, std::span<const std::pair<std::size_t, std::size_t>> scales);

// Default ladder at native size: 1, 1.25, 1.5, 1.75.
std::vector<std::pair<std::size_t, std::size_t>> default_scales(std::size_t H, std::size_t W);

// Evaluates batches formed in the given order.
ConfusionMatrix evaluate(const SegNet& model, std::span<const Tensor> images, std::span<const LabelMap> labels,
                         std::size_t batch_size, std::span<const std::pair<std::size_t, std::size_t>> scales);

}  // namespace s4t
