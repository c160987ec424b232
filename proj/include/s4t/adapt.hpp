#pragma once

// One-pass source-free adaptation: per batch, build the two views, mark
// reliable pixels, interpolate pseudolabels for unreliable ones, and take one
// optimizer step on the combined loss.

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "s4t/config.hpp"
#include "s4t/losses.hpp"
#include "s4t/metrics.hpp"
#include "s4t/pseudolabel.hpp"
#include "s4t/reliability.hpp"
#include "s4t/segmodel.hpp"
#include "s4t/views.hpp"

namespace s4t {

// Everything derived from one batch before the loss is formed.
struct PseudolabelBatch {
  ViewBatch views;
  ClassThresholds thresholds;
  std::vector<ReliabilityMap> reliability;
  std::vector<InterpolationResult> interp;  // empty when interpolation is off
  std::vector<LabelMap> gt_view2;           // only with labels
};

// `indices` are dataset positions (they seed the per-image streams);
// `gt` must be given for oracle modes and is otherwise only used for
// gt_view2. `stats` receives the second-view counts (before interpolation).
PseudolabelBatch build_pseudolabels(const SegNet& model, const Tensor& images, std::span<const std::size_t> indices,
                                    const Config& cfg, int epoch, ClassStats& stats,
                                    std::span<const LabelMap> gt = {});

// Flips exactly round(P/100 · H·W) pixels of r, chosen uniformly.
void flip_reliability(BinaryMap& r, int percent, Rng& rng);

struct StepLog {
  int epoch = 0;
  std::size_t step = 0;
  LossBreakdown loss;
  double fraction_reliable = 0.0;
  double fraction_rel_nbhd = 0.0;
  double fraction_unrel_nbhd = 0.0;
  std::optional<PseudolabelReport> report;  // with analysis enabled
};

struct AdaptResult {
  SegNet model;
  std::vector<StepLog> steps;
};

// Image order per epoch is a seeded shuffle. `labels` is read only when the
// oracle or analysis needs it.
AdaptResult adapt(const SegNet& source, std::span<const Tensor> images, const Config& cfg,
                  std::span<const LabelMap> labels = {},
                  const std::function<void(const StepLog&)>& on_step = {});

// Pseudolabel statistics of a frozen model over a whole dataset (no updates).
struct PseudolabelAnalysis {
  PseudolabelReport report;
  ReliabilityPrecision precision;
  IoUReport iou;  // of the second-view predictions against ground truth
  std::optional<double> precision_iou_correlation;
};

PseudolabelAnalysis analyze_pseudolabels(const SegNet& model, std::span<const Tensor> images,
                                         std::span<const LabelMap> labels, const Config& cfg, std::size_t num_stuff);

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

// CSV helpers for step logs.
std::string step_log_header();
std::string step_log_row(const StepLog& s);

}  // namespace s4t
