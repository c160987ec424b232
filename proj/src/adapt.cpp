#include "s4t/adapt.hpp"

#include <cmath>
#include <numeric>

#include "s4t/error.hpp"

namespace s4t {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x0de5, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  return order;
}

void flip_reliability(BinaryMap& r, int percent, Rng& rng) {
  if (percent < 0 || percent > 100) throw ConfigError("oracle flip percentage must be in [0, 100]");
  const std::size_t n = r.size();
  const auto flips = static_cast<std::size_t>(std::llround(static_cast<double>(percent) * static_cast<double>(n) / 100.0));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < flips; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
    std::swap(idx[i], idx[j]);
    r.values[idx[i]] ^= 1;
  }
}

PseudolabelBatch build_pseudolabels(const SegNet& model, const Tensor& images, std::span<const std::size_t> indices,
                                    const Config& cfg, int epoch, ClassStats& stats, std::span<const LabelMap> gt) {
  const std::size_t N = images.dim(0), H = images.dim(2), W = images.dim(3);
  if (indices.size() != N) throw Error("build_pseudolabels: one index per image required");
  if (cfg.oracle != OracleMode::off && gt.size() != N) throw Error("reliability oracle needs ground-truth labels");

  std::vector<Rng> box_rngs;
  for (std::size_t i : indices) box_rngs.emplace_back(derive_seed(cfg.seed, 0xb0c5, static_cast<std::uint64_t>(epoch), i));
  const std::vector<BBox> boxes = sample_boxes(N, H, W, box_rngs);

  PseudolabelBatch b;
  b.views = make_views([&model](const Tensor& x) { return model.forward(x); }, images, boxes);
  const Tensor& p2 = b.views.view2_probs.value();
  b.thresholds = class_thresholds(p2, b.views.view2, cfg.K);
  const SelectionOptions sel{cfg.selection_mode, cfg.confidence, cfg.consistency};

  if (gt.size() == N) {
    for (std::size_t n = 0; n < N; ++n) b.gt_view2.push_back(resize_label_nearest(crop(gt[n], boxes[n]), H, W));
  }
  for (std::size_t n = 0; n < N; ++n) {
    ReliabilityMap rm = make_reliability(b.views.view1[n], b.views.view2[n], p2, n, b.thresholds, sel);
    if (cfg.oracle != OracleMode::off) {
      // Oracle: reliable exactly where the second view is correct.
      rm.masked = BinaryMap(H, W);
      for (std::size_t i = 0; i < rm.r.size(); ++i) rm.r.values[i] = b.views.view2[n].labels[i] == b.gt_view2[n].labels[i];
      if (cfg.oracle == OracleMode::noisy) {
        Rng rng(derive_seed(cfg.seed, 0x0ac1e, static_cast<std::uint64_t>(epoch), indices[n]));
        flip_reliability(rm.r, cfg.oracle_p, rng);
      }
    }
    b.reliability.push_back(std::move(rm));
  }

  stats.update(b.views.view2);

  if (cfg.interpolation) {
    b.interp.resize(N);
#pragma omp parallel for schedule(static)
    for (std::size_t n = 0; n < N; ++n) b.interp[n] = interpolate(b.reliability[n].r, p2, n, cfg.k);
  }
  return b;
}

namespace {

Var batch_loss(const PseudolabelBatch& b, const Config& cfg, const ClassStats& stats, LossBreakdown& breakdown) {
  const double beta = cfg.ie_reg ? cfg.beta : 0.0;
  const Var& probs = b.views.view2_probs;
  if (cfg.loss != LossKind::s4t) return baseline_total(probs, b.views.view2, cfg.loss, stats.q(), beta, &breakdown);
  SstTargets targets{b.views.view2, b.reliability, b.interp};
  const std::vector<double> ones(stats.num_classes(), 1.0);
  const std::vector<double>& lambda = cfg.loss_weights ? stats.lambda() : ones;
  return l_s4t(probs, targets, lambda, stats.q(), SstOptions{cfg.alpha, cfg.interpolation}, beta, &breakdown);
}

PseudolabelReport batch_report(const PseudolabelBatch& b) {
  PseudolabelReport rep;
  for (std::size_t n = 0; n < b.views.view2.size(); ++n) {
    rep.merge(pseudolabel_report(b.views.view2[n], b.reliability[n], b.interp.empty() ? nullptr : &b.interp[n],
                                 b.gt_view2[n]));
  }
  return rep;
}

}  // namespace

AdaptResult adapt(const SegNet& source, std::span<const Tensor> images, const Config& cfg,
                  std::span<const LabelMap> labels, const std::function<void(const StepLog&)>& on_step) {
  cfg.validate();
  if (images.empty()) throw Error("adapt: no target images");
  const bool need_labels = cfg.oracle != OracleMode::off || cfg.analysis;
  if (need_labels && labels.size() != images.size()) throw Error("adapt: oracle/analysis modes need one label map per image");

  AdaptResult result{source.clone(), {}};
  SegNet& model = result.model;
  model.set_trainable(cfg.scope);
  Adam adam(model.parameters(), AdamConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  ClassStats stats(model.num_classes(), cfg.Q, cfg.eta);

  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(images.size(), cfg.seed, epoch);
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++step) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      const std::span<const std::size_t> idx(order.data() + first, count);
      std::vector<Tensor> batch;
      std::vector<LabelMap> gt;
      for (std::size_t i : idx) {
        batch.push_back(images[i]);
        if (need_labels) gt.push_back(labels[i]);
      }
      try {
        const PseudolabelBatch b = build_pseudolabels(model, stack_batch(batch), idx, cfg, epoch, stats, gt);
        StepLog log{epoch, step, {}, 0.0, 0.0, 0.0, std::nullopt};
        const Var loss = batch_loss(b, cfg, stats, log.loss);
        backward(loss);
        adam.step(model.parameters(), cfg.scope);

        PseudolabelReport types;
        for (std::size_t n = 0; n < count; ++n) {
          types.merge(pseudolabel_report(b.views.view2[n], b.reliability[n], b.interp.empty() ? nullptr : &b.interp[n],
                                         b.views.view2[n]));
        }
        log.fraction_reliable = types.fraction_reliable();
        log.fraction_rel_nbhd = types.fraction_rel_nbhd();
        log.fraction_unrel_nbhd = types.fraction_unrel_nbhd();
        if (cfg.analysis) log.report = batch_report(b);
        if (on_step) on_step(log);
        result.steps.push_back(std::move(log));
      } catch (const std::exception& e) {
        throw Error("adaptation step " + std::to_string(step) + ": " + e.what());
      }
    }
  }
  return result;
}

PseudolabelAnalysis analyze_pseudolabels(const SegNet& model, std::span<const Tensor> images,
                                         std::span<const LabelMap> labels, const Config& cfg, std::size_t num_stuff) {
  if (labels.size() != images.size()) throw Error("analysis needs one label map per image");
  NoGradGuard no_grad;
  ClassStats stats(model.num_classes(), cfg.Q, cfg.eta);
  PseudolabelAnalysis out;
  ConfusionMatrix conf(model.num_classes());
  std::vector<BinaryMap> rs;
  std::vector<LabelMap> v2s, gts;
  for (std::size_t first = 0; first < images.size(); first += cfg.batch_size) {
    const std::size_t count = std::min(cfg.batch_size, images.size() - first);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), first);
    const PseudolabelBatch b = build_pseudolabels(model, stack_batch(images.subspan(first, count)), idx, cfg, 0, stats,
                                                  labels.subspan(first, count));
    out.report.merge(batch_report(b));
    for (std::size_t n = 0; n < count; ++n) {
      conf.add(b.gt_view2[n], b.views.view2[n]);
      rs.push_back(b.reliability[n].r);
      v2s.push_back(b.views.view2[n]);
      gts.push_back(b.gt_view2[n]);
    }
  }
  out.precision = reliability_precision(rs, v2s, gts, model.num_classes());
  out.iou = iou(conf, num_stuff);
  out.precision_iou_correlation = pearson(out.precision.reliable_precision, out.iou.per_class);
  return out;
}

namespace {
std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }
}  // namespace

std::string step_log_header() {
  return "epoch,step,total,reliable,interp,entmax,ie,reliable_pixels,interp_pixels,entmax_pixels,ignored_pixels,"
         "frac_reliable,frac_rel_nbhd,frac_unrel_nbhd,acc_reliable,acc_unreliable,acc_rel_nbhd_before,"
         "acc_rel_nbhd_after,acc_unrel_nbhd";
}

std::string step_log_row(const StepLog& s) {
  const LossBreakdown& l = s.loss;
  std::string row = std::to_string(s.epoch) + "," + std::to_string(s.step) + "," + format_double(l.total) + "," +
                    format_double(l.sst_reliable) + "," + format_double(l.sst_interp) + "," +
                    format_double(l.sst_entmax) + "," + format_double(l.ie) + "," + std::to_string(l.reliable_pixels) +
                    "," + std::to_string(l.interp_pixels) + "," + std::to_string(l.entmax_pixels) + "," +
                    std::to_string(l.ignored_pixels) + "," + format_double(s.fraction_reliable) + "," +
                    format_double(s.fraction_rel_nbhd) + "," + format_double(s.fraction_unrel_nbhd);
  if (s.report) {
    const PseudolabelReport& r = *s.report;
    row += "," + opt(r.reliable_accuracy()) + "," + opt(r.unreliable_accuracy()) + "," + opt(r.rel_nbhd_before()) + "," +
           opt(r.rel_nbhd_after()) + "," + opt(r.unrel_nbhd_accuracy());
  } else {
    row += ",,,,,";
  }
  return row;
}

}  // namespace s4t
