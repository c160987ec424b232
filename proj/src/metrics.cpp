#include "s4t/metrics.hpp"

#include <cmath>

#include "s4t/error.hpp"
#include "s4t/views.hpp"

namespace s4t {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : C_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes < 2) throw Error("ConfusionMatrix needs at least 2 classes");
}

void ConfusionMatrix::add(const LabelMap& gt, const LabelMap& pred) {
  if (gt.height != pred.height || gt.width != pred.width) throw ShapeError("ConfusionMatrix: maps differ in shape");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Label g = gt.labels[i], p = pred.labels[i];
    if (g < 0 || p < 0 || static_cast<std::size_t>(g) >= C_ || static_cast<std::size_t>(p) >= C_) {
      throw Error("ConfusionMatrix: label out of range");
    }
    ++counts_[static_cast<std::size_t>(g) * C_ + static_cast<std::size_t>(p)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.C_ != C_) throw ShapeError("ConfusionMatrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t v : counts_) t += v;
  return t;
}

IoUReport iou(const ConfusionMatrix& conf, std::size_t num_stuff) {
  const std::size_t C = conf.num_classes();
  IoUReport rep;
  rep.per_class.resize(C);
  double all = 0.0, thing = 0.0, stuff = 0.0;
  std::size_t n_all = 0, n_thing = 0, n_stuff = 0;
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += conf.at(c, k);
      col += conf.at(k, c);
    }
    const std::uint64_t tp = conf.at(c, c), uni = row + col - tp;
    diag += tp;
    if (uni == 0) continue;
    const double v = static_cast<double>(tp) / static_cast<double>(uni);
    rep.per_class[c] = v;
    all += v;
    ++n_all;
    if (c < num_stuff) {
      stuff += v;
      ++n_stuff;
    } else {
      thing += v;
      ++n_thing;
    }
  }
  rep.miou = n_all ? all / static_cast<double>(n_all) : 0.0;
  rep.thing_miou = n_thing ? thing / static_cast<double>(n_thing) : 0.0;
  rep.stuff_miou = n_stuff ? stuff / static_cast<double>(n_stuff) : 0.0;
  const std::uint64_t total = conf.total();
  rep.pixel_accuracy = total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
  return rep;
}

void PseudolabelReport::merge(const PseudolabelReport& o) {
  total += o.total;
  reliable += o.reliable;
  reliable_correct += o.reliable_correct;
  unreliable += o.unreliable;
  unreliable_correct += o.unreliable_correct;
  rel_nbhd += o.rel_nbhd;
  rel_nbhd_correct_before += o.rel_nbhd_correct_before;
  rel_nbhd_correct_after += o.rel_nbhd_correct_after;
  unrel_nbhd += o.unrel_nbhd;
  unrel_nbhd_correct += o.unrel_nbhd_correct;
  masked += o.masked;
}

std::optional<double> PseudolabelReport::ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

namespace {
double share(std::size_t part, std::size_t whole) {
  return whole ? static_cast<double>(part) / static_cast<double>(whole) : 0.0;
}
}  // namespace

double PseudolabelReport::fraction_reliable() const { return share(reliable, total - masked); }
double PseudolabelReport::fraction_rel_nbhd() const { return share(rel_nbhd, total - masked); }
double PseudolabelReport::fraction_unrel_nbhd() const { return share(unrel_nbhd, total - masked); }

PseudolabelReport pseudolabel_report(const LabelMap& view2, const ReliabilityMap& rel,
                                     const InterpolationResult* interp, const LabelMap& gt) {
  const std::size_t n = view2.size();
  if (gt.size() != n || rel.r.size() != n || rel.masked.size() != n || (interp && interp->count.size() != n)) {
    throw ShapeError("pseudolabel_report: maps differ in shape");
  }
  PseudolabelReport rep;
  rep.total = n;
  for (std::size_t i = 0; i < n; ++i) {
    const bool correct = view2.labels[i] == gt.labels[i];
    if (rel.masked.values[i]) {
      ++rep.masked;
    } else if (rel.r.values[i]) {
      ++rep.reliable;
      rep.reliable_correct += correct;
    } else {
      ++rep.unreliable;
      rep.unreliable_correct += correct;
      if (interp && interp->count[i] > 0) {
        ++rep.rel_nbhd;
        rep.rel_nbhd_correct_before += correct;
        rep.rel_nbhd_correct_after += interp->y_int.labels[i] == gt.labels[i];
      } else {
        ++rep.unrel_nbhd;
        rep.unrel_nbhd_correct += correct;
      }
    }
  }
  return rep;
}

ReliabilityPrecision reliability_precision(std::span<const BinaryMap> r, std::span<const LabelMap> view2,
                                           std::span<const LabelMap> gt, std::size_t num_classes) {
  if (r.size() != view2.size() || gt.size() != view2.size()) throw ShapeError("reliability_precision: batch mismatch");
  ReliabilityPrecision out;
  out.reliable_count.assign(num_classes, 0);
  out.reliable_correct.assign(num_classes, 0);
  out.unreliable_count.assign(num_classes, 0);
  out.unreliable_incorrect.assign(num_classes, 0);
  for (std::size_t n = 0; n < view2.size(); ++n) {
    if (r[n].size() != view2[n].size() || gt[n].size() != view2[n].size()) {
      throw ShapeError("reliability_precision: maps differ in shape");
    }
    for (std::size_t i = 0; i < view2[n].size(); ++i) {
      const Label y = view2[n].labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw Error("reliability_precision: label out of range");
      const auto c = static_cast<std::size_t>(y);
      const bool correct = y == gt[n].labels[i];
      if (r[n].values[i]) {
        ++out.reliable_count[c];
        out.reliable_correct[c] += correct;
      } else {
        ++out.unreliable_count[c];
        out.unreliable_incorrect[c] += !correct;
      }
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    out.reliable_precision.push_back(PseudolabelReport::ratio(out.reliable_correct[c], out.reliable_count[c]));
    out.unreliable_precision.push_back(PseudolabelReport::ratio(out.unreliable_incorrect[c], out.unreliable_count[c]));
  }
  return out;
}

std::optional<double> pearson(std::span<const std::optional<double>> a, std::span<const std::optional<double>> b) {
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    if (a[i] && b[i]) pairs.push_back({*a[i], *b[i]});
  if (pairs.size() < 2) return std::nullopt;
  double ma = 0.0, mb = 0.0;
  for (const auto& [x, y] : pairs) {
    ma += x;
    mb += y;
  }
  ma /= static_cast<double>(pairs.size());
  mb /= static_cast<double>(pairs.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (const auto& [x, y] : pairs) {
    sab += (x - ma) * (y - mb);
    saa += (x - ma) * (x - ma);
    sbb += (y - mb) * (y - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

std::vector<std::pair<std::size_t, std::size_t>> default_scales(std::size_t H, std::size_t W) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (double s : {1.0, 1.25, 1.5, 1.75}) {
    out.push_back({static_cast<std::size_t>(std::lround(s * static_cast<double>(H))),
                   static_cast<std::size_t>(std::lround(s * static_cast<double>(W)))});
  }
  return out;
}

Tensor multiscale_probs(const SegNet& model, const Tensor& images,
                        std::span<const std::pair<std::size_t, std::size_t>> scales) {
  if (scales.empty()) throw Error("multiscale_probs: at least one scale required");
  if (images.rank() != 4) throw ShapeError("multiscale_probs: expected N×3×H×W images");
  NoGradGuard no_grad;
  const std::size_t N = images.dim(0), Cin = images.dim(1), H = images.dim(2), W = images.dim(3);
  const std::size_t C = model.num_classes(), plane = H * W;
  std::vector<double> acc(N * C * plane, 0.0);
  for (const auto& [sh, sw] : scales) {
    Tensor scaled = images;
    if (sh != H || sw != W) {
      std::vector<Tensor> items;
      for (std::size_t n = 0; n < N; ++n) {
        items.push_back(resize_image_nearest(slice_batch(images, n, 1).reshaped({Cin, H, W}), sh, sw));
      }
      scaled = stack_batch(items);
    }
    const Tensor probs = model.forward(scaled).value();
    for (std::size_t n = 0; n < N; ++n) {
      Tensor native = slice_batch(probs, n, 1).reshaped({C, sh, sw});
      if (sh != H || sw != W) native = resize_image_nearest(native, H, W);
      for (std::size_t i = 0; i < C * plane; ++i) acc[n * C * plane + i] += native[i];
    }
  }
  Tensor out({N, C, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += acc[(n * C + c) * plane + i];
      for (std::size_t c = 0; c < C; ++c) {
        out[(n * C + c) * plane + i] = static_cast<float>(acc[(n * C + c) * plane + i] / s);
      }
    }
  return out;
}

ConfusionMatrix evaluate(const SegNet& model, std::span<const Tensor> images, std::span<const LabelMap> labels,
                         std::size_t batch_size, std::span<const std::pair<std::size_t, std::size_t>> scales) {
  if (images.size() != labels.size()) throw Error("evaluate: images and labels differ in count");
  if (batch_size == 0) throw Error("evaluate: batch size must be positive");
  ConfusionMatrix conf(model.num_classes());
  for (std::size_t first = 0; first < images.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, images.size() - first);
    const Tensor probs = multiscale_probs(model, stack_batch(images.subspan(first, count)), scales);
    for (std::size_t j = 0; j < count; ++j) conf.add(labels[first + j], argmax_channels(probs, j));
  }
  return conf;
}

}  // namespace s4t
