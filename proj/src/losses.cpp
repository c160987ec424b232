#include "s4t/losses.hpp"

#include <algorithm>
#include <cmath>

#include "s4t/error.hpp"

namespace s4t {

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::s4t: return "s4t";
    case LossKind::entmin: return "entmin";
    case LossKind::ce_all: return "ce_all";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "s4t") return LossKind::s4t;
  if (text == "entmin") return LossKind::entmin;
  if (text == "ce_all") return LossKind::ce_all;
  throw ConfigError("unknown loss '" + text + "' (expected s4t, entmin or ce_all)");
}

namespace {

struct Dims {
  std::size_t N, C, plane;
  double inv_total;
};

Dims dims_of(const Var& probs, std::size_t images) {
  const Tensor& p = probs.value();
  if (p.rank() != 4) throw ShapeError("loss: expected N×C×H×W probabilities, got " + shape_str(p.shape()));
  if (images != p.dim(0)) throw ShapeError("loss: pseudolabels cover a different number of images");
  const std::size_t plane = p.dim(2) * p.dim(3);
  return {p.dim(0), p.dim(1), plane, 1.0 / static_cast<double>(p.dim(0) * plane)};
}

void check_map(const LabelMap& m, const Dims& d) {
  if (m.size() != d.plane) throw ShapeError("loss: label map size differs from the probability maps");
}

std::size_t label_index(Label y, const Dims& d) {
  if (y < 0 || static_cast<std::size_t>(y) >= d.C) throw Error("loss: pseudolabel out of range");
  return static_cast<std::size_t>(y);
}

}  // namespace

Var l_sst(const Var& probs2, const SstTargets& targets, std::span<const double> lambda, const SstOptions& options,
          LossBreakdown* breakdown) {
  const Dims d = dims_of(probs2, targets.view2.size());
  if (lambda.size() != d.C) throw ShapeError("l_sst: λ has " + std::to_string(lambda.size()) + " entries, expected " + std::to_string(d.C));
  if (targets.reliability.size() != d.N) throw ShapeError("l_sst: one reliability map per image required");
  if (options.interpolation && targets.interp.size() != d.N) throw ShapeError("l_sst: one interpolation result per image required");
  if (options.alpha < 0.0) throw ConfigError("alpha must be non-negative");

  const Shape& shape = probs2.shape();
  Tensor w_rel(shape, 0.0f), w_int(shape, 0.0f), w_ent(shape, 0.0f);
  LossBreakdown b;
  b.alpha = options.alpha;
  for (std::size_t n = 0; n < d.N; ++n) {
    const LabelMap& v2 = targets.view2[n];
    const ReliabilityMap& rm = targets.reliability[n];
    check_map(v2, d);
    if (rm.r.size() != d.plane || rm.masked.size() != d.plane) throw ShapeError("l_sst: reliability map size mismatch");
    const InterpolationResult* ip = options.interpolation ? &targets.interp[n] : nullptr;
    if (ip && ip->w_int.size() != d.plane) throw ShapeError("l_sst: interpolation map size mismatch");
    const std::size_t base = n * d.C * d.plane;
    for (std::size_t i = 0; i < d.plane; ++i) {
      if (rm.masked.values[i]) {
        ++b.ignored_pixels;
      } else if (rm.r.values[i]) {
        const std::size_t c = label_index(v2.labels[i], d);
        w_rel[base + c * d.plane + i] = static_cast<float>(-lambda[c] * d.inv_total);
        ++b.reliable_pixels;
      } else if (!ip) {
        ++b.ignored_pixels;
      } else if (ip->count[i] > 0) {
        const std::size_t c = label_index(ip->y_int.labels[i], d);
        w_int[base + c * d.plane + i] = static_cast<float>(-lambda[c] * ip->w_int[i] * d.inv_total);
        ++b.interp_pixels;
      } else {
        for (std::size_t c = 0; c < d.C; ++c) w_ent[base + c * d.plane + i] = static_cast<float>(d.inv_total);
        ++b.entmax_pixels;
      }
    }
  }

  const Var logp = log_eps(probs2, kLogEps);
  std::vector<Var> terms{weighted_sum(logp, w_rel)};
  std::vector<double> coefs{1.0};
  Var interp = weighted_sum(logp, w_int);
  terms.push_back(interp);
  coefs.push_back(options.alpha);
  Var entmax = b.entmax_pixels ? weighted_sum(mul(probs2, logp), w_ent) : Var(Tensor::scalar(0.0f));
  terms.push_back(entmax);
  coefs.push_back(options.alpha);
  Var total = linear_combination(terms, coefs);
  if (breakdown) {
    b.sst_reliable = terms[0].item();
    b.sst_interp = interp.item();
    b.sst_entmax = entmax.item();
    b.total = total.item();
    *breakdown = b;
  }
  return total;
}

Var l_ie(const Var& probs2, std::span<const double> q) {
  const Tensor& p = probs2.value();
  if (p.rank() != 4 || q.size() != p.dim(1)) throw ShapeError("l_ie: q length differs from class count");
  const std::size_t N = p.dim(0), C = p.dim(1), plane = p.dim(2) * p.dim(3);
  const double inv_total = 1.0 / static_cast<double>(N * plane);
  Tensor w(p.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const auto v = static_cast<float>(std::log(std::max(q[c], kFrequencyFloor)) * inv_total);
      std::fill_n(w.ptr() + (n * C + c) * plane, plane, v);
    }
  return weighted_sum(probs2, w);
}

Var l_s4t(const Var& probs2, const SstTargets& targets, std::span<const double> lambda, std::span<const double> q,
          const SstOptions& options, double beta, LossBreakdown* breakdown) {
  if (beta < 0.0) throw ConfigError("beta must be non-negative");
  LossBreakdown b;
  const Var sst = l_sst(probs2, targets, lambda, options, &b);
  Var total = sst;
  if (beta > 0.0) {
    const Var ie = l_ie(probs2, q);
    b.ie = ie.item();
    b.beta = beta;
    const Var terms[] = {sst, ie};
    const double coefs[] = {1.0, beta};
    total = linear_combination(terms, coefs);
  }
  b.total = total.item();
  if (breakdown) *breakdown = b;
  return total;
}

Var baseline_loss(const Var& probs2, std::span<const LabelMap> view2, LossKind kind) {
  const Dims d = dims_of(probs2, view2.size());
  const Var logp = log_eps(probs2, kLogEps);
  if (kind == LossKind::entmin) {
    return weighted_sum(mul(probs2, logp), Tensor(probs2.shape(), static_cast<float>(-d.inv_total)));
  }
  if (kind != LossKind::ce_all) throw Error("baseline_loss: s4t is not a baseline");
  Tensor w(probs2.shape(), 0.0f);
  for (std::size_t n = 0; n < d.N; ++n) {
    check_map(view2[n], d);
    for (std::size_t i = 0; i < d.plane; ++i) {
      w[(n * d.C + label_index(view2[n].labels[i], d)) * d.plane + i] = static_cast<float>(-d.inv_total);
    }
  }
  return weighted_sum(logp, w);
}

Var baseline_total(const Var& probs2, std::span<const LabelMap> view2, LossKind kind, std::span<const double> q,
                   double beta, LossBreakdown* breakdown) {
  LossBreakdown b;
  const Var base = baseline_loss(probs2, view2, kind);
  b.sst_reliable = base.item();
  b.reliable_pixels = probs2.value().numel() / probs2.value().dim(1);
  Var total = base;
  if (beta > 0.0) {
    const Var ie = l_ie(probs2, q);
    b.ie = ie.item();
    b.beta = beta;
    const Var terms[] = {base, ie};
    const double coefs[] = {1.0, beta};
    total = linear_combination(terms, coefs);
  }
  b.total = total.item();
  if (breakdown) *breakdown = b;
  return total;
}

}  // namespace s4t
