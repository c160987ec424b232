#pragma once

// Shared generators and the finite-difference harness for the test suites.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "s4t/autodiff.hpp"
#include "s4t/maps.hpp"
#include "s4t/rng.hpp"
#include "s4t/tensor.hpp"

namespace s4t::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// N×C×H×W probabilities: softmax of random logits with the given spread.
inline Tensor random_probs(std::size_t N, std::size_t C, std::size_t H, std::size_t W, Rng& rng, double spread = 3.0) {
  Tensor p({N, C, H, W});
  const std::size_t plane = H * W;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      std::vector<double> z(C);
      double m = -1e300, s = 0.0;
      for (std::size_t c = 0; c < C; ++c) m = std::max(m, z[c] = rng.uniform(-spread, spread));
      for (double& v : z) s += v = std::exp(v - m);
      for (std::size_t c = 0; c < C; ++c) p[(n * C + c) * plane + i] = static_cast<float>(z[c] / s);
    }
  return p;
}

inline LabelMap random_labels(std::size_t H, std::size_t W, std::size_t C, Rng& rng) {
  LabelMap m(H, W);
  for (Label& l : m.labels) l = static_cast<Label>(rng.uniform_int(0, static_cast<std::int64_t>(C) - 1));
  return m;
}

inline BinaryMap random_mask(std::size_t H, std::size_t W, double p, Rng& rng) {
  BinaryMap m(H, W);
  for (auto& v : m.values) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double max_rel = 0.0;
  std::string worst;
};

// Compares the analytic gradient of `loss()` w.r.t. each leaf with central
// differences of step h. An entry passes when |a − n| ≤ rel·max(|a|, |n|) or
// |a − n| ≤ abs_floor.
inline GradCheckResult grad_check(const std::function<Var()>& loss, std::vector<Var> leaves, double h, double rel,
                                  double abs_floor) {
  for (Var& v : leaves) v.zero_grad();
  backward(loss());
  std::vector<Tensor> analytic;
  for (const Var& v : leaves) analytic.push_back(v.has_grad() ? v.grad() : Tensor(v.shape()));

  GradCheckResult res;
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& x = leaves[li].mutable_value();
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const float orig = x[i];
      x[i] = static_cast<float>(orig + h);
      const double up = loss().item();
      x[i] = static_cast<float>(orig - h);
      const double down = loss().item();
      x[i] = orig;
      // Divide by the step actually representable in float.
      const double step = static_cast<double>(static_cast<float>(orig + h)) - static_cast<double>(static_cast<float>(orig - h));
      const double num = (up - down) / step;
      const double a = analytic[li][i];
      const double diff = std::abs(a - num);
      const double scale = std::max(std::abs(a), std::abs(num));
      const double r = scale > 0 ? diff / scale : 0.0;
      ++res.checked;
      if (!(diff <= rel * scale || diff <= abs_floor)) {
        ++res.failed;
        if (r > res.max_rel) {
          res.max_rel = r;
          res.worst = "leaf " + std::to_string(li) + "[" + std::to_string(i) + "] analytic " + std::to_string(a) +
                      " numeric " + std::to_string(num);
        }
      }
    }
  }
  return res;
}

}  // namespace s4t::testing
