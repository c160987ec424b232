#include "s4t/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "s4t/error.hpp"
#include "s4t/kernels.hpp"

namespace s4t {

namespace {

thread_local bool g_grad_enabled = true;

using idx = std::ptrdiff_t;

void check_finite([[maybe_unused]] const char* op, [[maybe_unused]] const Tensor& t) {
#ifndef NDEBUG
  if (!t.all_finite()) throw Error(std::string(op) + ": produced a non-finite value");
#endif
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape(), 0.0f);
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0f);
  return grad;
}

void Node::accumulate(std::span<const float> g) {
  Tensor& buf = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Node::accumulate(std::span<const double> g) {
  Tensor& buf = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] = static_cast<float>(buf[i] + g[i]);
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  if (node_->value.numel() == 1) node_->scalar = node_->value[0];
}

Tensor& Var::mutable_value() {
  if (!node_->is_leaf()) throw Error("mutable_value: only leaf variables may be modified");
  return node_->value;
}

void Var::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw Error("set_requires_grad: only leaf variables");
  node_->requires_grad = on;
}

const Tensor& Var::grad() const {
  if (!node_->has_grad()) node_->grad_buffer();
  return node_->grad;
}

void Var::zero_grad() { node_->grad = Tensor(); }

double Var::item() const {
  if (node_->value.numel() != 1) throw ShapeError("item: tensor is not a scalar: " + shape_str(shape()));
  return node_->has_scalar ? node_->scalar : node_->value[0];
}

Var Var::detach() const { return Var(node_->value, false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (node->value.numel() == 1) {
    node->scalar = node->value[0];
    node->has_scalar = true;
  }
  bool needs = false;
  if (g_grad_enabled) {
    for (const Var& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    for (Var& in : inputs) node->parents.push_back(in.defined() ? in.node() : nullptr);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding) {
  const kernels::ConvGeometry g = kernels::conv_geometry(input.shape(), weight.shape(), stride, padding);
  if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != g.out_channels)) {
    throw ShapeError("conv2d: bias must have " + std::to_string(g.out_channels) + " entries, got " +
                     shape_str(bias.shape()));
  }
  Tensor out({g.batch, g.out_channels, g.out_h, g.out_w});
  const std::span<const float> b = bias.defined() ? bias.value().data() : std::span<const float>{};
  kernels::parallel::conv2d_forward(g, input.value().data(), weight.value().data(), b, out.data());
  check_finite("conv2d", out);

  return make_result(std::move(out), {input, weight, bias}, [g](Node& self) {
    const std::shared_ptr<Node>& x = self.parents[0];
    const std::shared_ptr<Node>& w = self.parents[1];
    const std::shared_ptr<Node>& bn = self.parents[2];
    if (x && x->requires_grad) {
      Tensor dx(x->value.shape());
      kernels::parallel::conv2d_backward_input(g, self.grad.data(), w->value.data(), dx.data());
      x->accumulate(dx.data());
    }
    const bool want_w = w->requires_grad;
    const bool want_b = bn && bn->requires_grad;
    if (want_w || want_b) {
      Tensor dw(w->value.shape());
      Tensor db(bn ? bn->value.shape() : Shape{g.out_channels});
      if (want_w) {
        kernels::parallel::conv2d_backward_weight(g, self.grad.data(), x->value.data(), dw.data(), db.data());
        w->accumulate(dw.data());
      } else {
        // bias only: Σ over batch and positions
        const std::size_t plane = g.out_h * g.out_w;
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          double s = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t i = 0; i < plane; ++i) s += self.grad[(n * g.out_channels + co) * plane + i];
          db[co] = static_cast<float>(s);
        }
      }
      if (want_b) bn->accumulate(db.data());
    }
  });
}

Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta, double eps) {
  const Tensor& x = input.value();
  if (x.rank() != 4) throw ShapeError("batchnorm2d: input must be N×C×H×W, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t count = N * plane;
  if (plane == 0) throw ShapeError("batchnorm2d: zero spatial extent");
  if (count < 2) throw ShapeError("batchnorm2d: batch statistics need at least 2 values per channel");
  if (gamma.value().numel() != C || beta.value().numel() != C) {
    throw ShapeError("batchnorm2d: gamma/beta must have " + std::to_string(C) + " entries");
  }

  auto mean = std::make_shared<std::vector<double>>(C);
  auto inv_std = std::make_shared<std::vector<double>>(C);
  Tensor out(x.shape());
  const float* xp = x.ptr();
  float* yp = out.ptr();
  const float* gp = gamma.value().ptr();
  const float* bp = beta.value().ptr();

#pragma omp parallel for schedule(static)
  for (idx c = 0; c < static_cast<idx>(C); ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const float* src = xp + (n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += src[i];
    }
    const double mu = s / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const float* src = xp + (n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = src[i] - mu;
        ss += d * d;
      }
    }
    const double istd = 1.0 / std::sqrt(ss / static_cast<double>(count) + eps);
    (*mean)[c] = mu;
    (*inv_std)[c] = istd;
    const double gc = gp[c], bc = bp[c];
    for (std::size_t n = 0; n < N; ++n) {
      const float* src = xp + (n * C + c) * plane;
      float* dst = yp + (n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(gc * ((src[i] - mu) * istd) + bc);
    }
  }
  check_finite("batchnorm2d", out);

  return make_result(std::move(out), {input, gamma, beta}, [mean, inv_std, N, C, plane, count](Node& self) {
    const std::shared_ptr<Node>& xn = self.parents[0];
    const std::shared_ptr<Node>& gn = self.parents[1];
    const std::shared_ptr<Node>& bn = self.parents[2];
    const float* xp = xn->value.ptr();
    const float* dy = self.grad.ptr();
    std::vector<double> dgamma(C), dbeta(C);
    const bool want_x = xn->requires_grad;
    Tensor dx;
    if (want_x) dx = Tensor(xn->value.shape());
    float* dxp = want_x ? dx.ptr() : nullptr;
    const float* gp = gn->value.ptr();

#pragma omp parallel for schedule(static)
    for (idx c = 0; c < static_cast<idx>(C); ++c) {
      const double mu = (*mean)[c], istd = (*inv_std)[c];
      double sdy = 0.0, sdyx = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xh = (xp[off + i] - mu) * istd;
          sdy += dy[off + i];
          sdyx += dy[off + i] * xh;
        }
      }
      dbeta[c] = sdy;
      dgamma[c] = sdyx;
      if (dxp) {
        const double m = static_cast<double>(count);
        const double scale = gp[c] * istd / m;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t off = (n * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double xh = (xp[off + i] - mu) * istd;
            dxp[off + i] = static_cast<float>(scale * (m * dy[off + i] - sdy - xh * sdyx));
          }
        }
      }
    }
    if (want_x) xn->accumulate(dx.data());
    if (gn->requires_grad) gn->accumulate(std::span<const double>(dgamma));
    if (bn->requires_grad) bn->accumulate(std::span<const double>(dbeta));
  });
}

Var relu(const Var& x) {
  Tensor out(x.shape());
  const std::span<const float> src = x.value().data();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = src[i] > 0.0f ? src[i] : 0.0f;
  return make_result(std::move(out), {x}, [](Node& self) {
    const std::shared_ptr<Node>& xn = self.parents[0];
    Tensor dx(xn->value.shape());
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = xn->value[i] > 0.0f ? self.grad[i] : 0.0f;
    xn->accumulate(dx.data());
  });
}

Var softmax_channels(const Var& logits) {
  const Tensor& z = logits.value();
  if (z.rank() != 4) throw ShapeError("softmax_channels: input must be N×C×H×W, got " + shape_str(z.shape()));
  const std::size_t N = z.dim(0), C = z.dim(1), plane = z.dim(2) * z.dim(3);
  if (C < 2) throw ShapeError("softmax_channels: need at least 2 channels");
  Tensor out(z.shape());
  const float* zp = z.ptr();
  float* pp = out.ptr();

#pragma omp parallel
  {
    std::vector<double> e(C);
#pragma omp for schedule(static)
    for (idx job = 0; job < static_cast<idx>(N * plane); ++job) {
      const std::size_t n = static_cast<std::size_t>(job) / plane, i = static_cast<std::size_t>(job) % plane;
      const float* src = zp + n * C * plane + i;
      double mx = src[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(src[c * plane]));
      double total = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        e[c] = std::exp(src[c * plane] - mx);
        total += e[c];
      }
      float* dst = pp + n * C * plane + i;
      for (std::size_t c = 0; c < C; ++c) dst[c * plane] = static_cast<float>(e[c] / total);
    }
  }
  check_finite("softmax_channels", out);

  return make_result(std::move(out), {logits}, [N, C, plane](Node& self) {
    const std::shared_ptr<Node>& zn = self.parents[0];
    Tensor dz(zn->value.shape());
    const float* p = self.value.ptr();
    const float* g = self.grad.ptr();
    float* d = dz.ptr();
#pragma omp parallel for schedule(static)
    for (idx job = 0; job < static_cast<idx>(N * plane); ++job) {
      const std::size_t n = static_cast<std::size_t>(job) / plane, i = static_cast<std::size_t>(job) % plane;
      const std::size_t base = n * C * plane + i;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += static_cast<double>(p[base + c * plane]) * g[base + c * plane];
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t k = base + c * plane;
        d[k] = static_cast<float>(p[k] * (g[k] - dot));
      }
    }
    zn->accumulate(dz.data());
  });
}

Var log_eps(const Var& x, double eps) {
  Tensor out(x.shape());
  const std::span<const float> src = x.value().data();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<float>(std::log(src[i] + eps));
  check_finite("log_eps", out);
  return make_result(std::move(out), {x}, [eps](Node& self) {
    const std::shared_ptr<Node>& xn = self.parents[0];
    Tensor dx(xn->value.shape());
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = static_cast<float>(self.grad[i] / (xn->value[i] + eps));
    xn->accumulate(dx.data());
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const std::shared_ptr<Node>& an = self.parents[0];
    const std::shared_ptr<Node>& bn = self.parents[1];
    if (an->requires_grad) {
      Tensor da(an->value.shape());
      for (std::size_t i = 0; i < da.numel(); ++i) da[i] = self.grad[i] * bn->value[i];
      an->accumulate(da.data());
    }
    if (bn->requires_grad) {
      Tensor db(bn->value.shape());
      for (std::size_t i = 0; i < db.numel(); ++i) db[i] = self.grad[i] * an->value[i];
      bn->accumulate(db.data());
    }
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require_same_shape("weighted_sum", x.value(), weights);
  double s = 0.0;
  const std::span<const float> v = x.value().data();
  const std::span<const float> w = weights.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (w[i] != 0.0f) s += static_cast<double>(w[i]) * v[i];
  }
  Var out = make_result(Tensor::scalar(static_cast<float>(s)), {x}, [weights](Node& self) {
    const std::shared_ptr<Node>& xn = self.parents[0];
    const double g = self.grad[0];
    std::vector<double> dx(weights.numel());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g * weights[i];
    xn->accumulate(std::span<const double>(dx));
  });
  out.node()->scalar = s;
  return out;
}

Var sum(const Var& x) {
  double s = 0.0;
  for (float v : x.value().data()) s += v;
  Var out = make_result(Tensor::scalar(static_cast<float>(s)), {x}, [](Node& self) {
    const std::shared_ptr<Node>& xn = self.parents[0];
    Tensor dx(xn->value.shape(), self.grad[0]);
    xn->accumulate(dx.data());
  });
  out.node()->scalar = s;
  return out;
}

Var linear_combination(std::span<const Var> terms, std::span<const double> coefs) {
  if (terms.size() != coefs.size()) throw ShapeError("linear_combination: terms and coefficients differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().numel() != 1) throw ShapeError("linear_combination: terms must be scalars");
    s += coefs[i] * terms[i].item();
  }
  std::vector<double> c(coefs.begin(), coefs.end());
  Var out = make_result(Tensor::scalar(static_cast<float>(s)), std::vector<Var>(terms.begin(), terms.end()),
                        [c](Node& self) {
                          const double g = self.grad[0];
                          for (std::size_t i = 0; i < c.size(); ++i) {
                            const std::shared_ptr<Node>& t = self.parents[i];
                            if (!t->requires_grad) continue;
                            const double d = g * c[i];
                            t->accumulate(std::span<const double>(&d, 1));
                          }
                        });
  out.node()->scalar = s;
  return out;
}

void backward(const Var& loss) {
  if (!loss.defined()) throw Error("backward: undefined loss");
  if (loss.value().numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad = Tensor();
  }
  loss.node()->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || !n->has_grad()) continue;
    n->backward(*n);
    n->grad = Tensor();
  }
}

}  // namespace s4t
