#include "s4t/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "s4t/error.hpp"

namespace s4t::kernels {

namespace {

using idx = std::ptrdiff_t;

// Output positions o in [lo, hi) whose input coordinate o*s + k − p lies in [0, in).
struct Range {
  idx lo = 0;
  idx hi = 0;
};

Range valid_range(idx in, idx out, idx k, idx stride, idx pad) {
  idx lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  const idx last = in - 1 + pad - k;
  if (last < 0) return {0, 0};
  idx hi = std::min(out, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

void check_sizes(const ConvGeometry& g, std::size_t input, std::size_t weight, std::size_t output) {
  if (input != g.input_size() || weight != g.weight_size() || output != g.output_size()) {
    throw ShapeError("conv2d: buffer sizes do not match geometry");
  }
}

}  // namespace

ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding) {
  if (input.size() != 4) throw ShapeError("conv2d: input must be N×C×H×W, got " + shape_str(input));
  if (weight.size() != 4) throw ShapeError("conv2d: weight must be Cout×Cin×kH×kW, got " + shape_str(weight));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (input[1] != weight[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(input[1]) + " channels but weight expects " +
                     std::to_string(weight[1]));
  }
  const std::size_t ph = input[2] + 2 * padding;
  const std::size_t pw = input[3] + 2 * padding;
  if (weight[2] > ph || weight[3] > pw || weight[2] == 0 || weight[3] == 0) {
    throw ShapeError("conv2d: kernel " + shape_str(weight) + " does not fit padded input " + shape_str(input));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.in_h = input[2];
  g.in_w = input[3];
  g.out_channels = weight[0];
  g.kernel_h = weight[2];
  g.kernel_w = weight[3];
  g.stride = stride;
  g.padding = padding;
  g.out_h = (ph - g.kernel_h) / stride + 1;
  g.out_w = (pw - g.kernel_w) / stride + 1;
  return g;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output) {
  check_sizes(g, input.size(), weight.size(), output.size());
  const idx H = static_cast<idx>(g.in_h), W = static_cast<idx>(g.in_w), pad = static_cast<idx>(g.padding);
  const idx s = static_cast<idx>(g.stride);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double sum = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const idx iy = static_cast<idx>(oy) * s + static_cast<idx>(ky) - pad;
                const idx ix = static_cast<idx>(ox) * s + static_cast<idx>(kx) - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                const double xv = input[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
                const double wv = weight[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
                sum += xv * wv;
              }
          output[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox] = static_cast<float>(sum);
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_output, std::span<const float> weight,
                           std::span<float> grad_input) {
  check_sizes(g, grad_input.size(), weight.size(), grad_output.size());
  const idx pad = static_cast<idx>(g.padding), s = static_cast<idx>(g.stride);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
      for (std::size_t iy = 0; iy < g.in_h; ++iy)
        for (std::size_t ix = 0; ix < g.in_w; ++ix) {
          double sum = 0.0;
          for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const idx ny = static_cast<idx>(iy) + pad - static_cast<idx>(ky);
                const idx nx = static_cast<idx>(ix) + pad - static_cast<idx>(kx);
                if (ny < 0 || nx < 0 || ny % s != 0 || nx % s != 0) continue;
                const idx oy = ny / s, ox = nx / s;
                if (oy >= static_cast<idx>(g.out_h) || ox >= static_cast<idx>(g.out_w)) continue;
                sum += static_cast<double>(grad_output[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox]) *
                       weight[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
              }
          grad_input[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix] = static_cast<float>(sum);
        }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const float> grad_output, std::span<const float> input,
                            std::span<float> grad_weight, std::span<float> grad_bias) {
  check_sizes(g, input.size(), grad_weight.size(), grad_output.size());
  const idx H = static_cast<idx>(g.in_h), W = static_cast<idx>(g.in_w), pad = static_cast<idx>(g.padding);
  const idx s = static_cast<idx>(g.stride);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          double sum = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t oy = 0; oy < g.out_h; ++oy)
              for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const idx iy = static_cast<idx>(oy) * s + static_cast<idx>(ky) - pad;
                const idx ix = static_cast<idx>(ox) * s + static_cast<idx>(kx) - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                sum += static_cast<double>(grad_output[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox]) *
                       input[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
              }
          grad_weight[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx] = static_cast<float>(sum);
        }
    if (!grad_bias.empty()) {
      double sum = 0.0;
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_h * g.out_w; ++o)
          sum += grad_output[(n * g.out_channels + co) * g.out_h * g.out_w + o];
      grad_bias[co] = static_cast<float>(sum);
    }
  }
}

}  // namespace serial

namespace parallel {

namespace {

// Positions per im2col tile; one tile holds K × kTile doubles.
constexpr idx kTile = 64;
constexpr idx kCoBlock = 4;
constexpr idx kPosBlock = 8;

// cols[k·tile + j] = input value feeding output position p0 + j through
// kernel tap k = (ci, ky, kx); zero where the tap falls into the padding.
void im2col_tile(const ConvGeometry& g, const float* xn, idx p0, idx count, double* cols) {
  const idx H = static_cast<idx>(g.in_h), W = static_cast<idx>(g.in_w), OW = static_cast<idx>(g.out_w);
  const idx KH = static_cast<idx>(g.kernel_h), KW = static_cast<idx>(g.kernel_w);
  const idx pad = static_cast<idx>(g.padding), s = static_cast<idx>(g.stride);
  idx k = 0;
  for (idx ci = 0; ci < static_cast<idx>(g.in_channels); ++ci) {
    const float* plane = xn + ci * H * W;
    for (idx ky = 0; ky < KH; ++ky)
      for (idx kx = 0; kx < KW; ++kx, ++k) {
        double* row = cols + k * count;
        // Walk the tile one output row segment at a time.
        idx j = 0, oy = p0 / OW, ox = p0 % OW;
        while (j < count) {
          const idx len = std::min(count - j, OW - ox);
          const idx iy = oy * s + ky - pad;
          if (iy < 0 || iy >= H) {
            std::fill(row + j, row + j + len, 0.0);
          } else {
            const float* src = plane + iy * W;
            for (idx t = 0; t < len; ++t) {
              const idx ix = (ox + t) * s + kx - pad;
              row[j + t] = (ix < 0 || ix >= W) ? 0.0 : static_cast<double>(src[ix]);
            }
          }
          j += len;
          ox = 0;
          ++oy;
        }
      }
  }
}

// Four doubles; lowered to whatever vector width the target offers.
typedef double v4d __attribute__((vector_size(32), aligned(8)));

inline v4d load4(const double* p) { return *reinterpret_cast<const v4d*>(p); }

// out[c][j] = init[c] + Σ_k w[c·K + k]·cols[k·ld + j] for a 4 × 8 block,
// k ascending.
void gemm_block(const double* __restrict w, idx K, const double* __restrict cols, idx ld,
                const double* __restrict init, double (&out)[kCoBlock][kPosBlock]) {
  const v4d zero = {0.0, 0.0, 0.0, 0.0};
  v4d a00 = init[0] + zero, a01 = a00, a10 = init[1] + zero, a11 = a10;
  v4d a20 = init[2] + zero, a21 = a20, a30 = init[3] + zero, a31 = a30;
  const double *w0 = w, *w1 = w + K, *w2 = w + 2 * K, *w3 = w + 3 * K;
  for (idx k = 0; k < K; ++k) {
    const double* xk = cols + k * ld;
    const v4d x0 = load4(xk), x1 = load4(xk + 4);
    a00 += w0[k] * x0;
    a01 += w0[k] * x1;
    a10 += w1[k] * x0;
    a11 += w1[k] * x1;
    a20 += w2[k] * x0;
    a21 += w2[k] * x1;
    a30 += w3[k] * x0;
    a31 += w3[k] * x1;
  }
  const v4d rows[kCoBlock][2] = {{a00, a01}, {a10, a11}, {a20, a21}, {a30, a31}};
  for (idx c = 0; c < kCoBlock; ++c) __builtin_memcpy(out[c], rows[c], sizeof rows[c]);
}

double dot_column(const double* w, idx K, const double* cols, idx ld, double init) {
  double sum = init;
  for (idx k = 0; k < K; ++k) sum += w[k] * cols[k * ld];
  return sum;
}

// y = conv(x, w) + bias for stride/padding in g, weights already in double.
void forward_gemm(const ConvGeometry& g, const float* x, const double* w, const double* bias, float* y) {
  const idx CI = static_cast<idx>(g.in_channels), CO = static_cast<idx>(g.out_channels);
  const idx K = CI * static_cast<idx>(g.kernel_h * g.kernel_w);
  const idx P = static_cast<idx>(g.out_h * g.out_w), N = static_cast<idx>(g.batch);
  const idx HW = static_cast<idx>(g.in_h * g.in_w);
  const idx tiles = (P + kTile - 1) / kTile;

#pragma omp parallel
  {
    std::vector<double> cols(static_cast<std::size_t>(K * kTile));
#pragma omp for schedule(static)
    for (idx job = 0; job < N * tiles; ++job) {
      const idx n = job / tiles, p0 = (job % tiles) * kTile, count = std::min(kTile, P - p0);
      im2col_tile(g, x + n * CI * HW, p0, count, cols.data());
      float* yn = y + n * CO * P;
      idx co = 0;
      for (; co + kCoBlock <= CO; co += kCoBlock) {
        idx j = 0;
        for (; j + kPosBlock <= count; j += kPosBlock) {
          double acc[kCoBlock][kPosBlock];
          gemm_block(w + co * K, K, cols.data() + j, count, bias + co, acc);
          for (idx c = 0; c < kCoBlock; ++c)
            for (idx q = 0; q < kPosBlock; ++q) yn[(co + c) * P + p0 + j + q] = static_cast<float>(acc[c][q]);
        }
        for (; j < count; ++j)
          for (idx c = 0; c < kCoBlock; ++c)
            yn[(co + c) * P + p0 + j] = static_cast<float>(dot_column(w + (co + c) * K, K, cols.data() + j, count, bias[co + c]));
      }
      for (; co < CO; ++co)
        for (idx j = 0; j < count; ++j)
          yn[co * P + p0 + j] = static_cast<float>(dot_column(w + co * K, K, cols.data() + j, count, bias[co]));
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output) {
  check_sizes(g, input.size(), weight.size(), output.size());
  const std::vector<double> w(weight.begin(), weight.end());
  std::vector<double> b(g.out_channels, 0.0);
  if (!bias.empty()) std::copy(bias.begin(), bias.end(), b.begin());
  forward_gemm(g, input.data(), w.data(), b.data(), output.data());
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_output, std::span<const float> weight,
                           std::span<float> grad_input) {
  check_sizes(g, grad_input.size(), weight.size(), grad_output.size());
  if (g.stride == 1 && g.padding + 1 <= g.kernel_h && g.padding + 1 <= g.kernel_w && g.kernel_h == g.kernel_w) {
    // With stride 1 the input gradient is a convolution of dy with the
    // spatially flipped, channel-transposed kernel and padding k − 1 − p.
    ConvGeometry t = g;
    t.in_channels = g.out_channels;
    t.out_channels = g.in_channels;
    t.in_h = g.out_h;
    t.in_w = g.out_w;
    t.out_h = g.in_h;
    t.out_w = g.in_w;
    t.padding = g.kernel_h - 1 - g.padding;
    const std::size_t KH = g.kernel_h, KW = g.kernel_w;
    std::vector<double> wt(weight.size());
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t ci = 0; ci < g.in_channels; ++ci)
        for (std::size_t ky = 0; ky < KH; ++ky)
          for (std::size_t kx = 0; kx < KW; ++kx)
            wt[((ci * g.out_channels + co) * KH + (KH - 1 - ky)) * KW + (KW - 1 - kx)] =
                weight[((co * g.in_channels + ci) * KH + ky) * KW + kx];
    const std::vector<double> zero(g.in_channels, 0.0);
    forward_gemm(t, grad_output.data(), wt.data(), zero.data(), grad_input.data());
    return;
  }

  const idx H = static_cast<idx>(g.in_h), W = static_cast<idx>(g.in_w);
  const idx OH = static_cast<idx>(g.out_h), OW = static_cast<idx>(g.out_w);
  const idx pad = static_cast<idx>(g.padding), s = static_cast<idx>(g.stride);
  const idx KH = static_cast<idx>(g.kernel_h), KW = static_cast<idx>(g.kernel_w);
  const idx N = static_cast<idx>(g.batch), CO = static_cast<idx>(g.out_channels);
  const idx CI = static_cast<idx>(g.in_channels);
  const float* dy = grad_output.data();
  const float* w = weight.data();
  float* dx = grad_input.data();

#pragma omp parallel
  {
    std::vector<double> acc(static_cast<std::size_t>(H * W));
#pragma omp for schedule(static)
    for (idx job = 0; job < N * CI; ++job) {
      const idx n = job / CI, ci = job % CI;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (idx co = 0; co < CO; ++co) {
        const float* dplane = dy + (n * CO + co) * OH * OW;
        for (idx ky = 0; ky < KH; ++ky) {
          const Range ry = valid_range(H, OH, ky, s, pad);
          for (idx kx = 0; kx < KW; ++kx) {
            const Range rx = valid_range(W, OW, kx, s, pad);
            const double wv = w[((co * CI + ci) * KH + ky) * KW + kx];
            for (idx oy = ry.lo; oy < ry.hi; ++oy) {
              double* arow = acc.data() + (oy * s + ky - pad) * W + (rx.lo * s + kx - pad);
              const float* drow = dplane + oy * OW + rx.lo;
              for (idx i = 0; i < rx.hi - rx.lo; ++i) arow[i * s] += wv * static_cast<double>(drow[i]);
            }
          }
        }
      }
      float* xplane = dx + (n * CI + ci) * H * W;
      for (idx i = 0; i < H * W; ++i) xplane[i] = static_cast<float>(acc[static_cast<std::size_t>(i)]);
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const float> grad_output, std::span<const float> input,
                            std::span<float> grad_weight, std::span<float> grad_bias) {
  check_sizes(g, input.size(), grad_weight.size(), grad_output.size());
  const idx CI = static_cast<idx>(g.in_channels), CO = static_cast<idx>(g.out_channels);
  const idx K = CI * static_cast<idx>(g.kernel_h * g.kernel_w);
  const idx P = static_cast<idx>(g.out_h * g.out_w), N = static_cast<idx>(g.batch);
  const idx HW = static_cast<idx>(g.in_h * g.in_w);
  const idx tiles = (P + kTile - 1) / kTile;
  const float* dy = grad_output.data();
  const float* x = input.data();

  // dw[co][k] = Σ_n Σ_p dy[n][co][p]·cols_n[k][p]. Each output channel is
  // owned by one thread and accumulates over (n, tile) in a fixed order.
  std::vector<double> dw(static_cast<std::size_t>(CO * K), 0.0);
  std::vector<double> cols(static_cast<std::size_t>(K * kTile));
  std::vector<double> d(static_cast<std::size_t>(CO * kTile));
#pragma omp parallel
  for (idx job = 0; job < N * tiles; ++job) {
    const idx n = job / tiles, p0 = (job % tiles) * kTile, count = std::min(kTile, P - p0);
#pragma omp single
    {
      im2col_tile(g, x + n * CI * HW, p0, count, cols.data());
      for (idx co = 0; co < CO; ++co)
        for (idx j = 0; j < count; ++j) d[static_cast<std::size_t>(co * kTile + j)] = dy[(n * CO + co) * P + p0 + j];
    }
#pragma omp for schedule(static)
    for (idx co = 0; co < CO; ++co) {
      const double* dr = d.data() + co * kTile;
      double* out = dw.data() + co * K;
      for (idx k = 0; k < K; ++k) {
        const double* xr = cols.data() + k * count;
        double sum = 0.0;
#pragma omp simd reduction(+ : sum)
        for (idx j = 0; j < count; ++j) sum += dr[j] * xr[j];
        out[k] += sum;
      }
    }
  }
  for (std::size_t i = 0; i < dw.size(); ++i) grad_weight[i] = static_cast<float>(dw[i]);

  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (idx co = 0; co < CO; ++co) {
      double sum = 0.0;
      for (idx n = 0; n < N; ++n) {
        const float* dplane = dy + (n * CO + co) * P;
        double plane = 0.0;
#pragma omp simd reduction(+ : plane)
        for (idx i = 0; i < P; ++i) plane += dplane[i];
        sum += plane;
      }
      grad_bias[static_cast<std::size_t>(co)] = static_cast<float>(sum);
    }
  }
}

}  // namespace parallel

}  // namespace s4t::kernels
