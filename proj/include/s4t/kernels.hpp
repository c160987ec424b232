#pragma once

// Convolution kernels in two flavours: `serial` is the direct-loop reference
// kept for testing and benchmarking, `parallel` is the OpenMP version used by
// the autodiff ops. Both accumulate in double. The parallel kernels assign
// every output element to exactly one thread and reduce in a fixed order, so
// results do not depend on the thread count.

#include <cstddef>
#include <span>

#include "s4t/tensor.hpp"

namespace s4t::kernels {

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;

  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
  std::size_t output_size() const { return batch * out_channels * out_h * out_w; }
};

// Validates shapes (input N×Cin×H×W, weight Cout×Cin×kH×kW) and derives the
// output size floor((H + 2p − kH)/s) + 1. Throws ShapeError.
ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding);

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_output, std::span<const float> weight,
                           std::span<float> grad_input);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const float> grad_output, std::span<const float> input,
                            std::span<float> grad_weight, std::span<float> grad_bias);

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_output, std::span<const float> weight,
                           std::span<float> grad_input);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const float> grad_output, std::span<const float> input,
                            std::span<float> grad_weight, std::span<float> grad_bias);

}  // namespace parallel

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace s4t::kernels
