// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "conseq/matrix.hpp"
#include "conseq/nn.hpp"

namespace conseq {

struct ImageDims {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::size_t count() const { return n * c * h * w; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

// NCHW tensor.
struct ImageBatch {
  ImageDims dims;
  std::vector<double> data;

  ImageBatch() = default;
  explicit ImageBatch(ImageDims d, double fill = 0.0) : dims(d), data(d.count(), fill) {}
  ImageBatch(ImageDims d, std::vector<double> values);

  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data[((n * dims.c + c) * dims.h + y) * dims.w + x];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data[((n * dims.c + c) * dims.h + y) * dims.w + x];
  }
};

struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// Output spatial extent; throws InvalidSpec when stride is 0 or the kernel
// does not fit the padded input.
std::size_t conv_out_h(const ImageDims& in, const ConvSpec& spec);
std::size_t conv_out_w(const ImageDims& in, const ConvSpec& spec);
ImageDims conv_output_dims(const ImageDims& in, const ConvSpec& spec);

// Size of the Gram system the consequentialism update solves for a conv
// layer: one unknown per patch column, n * out_h * out_w.
std::size_t patch_gram_dim(const ImageDims& in, const ConvSpec& spec);

// Patch matrix of shape (c*kh*kw) x (n*out_h*out_w). Rows run over
// (channel, kernel row, kernel col); columns are batch-major, then row-major
// over output positions. Padding reads as zero.
Matrix im2col(const ImageBatch& img, const ConvSpec& spec);

// Scatter-add adjoint of im2col.
ImageBatch col2im(const Matrix& cols, const ImageDims& dims, const ConvSpec& spec);

// out_channels x (n*out_h*out_w) matrix <-> NCHW output tensor.
ImageBatch columns_to_image(const Matrix& m, const ImageDims& out_dims);
Matrix image_to_columns(const ImageBatch& img);

ImageBatch conv_forward(const ImageBatch& img, const Matrix& weights, const ConvSpec& spec);

// Raw weight gradient (dZ P' or its consequentialism counterpart, no learning
// rate) and input gradient, for feeding a step rule.
struct ConvBackprop {
  Matrix grad;
  ImageBatch dx;
};

ConvBackprop conv_backprop(const ImageBatch& img, const Matrix& weights, const ConvSpec& spec,
                           const ImageBatch& dz_out, GradientTransform transform);

struct ConvGrads {
  Matrix dw;      // proposed weight change, sign included
  ImageBatch dx;  // dL/d(input)
};

// With P = im2col(img) and dZ the output gradient as a matrix: plain gives
// dw = -mu dZ P'; consequentialism gives dw = -mu dZ (P'P + lambda I)^-1 P'.
// The Gram system spans every patch column of the batch.
ConvGrads conv_backward(const ImageBatch& img, const Matrix& weights, const ConvSpec& spec,
                        const ImageBatch& dz_out, double mu, GradientTransform transform);

}  // namespace conseq
