// SPDX-License-Identifier: Apache-2.0
#include "conseq/conv.hpp"

#include <string>

#include "conseq/error.hpp"
#include "conseq/linalg.hpp"

namespace conseq {

namespace {

std::size_t out_extent(std::size_t in, std::size_t kernel, const ConvSpec& spec, const char* axis) {
  if (spec.stride == 0) throw InvalidSpec("stride must be at least 1");
  if (kernel == 0) throw InvalidSpec(std::string("kernel ") + axis + " must be at least 1");
  const std::size_t padded = in + 2 * spec.pad;
  if (padded < kernel) {
    throw InvalidSpec(std::string("kernel ") + axis + " " + std::to_string(kernel) +
                      " exceeds padded input " + std::to_string(padded));
  }
  return (padded - kernel) / spec.stride + 1;
}

void check_patch_matrix(const Matrix& cols, const ImageDims& dims, const ConvSpec& spec) {
  const std::size_t rows = dims.c * spec.kernel_h * spec.kernel_w;
  const std::size_t n_cols = patch_gram_dim(dims, spec);
  if (cols.rows() != rows || cols.cols() != n_cols) {
    throw InvalidSpec("patch matrix " + cols.shape_string() + " does not match expected " +
                      std::to_string(rows) + "x" + std::to_string(n_cols));
  }
}

}  // namespace

ImageBatch::ImageBatch(ImageDims d, std::vector<double> values) : dims(d), data(std::move(values)) {
  if (data.size() != dims.count()) {
    throw DimensionMismatch("image buffer holds " + std::to_string(data.size()) +
                            " values, dims need " + std::to_string(dims.count()));
  }
}

std::size_t conv_out_h(const ImageDims& in, const ConvSpec& spec) {
  return out_extent(in.h, spec.kernel_h, spec, "height");
}

std::size_t conv_out_w(const ImageDims& in, const ConvSpec& spec) {
  return out_extent(in.w, spec.kernel_w, spec, "width");
}

ImageDims conv_output_dims(const ImageDims& in, const ConvSpec& spec) {
  if (spec.out_channels == 0) throw InvalidSpec("out_channels must be at least 1");
  return {in.n, spec.out_channels, conv_out_h(in, spec), conv_out_w(in, spec)};
}

std::size_t patch_gram_dim(const ImageDims& in, const ConvSpec& spec) {
  return in.n * conv_out_h(in, spec) * conv_out_w(in, spec);
}

Matrix im2col(const ImageBatch& img, const ConvSpec& spec) {
  const ImageDims& d = img.dims;
  const std::size_t oh = conv_out_h(d, spec);
  const std::size_t ow = conv_out_w(d, spec);
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  Matrix cols(d.c * kh * kw, d.n * oh * ow);
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const std::size_t row = (c * kh + ky) * kw + kx;
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t oy = 0; oy < oh; ++oy) {
            // Signed offsets: padding shifts the window before row 0.
            const long iy = static_cast<long>(oy * spec.stride + ky) - static_cast<long>(spec.pad);
            if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix =
                  static_cast<long>(ox * spec.stride + kx) - static_cast<long>(spec.pad);
              if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
              cols(row, (n * oh + oy) * ow + ox) = img.at(n, c, iy, ix);
            }
          }
      }
  return cols;
}

ImageBatch col2im(const Matrix& cols, const ImageDims& dims, const ConvSpec& spec) {
  check_patch_matrix(cols, dims, spec);
  const std::size_t oh = conv_out_h(dims, spec);
  const std::size_t ow = conv_out_w(dims, spec);
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  ImageBatch img(dims);
  for (std::size_t c = 0; c < dims.c; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const std::size_t row = (c * kh + ky) * kw + kx;
        for (std::size_t n = 0; n < dims.n; ++n)
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * spec.stride + ky) - static_cast<long>(spec.pad);
            if (iy < 0 || iy >= static_cast<long>(dims.h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix =
                  static_cast<long>(ox * spec.stride + kx) - static_cast<long>(spec.pad);
              if (ix < 0 || ix >= static_cast<long>(dims.w)) continue;
              img.at(n, c, iy, ix) += cols(row, (n * oh + oy) * ow + ox);
            }
          }
      }
  return img;
}

ImageBatch columns_to_image(const Matrix& m, const ImageDims& out_dims) {
  const std::size_t plane = out_dims.h * out_dims.w;
  if (m.rows() != out_dims.c || m.cols() != out_dims.n * plane) {
    throw DimensionMismatch("cannot reshape " + m.shape_string() + " into an image batch");
  }
  ImageBatch out(out_dims);
  for (std::size_t n = 0; n < out_dims.n; ++n)
    for (std::size_t c = 0; c < out_dims.c; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        out.data[(n * out_dims.c + c) * plane + p] = m(c, n * plane + p);
  return out;
}

Matrix image_to_columns(const ImageBatch& img) {
  const ImageDims& d = img.dims;
  const std::size_t plane = d.h * d.w;
  Matrix m(d.c, d.n * plane);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        m(c, n * plane + p) = img.data[(n * d.c + c) * plane + p];
  return m;
}

ImageBatch conv_forward(const ImageBatch& img, const Matrix& weights, const ConvSpec& spec) {
  const ImageDims out_dims = conv_output_dims(img.dims, spec);
  if (weights.rows() != spec.out_channels ||
      weights.cols() != img.dims.c * spec.kernel_h * spec.kernel_w) {
    throw DimensionMismatch("conv weights " + weights.shape_string() + " do not match " +
                            std::to_string(spec.out_channels) + "x" +
                            std::to_string(img.dims.c * spec.kernel_h * spec.kernel_w));
  }
  return columns_to_image(gemm(weights, im2col(img, spec)), out_dims);
}

ConvBackprop conv_backprop(const ImageBatch& img, const Matrix& weights, const ConvSpec& spec,
                           const ImageBatch& dz_out, GradientTransform transform) {
  const ImageDims out_dims = conv_output_dims(img.dims, spec);
  if (!(dz_out.dims == out_dims)) {
    throw DimensionMismatch("output gradient dims do not match the convolution output");
  }
  if (weights.rows() != spec.out_channels ||
      weights.cols() != img.dims.c * spec.kernel_h * spec.kernel_w) {
    throw DimensionMismatch("conv weights " + weights.shape_string() + " do not match the spec");
  }
  const Matrix patches = im2col(img, spec);
  const Matrix dz = image_to_columns(dz_out);
  ConvBackprop out;
  if (transform.kind == GradientTransform::Kind::kPlain) {
    out.grad = gemm(dz, patches, Op::kNone, Op::kTranspose);
  } else {
    out.grad = ridge_right_pinv_apply(dz, patches, transform.lambda);
  }
  out.dx = col2im(gemm(weights, dz, Op::kTranspose, Op::kNone), img.dims, spec);
  return out;
}

ConvGrads conv_backward(const ImageBatch& img, const Matrix& weights, const ConvSpec& spec,
                        const ImageBatch& dz_out, double mu, GradientTransform transform) {
  ConvBackprop bp = conv_backprop(img, weights, spec, dz_out, transform);
  return {std::move(bp.grad) * -mu, std::move(bp.dx)};
}

}  // namespace conseq
