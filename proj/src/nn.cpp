#include "ssgan/nn.hpp"

namespace ssgan {

namespace {

Index conv_extent(Index in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

Index transpose_extent(Index in, int kernel, int stride, int padding, int output_padding) {
  return (in - 1) * stride - 2 * padding + kernel + output_padding;
}

}  // namespace

Geometry conv_output(const Geometry& in, const ConvSpec& spec) {
  Geometry out{in.batch, conv_extent(in.frames, spec.kernel[0], spec.stride[0], spec.padding[0]),
               conv_extent(in.height, spec.kernel[1], spec.stride[1], spec.padding[1]),
               conv_extent(in.width, spec.kernel[2], spec.stride[2], spec.padding[2])};
  if (out.frames <= 0 || out.height <= 0 || out.width <= 0) {
    throw ShapeError("convolution output would be empty");
  }
  return out;
}

Geometry conv_transpose_output(const Geometry& in, const ConvSpec& spec) {
  Geometry out{in.batch,
               transpose_extent(in.frames, spec.kernel[0], spec.stride[0], spec.padding[0],
                                spec.output_padding[0]),
               transpose_extent(in.height, spec.kernel[1], spec.stride[1], spec.padding[1],
                                spec.output_padding[1]),
               transpose_extent(in.width, spec.kernel[2], spec.stride[2], spec.padding[2],
                                spec.output_padding[2])};
  if (out.frames <= 0 || out.height <= 0 || out.width <= 0) {
    throw ShapeError("transposed convolution output would be empty");
  }
  return out;
}

}  // namespace ssgan
