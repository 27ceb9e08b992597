#pragma once

// Differentiable operators. Layout conventions:
//   images / feature maps  [C, H, W]
//   3D feature volumes     [C, D, H, W]
//   coordinate grids       [2, H, W]  (x then y, absolute source pixels)

#include <cstddef>
#include <optional>
#include <vector>

#include "du2/tensor.hpp"

namespace du2 {

/// Convolution geometry. Padding is zero padding; when unset it is the
/// "same" amount dilation*(kernel-1)/2 so stride-1 convs keep extents.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::optional<std::size_t> padding;

  std::size_t pad() const { return padding.value_or(dilation * (kernel - 1) / 2); }
  /// floor((in + 2*pad - dilation*(kernel-1) - 1) / stride) + 1
  std::size_t output_extent(std::size_t in) const;
};

/// input [Ci,H,W], weight [Co,Ci,k,k], bias [Co] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec);

/// input [Ci,D,H,W], weight [Co,Ci,k,k,k], bias [Co] or undefined.
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec);

/// x if x >= 0 else slope*x; the derivative at 0 is 1.
Tensor leaky_relu(const Tensor& x, double slope);

/// Max-subtracted softmax of x/temperature along `axis`.
Tensor softmax_axis(const Tensor& x, std::size_t axis, double temperature);

/// Bilinear lookup of src [C,H,W] at coords [2,Ho,Wo]. Taps outside the
/// source contribute zero. Differentiable in src and coords.
Tensor sample_bilinear2d(const Tensor& src, const Tensor& coords);

/// Pixel-center grid [2,H,W] with coords(x,y) = (x,y).
Tensor identity_grid(std::size_t height, std::size_t width);

// Elementwise arithmetic (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor square(const Tensor& x);
/// log(x + eps); x must stay above -eps.
Tensor log_eps(const Tensor& x, double eps);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

/// params = [alpha, beta]; returns alpha + beta * x.
Tensor affine_map(const Tensor& x, const Tensor& params);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum of x .* w over all elements (w may or may not require a gradient).
Tensor weighted_sum(const Tensor& x, const Tensor& w);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Copying reshape; sizes must agree.
Tensor reshape(const Tensor& x, Shape shape);
/// out.shape[i] = x.shape[perm[i]].
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
/// Slice [begin, end) of axis 0.
Tensor slice0(const Tensor& x, std::size_t begin, std::size_t end);

/// Reduces the trailing axis by summation: [..., N] -> [...].
Tensor sum_last_axis(const Tensor& x);
/// Divides each trailing-axis row by its sum; rows whose sum is below
/// `eps` become uniform (and pass no gradient).
Tensor renormalize_last_axis(const Tensor& x, double eps);

}  // namespace du2
