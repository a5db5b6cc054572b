#pragma once

#include <cstddef>
#include <vector>

#include "advst/tensor.hpp"

// Differentiable primitives. Each op computes its output eagerly and, when
// some input is a live differentiable node, records a backward closure on
// that input's graph. Binary elementwise ops accept equal shapes or a
// one-element tensor on either side (broadcast); any other mismatch is a
// contract violation naming the op and shapes.

namespace advst::ops {

// -- elementwise binary ------------------------------------------------------
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
// Elementwise max/min; ties route the gradient to the first argument.
template <class T> Tensor<T> max_elem(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> min_elem(const Tensor<T>& a, const Tensor<T>& b);

// -- elementwise unary -------------------------------------------------------
template <class T> Tensor<T> neg(const Tensor<T>& a);
template <class T> Tensor<T> exp(const Tensor<T>& a);
template <class T> Tensor<T> log(const Tensor<T>& a);
template <class T> Tensor<T> sin(const Tensor<T>& a);
template <class T> Tensor<T> cos(const Tensor<T>& a);
template <class T> Tensor<T> relu(const Tensor<T>& a);
// a^p elementwise for a real exponent.
template <class T> Tensor<T> power(const Tensor<T>& a, double p);
// a + c and a * c with a plain scalar attribute.
template <class T> Tensor<T> adds(const Tensor<T>& a, double c);
template <class T> Tensor<T> muls(const Tensor<T>& a, double c);
// Clamp to [lo, hi]; gradient passes through on the closed interval.
template <class T> Tensor<T> clamp(const Tensor<T>& a, double lo, double hi);
// x - floor(x); gradient passes through (slope 1 almost everywhere).
template <class T> Tensor<T> wrap01(const Tensor<T>& a);

// -- shape and layout --------------------------------------------------------
template <class T> Tensor<T> reshape(const Tensor<T>& a, std::vector<std::size_t> shape);
template <class T> Tensor<T> transpose(const Tensor<T>& a);  // rank 2
// Broadcast size-1 axes of a up to `shape` (ranks must match).
template <class T> Tensor<T> expand(const Tensor<T>& a, std::vector<std::size_t> shape);
template <class T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <class T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis,
                                   std::size_t start, std::size_t len);
// Rows of a rank-2 tensor selected by index; repeated indices accumulate in
// the backward scatter.
template <class T> Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& idx);
// out[i] = a[i, labels[i]] for a rank-2 tensor.
template <class T> Tensor<T> gather_labels(const Tensor<T>& a, const std::vector<std::size_t>& labels);
// Reflect-pad the last two axes of a rank-4 tensor by one pixel.
template <class T> Tensor<T> pad_reflect1(const Tensor<T>& a);

// -- reductions --------------------------------------------------------------
template <class T> Tensor<T> sum_all(const Tensor<T>& a);
template <class T> Tensor<T> mean_all(const Tensor<T>& a);
template <class T> Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis);
template <class T> Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis);

// -- last-axis softmax family (numerically stable) ---------------------------
template <class T> Tensor<T> softmax(const Tensor<T>& a);
template <class T> Tensor<T> log_softmax(const Tensor<T>& a);
template <class T> Tensor<T> logsumexp(const Tensor<T>& a);  // drops the last axis

// -- network layers ----------------------------------------------------------
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);  // rank 2
// Valid 2-D convolution, stride 1: x [B,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout].
template <class T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
// 2x2 max pool, stride 2; even spatial extents required; ties keep the first
// element in row-major scan order.
template <class T> Tensor<T> maxpool2x2(const Tensor<T>& x);
// Rows of the last axis scaled to unit L2 norm (norms below eps are treated
// as the constant eps).
template <class T> Tensor<T> l2_normalize(const Tensor<T>& a, double eps = 1e-12);

// -- spatial sampling --------------------------------------------------------
// theta [B,2,3] -> grid [B,H,W,2] of normalized sample locations, where the
// output pixel (i,j) maps to base coordinates xn = 2j/(W-1)-1, yn = 2i/(H-1)-1.
template <class T> Tensor<T> affine_grid(const Tensor<T>& theta, std::size_t h, std::size_t w);
// Bilinear sampling of x [B,C,H,W] at grid [B,Hg,Wg,2] (x then y, in [-1,1]).
// Out-of-bounds corners read as zero and contribute no location gradient.
template <class T> Tensor<T> grid_sample(const Tensor<T>& x, const Tensor<T>& grid);

// -- quantizing image ops (straight-through backward) -------------------------
// Per-channel 256-bin histogram equalization of a rank-4 [B,C,H,W] image
// batch in [0,1].
template <class T> Tensor<T> equalize_hist(const Tensor<T>& x);
// Per-sample bit-depth reduction: keep bits[b] high bits of each 8-bit level.
template <class T> Tensor<T> posterize_bits(const Tensor<T>& x, const std::vector<int>& bits);

namespace detail {
// Test fixture: flips the sign of relu's backward rule so gradient-check
// suites can prove they catch a broken primitive.
extern bool corrupt_relu_backward;
}  // namespace detail

}  // namespace advst::ops
