#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "advst/rng.hpp"
#include "advst/tensor.hpp"

// Digits-scale convolutional backbone: two 5x5 convolutions (64 and 128
// channels, each 2x2 max-pooled), two 1024-wide fully connected layers
// yielding the embedding v, a linear classifier head over v, and a 128-wide
// projection head whose rows are scaled to unit norm.

namespace advst {

template <class T>
struct ModelParams {
    Tensor<T> conv1_w, conv1_b;  // [64,3,5,5], [64]
    Tensor<T> conv2_w, conv2_b;  // [128,64,5,5], [128]
    Tensor<T> fc1_w, fc1_b;      // [3200,1024], [1024]
    Tensor<T> fc2_w, fc2_b;      // [1024,1024], [1024]
    Tensor<T> cls_w, cls_b;      // [1024,C], [C]
    Tensor<T> proj_w, proj_b;    // [1024,128], [128]

    std::vector<Tensor<T>*> all() {
        return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b,
                &fc2_w,   &fc2_b,   &cls_w,   &cls_b,   &proj_w, &proj_b};
    }
    // Fixed serialization order; the tensors share storage with the fields.
    std::vector<std::pair<std::string, Tensor<T>>> named() const {
        return {{"conv1_w", conv1_w}, {"conv1_b", conv1_b},
                {"conv2_w", conv2_w}, {"conv2_b", conv2_b},
                {"fc1_w", fc1_w},     {"fc1_b", fc1_b},
                {"fc2_w", fc2_w},     {"fc2_b", fc2_b},
                {"cls_w", cls_w},     {"cls_b", cls_b},
                {"proj_w", proj_w},   {"proj_b", proj_b}};
    }
    std::size_t class_count() const { return cls_w.dim(1); }
};

// Kaiming-style fan-in scaled uniform weights (bound sqrt(6/fan_in)), zero
// biases. Deterministic per rng state; weight arrays are drawn in declaration
// order, element order row-major.
template <class T>
ModelParams<T> init_model(std::size_t classes, Rng& rng);

template <class T>
struct ForwardOutput {
    Tensor<T> v;       // [B,1024] embedding
    Tensor<T> logits;  // [B,C]
    Tensor<T> u;       // [B,128], unit-norm rows
};

// images must be [B,3,32,32] with B >= 1.
template <class T>
ForwardOutput<T> forward(const ModelParams<T>& m, const Tensor<T>& images);

// x [B,n_in] @ w [n_in,n_out] + bias [n_out] broadcast over rows.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

}  // namespace advst
