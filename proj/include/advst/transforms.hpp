#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "advst/ops.hpp"
#include "advst/rng.hpp"
#include "advst/tensor.hpp"

// Parameterized, differentiable image augmentations and their composition
// into transformation chains drawn from a uniform chain distribution.
// Images are B x 3 x H x W batches with values in [0,1]; one parameter set
// applies to every image in the batch (callers wanting per-image parameters
// run per-image batches).

namespace advst {

enum class BaseOpKind : int {
    HSV = 0,
    Contrast,
    Invert,
    Sharpness,
    Shear,
    Translate,
    Rotate,
    Scale,
    Solarize,
    Equalize,
    Posterize,
    Cutout,
};

inline constexpr int kNumBaseOps = 12;
inline constexpr int kMaxOpParams = 3;

struct BaseOpInfo {
    const char* name;
    int param_count;     // learnable parameters
    bool learnable;      // param_count > 0
    bool differentiable; // false: straight-through or frozen-mask backward
    double neutral[kMaxOpParams];
    double lo[kMaxOpParams];
    double hi[kMaxOpParams];
};

const BaseOpInfo& base_op_info(BaseOpKind kind);

// An ordered chain of distinct base ops.
struct TransformChain {
    std::vector<BaseOpKind> ops;
    std::size_t length() const { return ops.size(); }
};

std::string chain_str(const TransformChain& chain);

// Uniform distribution over chains: pick length L uniformly from 1..l_max,
// then one of the M_L ordered duplicate-free chains of that length uniformly,
// so every chain of length L has probability 1/(M_L * l_max).
struct ChainDistribution {
    std::size_t l_max = 3;

    std::size_t chain_count(std::size_t length) const;  // M_L = 12*11*...
    std::size_t total_chains() const;                   // sum over 1..l_max
};

double chain_probability(const TransformChain& chain, const ChainDistribution& dist);
TransformChain sample_chain(const ChainDistribution& dist, Rng& rng);

// Stochastic attributes drawn once at initialization and never ascended.
struct FrozenAttrs {
    int posterize_bits = 8;
    double cutout_frac = 0.0;  // square side as a fraction of min(H, W)
    double cutout_cy = 0.5;    // center as fractions of height/width
    double cutout_cx = 0.5;
};

template <class T>
struct TransformParams {
    std::vector<Tensor<T>> learnable;  // per chain op, shape [param_count]
    std::vector<FrozenAttrs> frozen;   // per chain op
};

// Neutral values plus uniform noise of 10% of each interval's width, clamped;
// frozen attributes sampled once (Posterize bits in {3..8}; Cutout side
// fraction in [0.1, 0.4] with the center uniform inside the image).
template <class T>
TransformParams<T> init_params(const TransformChain& chain, Rng& rng);

// Project every learnable parameter onto its interval, in place; the hue
// delta wraps into [-0.5, 0.5] instead of clamping. Idempotent.
template <class T>
void clamp_params(const TransformChain& chain, TransformParams<T>& params);

template <class T>
Tensor<T> apply_base(BaseOpKind kind, const Tensor<T>& params, const FrozenAttrs& frozen,
                     const Tensor<T>& images);

template <class T>
Tensor<T> apply_chain(const TransformChain& chain, const TransformParams<T>& params,
                      const Tensor<T>& images);

// Tile a batch into one page and write binary PGM (1 channel) or PPM (3).
template <class T>
void write_image_grid(const std::string& path, const Tensor<T>& images);

}  // namespace advst
