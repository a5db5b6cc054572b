#include "advst/transforms.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

namespace advst {

namespace o = ops;

const BaseOpInfo& base_op_info(BaseOpKind kind) {
    static const BaseOpInfo table[kNumBaseOps] = {
        {"hsv", 3, true, true, {0, 0, 0}, {-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}},
        {"contrast", 1, true, true, {1, 0, 0}, {0.25, 0, 0}, {4, 0, 0}},
        {"invert", 1, true, true, {1, 0, 0}, {0, 0, 0}, {1, 0, 0}},
        {"sharpness", 1, true, true, {0, 0, 0}, {-1, 0, 0}, {3, 0, 0}},
        {"shear", 2, true, true, {0, 0, 0}, {-0.3, -0.3, 0}, {0.3, 0.3, 0}},
        {"translate", 2, true, true, {0, 0, 0}, {-0.3, -0.3, 0}, {0.3, 0.3, 0}},
        {"rotate", 1, true, true, {0, 0, 0}, {-0.5236, 0, 0}, {0.5236, 0, 0}},
        {"scale", 1, true, true, {1, 0, 0}, {0.5, 0, 0}, {2, 0, 0}},
        {"solarize", 1, true, true, {0, 0, 0}, {0, 0, 0}, {1, 0, 0}},
        {"equalize", 0, false, false, {0, 0, 0}, {0, 0, 0}, {0, 0, 0}},
        {"posterize", 0, false, false, {0, 0, 0}, {0, 0, 0}, {0, 0, 0}},
        {"cutout", 0, false, false, {0, 0, 0}, {0, 0, 0}, {0, 0, 0}},
    };
    const int k = static_cast<int>(kind);
    if (k < 0 || k >= kNumBaseOps) throw ContractError("base_op_info: unknown op kind");
    return table[k];
}

std::string chain_str(const TransformChain& chain) {
    std::string s;
    for (std::size_t i = 0; i < chain.ops.size(); ++i) {
        if (i) s += "+";
        s += base_op_info(chain.ops[i]).name;
    }
    return s;
}

std::size_t ChainDistribution::chain_count(std::size_t length) const {
    std::size_t m = 1;
    for (std::size_t i = 0; i < length; ++i) m *= static_cast<std::size_t>(kNumBaseOps) - i;
    return m;
}

std::size_t ChainDistribution::total_chains() const {
    std::size_t t = 0;
    for (std::size_t l = 1; l <= l_max; ++l) t += chain_count(l);
    return t;
}

namespace {

void check_dist(const ChainDistribution& dist) {
    if (dist.l_max < 1 || dist.l_max > static_cast<std::size_t>(kNumBaseOps))
        throw ContractError("chain distribution: l_max " + std::to_string(dist.l_max) +
                            " outside 1.." + std::to_string(kNumBaseOps));
}

void check_chain(const TransformChain& chain, std::size_t l_max) {
    if (chain.ops.empty() || chain.ops.size() > l_max)
        throw ContractError("chain: length " + std::to_string(chain.ops.size()) +
                            " outside 1.." + std::to_string(l_max));
    bool seen[kNumBaseOps] = {};
    for (BaseOpKind kind : chain.ops) {
        const int k = static_cast<int>(kind);
        if (k < 0 || k >= kNumBaseOps) throw ContractError("chain: unknown op kind");
        if (seen[k])
            throw ContractError(std::string("chain: duplicate op ") + base_op_info(kind).name);
        seen[k] = true;
    }
}

}  // namespace

double chain_probability(const TransformChain& chain, const ChainDistribution& dist) {
    check_dist(dist);
    check_chain(chain, dist.l_max);
    return 1.0 / (static_cast<double>(dist.chain_count(chain.length())) *
                  static_cast<double>(dist.l_max));
}

TransformChain sample_chain(const ChainDistribution& dist, Rng& rng) {
    check_dist(dist);
    const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform_int(dist.l_max));
    std::array<int, kNumBaseOps> pool;
    for (int i = 0; i < kNumBaseOps; ++i) pool[static_cast<std::size_t>(i)] = i;
    TransformChain chain;
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(rng.uniform_int(static_cast<std::size_t>(kNumBaseOps) - i));
        std::swap(pool[i], pool[j]);
        chain.ops.push_back(static_cast<BaseOpKind>(pool[i]));
    }
    return chain;
}

template <class T>
TransformParams<T> init_params(const TransformChain& chain, Rng& rng) {
    check_chain(chain, static_cast<std::size_t>(kNumBaseOps));
    TransformParams<T> out;
    for (BaseOpKind kind : chain.ops) {
        const BaseOpInfo& info = base_op_info(kind);
        std::vector<T> vals(static_cast<std::size_t>(info.param_count));
        for (int j = 0; j < info.param_count; ++j) {
            const double width = info.hi[j] - info.lo[j];
            double v = info.neutral[j] + (rng.uniform() * 2.0 - 1.0) * 0.1 * width;
            v = std::min(std::max(v, info.lo[j]), info.hi[j]);
            vals[static_cast<std::size_t>(j)] = static_cast<T>(v);
        }
        out.learnable.push_back(
            Tensor<T>::from_values({static_cast<std::size_t>(info.param_count)}, std::move(vals)));
        FrozenAttrs fz;
        if (kind == BaseOpKind::Posterize) fz.posterize_bits = 3 + static_cast<int>(rng.uniform_int(6));
        if (kind == BaseOpKind::Cutout) {
            fz.cutout_frac = 0.1 + rng.uniform() * 0.3;
            fz.cutout_cy = rng.uniform();
            fz.cutout_cx = rng.uniform();
        }
        out.frozen.push_back(fz);
    }
    return out;
}

template <class T>
void clamp_params(const TransformChain& chain, TransformParams<T>& params) {
    if (params.learnable.size() != chain.ops.size())
        throw ContractError("clamp_params: params do not match the chain");
    for (std::size_t i = 0; i < chain.ops.size(); ++i) {
        const BaseOpInfo& info = base_op_info(chain.ops[i]);
        auto& vals = params.learnable[i].values();
        if (vals.size() != static_cast<std::size_t>(info.param_count))
            throw ContractError(std::string("clamp_params: ") + info.name +
                                ": wrong parameter count");
        for (int j = 0; j < info.param_count; ++j) {
            T& v = vals[static_cast<std::size_t>(j)];
            if (chain.ops[i] == BaseOpKind::HSV && j == 0) {
                v = v - std::floor(v + T(0.5));  // hue wraps, period 1
            } else {
                v = std::min(std::max(v, static_cast<T>(info.lo[j])), static_cast<T>(info.hi[j]));
            }
        }
    }
}

namespace {

template <class T>
void check_images(const char* name, const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) < 2 || x.dim(3) < 2)
        throw ContractError(std::string(name) + ": B x 3 x H x W image batch required, got " +
                            shape_str(x.shape()));
    const T* v = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (!(v[i] >= T(-1e-6) && v[i] <= T(1) + T(1e-6)))
            throw ContractError(std::string(name) + ": image values outside [0,1]");
}

// Hue/saturation/value perturbation. The discrete choices (argmax channel,
// hue sector) are frozen from the forward values — ties resolve r, then g,
// then b — and gradients follow the smooth per-branch formulas.
template <class T>
Tensor<T> hsv_shift(const Tensor<T>& p, const Tensor<T>& x) {
    const std::vector<std::size_t> plane{x.dim(0), 1, x.dim(2), x.dim(3)};
    Tensor<T> r = o::slice(x, 1, 0, 1);
    Tensor<T> g = o::slice(x, 1, 1, 1);
    Tensor<T> b = o::slice(x, 1, 2, 1);
    Tensor<T> v = o::max_elem(o::max_elem(r, g), b);
    Tensor<T> mn = o::min_elem(o::min_elem(r, g), b);
    Tensor<T> c = o::sub(v, mn);

    const std::size_t n = v.numel();
    std::vector<T> mrv(n), mgv(n), mbv(n), grayv(n, T(0)), vzv(n, T(0));
    {
        const T* rv = r.data();
        const T* gv = g.data();
        const T* bv = b.data();
        const T* cv = c.data();
        const T* vv = v.data();
        for (std::size_t i = 0; i < n; ++i) {
            const bool isr = rv[i] >= gv[i] && rv[i] >= bv[i];
            const bool isg = !isr && gv[i] >= bv[i];
            mrv[i] = isr ? T(1) : T(0);
            mgv[i] = isg ? T(1) : T(0);
            mbv[i] = (!isr && !isg) ? T(1) : T(0);
            // Sub-quantization chroma or value counts as achromatic/black:
            // its hue and saturation are ill-defined, and the 1/c^2, 1/v^2
            // backward factors would overflow on such pixels.
            if (cv[i] <= T(1e-6)) grayv[i] = T(1);
            if (vv[i] <= T(1e-6)) vzv[i] = T(1);
        }
    }
    Tensor<T> mask_r = Tensor<T>::from_values(plane, std::move(mrv));
    Tensor<T> mask_g = Tensor<T>::from_values(plane, std::move(mgv));
    Tensor<T> mask_b = Tensor<T>::from_values(plane, std::move(mbv));
    Tensor<T> gray = Tensor<T>::from_values(plane, std::move(grayv));
    Tensor<T> vzero = Tensor<T>::from_values(plane, std::move(vzv));

    // (Near-)gray pixels divide by one-ish and keep a near-zero r-branch
    // numerator g - b, so their hue is ~0 and carries no gradient explosion.
    Tensor<T> c_safe = o::add(c, gray);
    Tensor<T> v_safe = o::add(v, vzero);
    Tensor<T> h6 = o::add(
        o::add(o::mul(mask_r, o::div(o::sub(g, b), c_safe)),
               o::mul(mask_g, o::adds(o::div(o::sub(b, r), c_safe), 2.0))),
        o::mul(mask_b, o::adds(o::div(o::sub(r, g), c_safe), 4.0)));
    Tensor<T> hue = o::wrap01(o::muls(h6, 1.0 / 6.0));
    Tensor<T> sat = o::div(c, v_safe);

    Tensor<T> hue2 = o::wrap01(o::add(hue, o::slice(p, 0, 0, 1)));
    Tensor<T> sat2 = o::clamp(o::add(sat, o::slice(p, 0, 1, 1)), 0.0, 1.0);
    Tensor<T> val2 = o::clamp(o::add(v, o::slice(p, 0, 2, 1)), 0.0, 1.0);

    Tensor<T> h6b = o::muls(hue2, 6.0);
    std::vector<T> kflo(n), evenv(n), oddv(n);
    std::vector<T> cmr(n, T(0)), xmr(n, T(0)), cmg(n, T(0)), xmg(n, T(0)), cmb(n, T(0)),
        xmb(n, T(0));
    {
        const T* hv = h6b.data();
        for (std::size_t i = 0; i < n; ++i) {
            int k = static_cast<int>(std::floor(static_cast<double>(hv[i])));
            k = std::min(std::max(k, 0), 5);
            kflo[i] = static_cast<T>(k);
            evenv[i] = (k % 2 == 0) ? T(1) : T(0);
            oddv[i] = T(1) - evenv[i];
            switch (k) {
                case 0: cmr[i] = 1; xmg[i] = 1; break;
                case 1: xmr[i] = 1; cmg[i] = 1; break;
                case 2: cmg[i] = 1; xmb[i] = 1; break;
                case 3: xmg[i] = 1; cmb[i] = 1; break;
                case 4: xmr[i] = 1; cmb[i] = 1; break;
                case 5: cmr[i] = 1; xmb[i] = 1; break;
            }
        }
    }
    Tensor<T> kc = Tensor<T>::from_values(plane, std::move(kflo));
    Tensor<T> even = Tensor<T>::from_values(plane, std::move(evenv));
    Tensor<T> odd = Tensor<T>::from_values(plane, std::move(oddv));
    Tensor<T> mc_r = Tensor<T>::from_values(plane, std::move(cmr));
    Tensor<T> mx_r = Tensor<T>::from_values(plane, std::move(xmr));
    Tensor<T> mc_g = Tensor<T>::from_values(plane, std::move(cmg));
    Tensor<T> mx_g = Tensor<T>::from_values(plane, std::move(xmg));
    Tensor<T> mc_b = Tensor<T>::from_values(plane, std::move(cmb));
    Tensor<T> mx_b = Tensor<T>::from_values(plane, std::move(xmb));

    Tensor<T> f = o::sub(h6b, kc);
    Tensor<T> ones = Tensor<T>::full(plane, T(1));
    Tensor<T> c2 = o::mul(val2, sat2);
    Tensor<T> ramp = o::add(o::mul(even, f), o::mul(odd, o::sub(ones, f)));
    Tensor<T> xx = o::mul(c2, ramp);
    Tensor<T> base = o::sub(val2, c2);
    Tensor<T> r2 = o::add(o::add(o::mul(mc_r, c2), o::mul(mx_r, xx)), base);
    Tensor<T> g2 = o::add(o::add(o::mul(mc_g, c2), o::mul(mx_g, xx)), base);
    Tensor<T> b2 = o::add(o::add(o::mul(mc_b, c2), o::mul(mx_b, xx)), base);
    return o::concat(std::vector<Tensor<T>>{r2, g2, b2}, 1);
}

template <class T>
Tensor<T> contrast_scale(const Tensor<T>& p, const Tensor<T>& x) {
    const std::size_t bt = x.dim(0);
    Tensor<T> mu = o::mean_axis(o::reshape(x, {bt, x.numel() / bt}), 1);
    Tensor<T> mu_b = o::expand(o::reshape(mu, {bt, 1, 1, 1}), x.shape());
    return o::add(o::mul(o::sub(x, mu_b), p), mu_b);
}

template <class T>
Tensor<T> invert_threshold(const Tensor<T>& p, const Tensor<T>& x) {
    // out = x + s * (1 - 2x): a pointwise blend toward the inverted image.
    // s is a sigmoid threshold mask gated to vanish identically at the
    // neutral parameter t = 1 so neutrality is exact, not asymptotic.
    Tensor<T> gate = o::clamp(o::muls(o::adds(o::neg(p), 1.0), 10.0), 0.0, 1.0);
    Tensor<T> z = o::muls(o::sub(x, p), 50.0);
    Tensor<T> ones = Tensor<T>::full(x.shape(), T(1));
    Tensor<T> sig = o::div(ones, o::adds(o::exp(o::neg(z)), 1.0));
    Tensor<T> s = o::mul(sig, gate);
    return o::add(x, o::mul(s, o::adds(o::muls(x, -2.0), 1.0)));
}

template <class T>
Tensor<T> sharpness_blend(const Tensor<T>& p, const Tensor<T>& x) {
    const std::size_t bt = x.dim(0), h = x.dim(2), w = x.dim(3);
    Tensor<T> planes = o::reshape(x, {bt * 3, 1, h, w});
    Tensor<T> padded = o::pad_reflect1(planes);
    const T k1 = T(1) / T(16), k2 = T(2) / T(16), k4 = T(4) / T(16);
    Tensor<T> kern = Tensor<T>::from_values({1, 1, 3, 3}, {k1, k2, k1, k2, k4, k2, k1, k2, k1});
    Tensor<T> blur = o::reshape(o::conv2d(padded, kern, Tensor<T>::zeros({1})), {bt, 3, h, w});
    return o::add(x, o::mul(o::sub(x, blur), p));
}

// One affine warp: theta rows map output-pixel normalized coordinates to the
// input sampling location, so parameters describe the inverse map.
template <class T>
Tensor<T> warp_affine(const Tensor<T>& x, const std::vector<Tensor<T>>& entries) {
    Tensor<T> theta = o::expand(o::reshape(o::concat(entries, 0), {1, 2, 3}), {x.dim(0), 2, 3});
    return o::grid_sample(x, o::affine_grid(theta, x.dim(2), x.dim(3)));
}

template <class T>
Tensor<T> cutout_mask(const FrozenAttrs& fz, const Tensor<T>& x) {
    if (!(fz.cutout_frac >= 0.0 && fz.cutout_frac <= 1.0) ||
        !(fz.cutout_cy >= 0.0 && fz.cutout_cy <= 1.0) ||
        !(fz.cutout_cx >= 0.0 && fz.cutout_cx <= 1.0))
        throw ContractError("cutout: frozen geometry outside the unit ranges");
    const std::size_t h = x.dim(2), w = x.dim(3);
    const long long side = std::max<long long>(
        1, std::lround(fz.cutout_frac * static_cast<double>(std::min(h, w))));
    const long long cy = std::min<long long>(static_cast<long long>(h) - 1,
                                             static_cast<long long>(fz.cutout_cy * static_cast<double>(h)));
    const long long cx = std::min<long long>(static_cast<long long>(w) - 1,
                                             static_cast<long long>(fz.cutout_cx * static_cast<double>(w)));
    const long long y0 = cy - side / 2, x0 = cx - side / 2;
    std::vector<T> mv(h * w, T(1));
    for (long long y = std::max<long long>(0, y0);
         y < std::min<long long>(static_cast<long long>(h), y0 + side); ++y)
        for (long long xc = std::max<long long>(0, x0);
             xc < std::min<long long>(static_cast<long long>(w), x0 + side); ++xc)
            mv[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(xc)] = T(0);
    Tensor<T> mask = Tensor<T>::from_values({1, 1, h, w}, std::move(mv));
    return o::mul(x, o::expand(mask, x.shape()));
}

}  // namespace

template <class T>
Tensor<T> apply_base(BaseOpKind kind, const Tensor<T>& params, const FrozenAttrs& frozen,
                     const Tensor<T>& images) {
    const BaseOpInfo& info = base_op_info(kind);
    check_images(info.name, images);
    const std::size_t np = params.defined() ? params.numel() : 0;
    if (np != static_cast<std::size_t>(info.param_count))
        throw ContractError(std::string("apply_base: ") + info.name + " takes " +
                            std::to_string(info.param_count) + " parameters, got " +
                            std::to_string(np));
    for (std::size_t j = 0; j < np; ++j) {
        const T v = params.values()[j];
        if (!(v >= static_cast<T>(info.lo[j]) && v <= static_cast<T>(info.hi[j])))
            throw ContractError(std::string("apply_base: ") + info.name + " parameter " +
                                std::to_string(j) + " outside its interval");
    }

    Tensor<T> one = Tensor<T>::scalar(T(1));
    Tensor<T> zero = Tensor<T>::scalar(T(0));
    Tensor<T> out;
    switch (kind) {
        case BaseOpKind::HSV:
            out = hsv_shift(params, images);
            break;
        case BaseOpKind::Contrast:
            out = contrast_scale(params, images);
            break;
        case BaseOpKind::Invert:
            out = invert_threshold(params, images);
            break;
        case BaseOpKind::Sharpness:
            out = sharpness_blend(params, images);
            break;
        case BaseOpKind::Shear: {
            Tensor<T> sx = o::slice(params, 0, 0, 1), sy = o::slice(params, 0, 1, 1);
            out = warp_affine(images, {one, sx, zero, sy, one, zero});
            break;
        }
        case BaseOpKind::Translate: {
            // Fractions of width/height; the normalized span is 2.
            Tensor<T> cx = o::muls(o::slice(params, 0, 0, 1), -2.0);
            Tensor<T> cy = o::muls(o::slice(params, 0, 1, 1), -2.0);
            out = warp_affine(images, {one, zero, cx, zero, one, cy});
            break;
        }
        case BaseOpKind::Rotate: {
            Tensor<T> ca = o::cos(params), sa = o::sin(params);
            out = warp_affine(images, {ca, sa, zero, o::neg(sa), ca, zero});
            break;
        }
        case BaseOpKind::Scale: {
            Tensor<T> inv = o::div(one, params);  // zoom s samples at p / s
            out = warp_affine(images, {inv, zero, zero, zero, inv, zero});
            break;
        }
        case BaseOpKind::Solarize:
            out = o::add(images, o::mul(params, o::adds(o::muls(images, -2.0), 1.0)));
            break;
        case BaseOpKind::Equalize:
            out = o::equalize_hist(images);
            break;
        case BaseOpKind::Posterize:
            out = o::posterize_bits(images,
                                    std::vector<int>(images.dim(0), frozen.posterize_bits));
            break;
        case BaseOpKind::Cutout:
            out = cutout_mask(frozen, images);
            break;
    }
    return o::clamp(out, 0.0, 1.0);
}

template <class T>
Tensor<T> apply_chain(const TransformChain& chain, const TransformParams<T>& params,
                      const Tensor<T>& images) {
    check_chain(chain, static_cast<std::size_t>(kNumBaseOps));
    if (params.learnable.size() != chain.ops.size() || params.frozen.size() != chain.ops.size())
        throw ContractError("apply_chain: params do not match the chain");
    Tensor<T> cur = images;
    for (std::size_t i = 0; i < chain.ops.size(); ++i)
        cur = apply_base(chain.ops[i], params.learnable[i], params.frozen[i], cur);
    return cur;
}

template <class T>
void write_image_grid(const std::string& path, const Tensor<T>& images) {
    if (images.rank() != 4 || (images.dim(1) != 1 && images.dim(1) != 3))
        throw ContractError("write_image_grid: B x {1|3} x H x W batch required, got " +
                            shape_str(images.shape()));
    const std::size_t bt = images.dim(0), cc = images.dim(1), h = images.dim(2),
                      w = images.dim(3);
    std::size_t cols = 1;
    while (cols * cols < bt) ++cols;
    const std::size_t rows = (bt + cols - 1) / cols;
    std::vector<unsigned char> buf(rows * h * cols * w * cc, 0);
    const T* v = images.data();
    for (std::size_t n = 0; n < bt; ++n) {
        const std::size_t ty = n / cols, tx = n % cols;
        for (std::size_t c = 0; c < cc; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double val = static_cast<double>(v[((n * cc + c) * h + y) * w + x]);
                    const long lv = std::lround(std::min(std::max(val, 0.0), 1.0) * 255.0);
                    buf[((ty * h + y) * (cols * w) + tx * w + x) * cc + c] =
                        static_cast<unsigned char>(lv);
                }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("write_image_grid: cannot open " + path);
    f << (cc == 1 ? "P5\n" : "P6\n") << cols * w << " " << rows * h << "\n255\n";
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw ContractError("write_image_grid: short write to " + path);
}

#define ADVST_TRANSFORMS_INSTANTIATE(T)                                                       \
    template TransformParams<T> init_params<T>(const TransformChain&, Rng&);                  \
    template void clamp_params<T>(const TransformChain&, TransformParams<T>&);                \
    template Tensor<T> apply_base<T>(BaseOpKind, const Tensor<T>&, const FrozenAttrs&,        \
                                     const Tensor<T>&);                                       \
    template Tensor<T> apply_chain<T>(const TransformChain&, const TransformParams<T>&,       \
                                      const Tensor<T>&);                                      \
    template void write_image_grid<T>(const std::string&, const Tensor<T>&);

ADVST_TRANSFORMS_INSTANTIATE(float)
ADVST_TRANSFORMS_INSTANTIATE(double)

}  // namespace advst
