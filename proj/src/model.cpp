#include "advst/model.hpp"

#include <cmath>

#include "advst/errors.hpp"
#include "advst/ops.hpp"

namespace advst {

namespace {

template <class T>
Tensor<T> draw_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    T* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i)
        p[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace

template <class T>
ModelParams<T> init_model(std::size_t classes, Rng& rng) {
    if (classes < 2)
        throw ContractError("init_model: need at least 2 classes, got " +
                            std::to_string(classes));
    ModelParams<T> m;
    m.conv1_w = draw_uniform<T>({64, 3, 5, 5}, 3 * 5 * 5, rng);
    m.conv1_b = Tensor<T>::zeros({64});
    m.conv2_w = draw_uniform<T>({128, 64, 5, 5}, 64 * 5 * 5, rng);
    m.conv2_b = Tensor<T>::zeros({128});
    m.fc1_w = draw_uniform<T>({3200, 1024}, 3200, rng);
    m.fc1_b = Tensor<T>::zeros({1024});
    m.fc2_w = draw_uniform<T>({1024, 1024}, 1024, rng);
    m.fc2_b = Tensor<T>::zeros({1024});
    m.cls_w = draw_uniform<T>({1024, classes}, 1024, rng);
    m.cls_b = Tensor<T>::zeros({classes});
    m.proj_w = draw_uniform<T>({1024, 128}, 1024, rng);
    m.proj_b = Tensor<T>::zeros({128});
    return m;
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    namespace o = ops;
    Tensor<T> y = o::matmul(x, w);
    Tensor<T> row = o::reshape(bias, {std::size_t(1), bias.numel()});
    return o::add(y, o::expand(row, y.shape()));
}

template <class T>
ForwardOutput<T> forward(const ModelParams<T>& m, const Tensor<T>& images) {
    namespace o = ops;
    if (!images.defined() || images.rank() != 4 || images.dim(0) == 0 ||
        images.dim(1) != 3 || images.dim(2) != 32 || images.dim(3) != 32)
        throw ContractError("forward: images must be [B,3,32,32], got " +
                            (images.defined() ? shape_str(images.shape())
                                              : std::string("undefined")));
    const std::size_t b = images.dim(0);

    Tensor<T> h = o::relu(o::maxpool2x2(o::conv2d(images, m.conv1_w, m.conv1_b)));
    h = o::relu(o::maxpool2x2(o::conv2d(h, m.conv2_w, m.conv2_b)));
    h = o::reshape(h, {b, std::size_t(3200)});
    h = o::relu(linear(h, m.fc1_w, m.fc1_b));

    ForwardOutput<T> out;
    out.v = o::relu(linear(h, m.fc2_w, m.fc2_b));
    out.logits = linear(out.v, m.cls_w, m.cls_b);
    out.u = o::l2_normalize(linear(out.v, m.proj_w, m.proj_b));
    return out;
}

#define ADVST_MODEL_INSTANTIATE(T)                                            \
    template ModelParams<T> init_model<T>(std::size_t, Rng&);                 \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&,          \
                                 const Tensor<T>&);                           \
    template ForwardOutput<T> forward<T>(const ModelParams<T>&,               \
                                         const Tensor<T>&);

ADVST_MODEL_INSTANTIATE(float)
ADVST_MODEL_INSTANTIATE(double)

#undef ADVST_MODEL_INSTANTIATE

}  // namespace advst
