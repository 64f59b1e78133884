#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dmad/rng.hpp"
#include "dmad/tensor.hpp"

namespace dmad {

/// A model weight: value plus an accumulated gradient of identical shape.
/// Gradients of non-trainable parameters stay identically zero through any
/// backward pass.
template <class S>
struct ParameterT {
    std::string name;
    TensorT<S> value;
    TensorT<S> grad;
    bool trainable = true;

    ParameterT() = default;
    ParameterT(std::string n, TensorT<S> v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

    void zero_grad() { grad.fill(S(0)); }

    template <class T>
    ParameterT<T> cast() const {
        ParameterT<T> p(name, value.template cast<T>(), trainable);
        return p;
    }
};

using Parameter = ParameterT<float>;

template <class S>
using NamedParams = std::vector<std::pair<std::string, ParameterT<S>*>>;

/// Truncated normal init (resample beyond 2 sigma), the transformer convention.
template <class S>
TensorT<S> trunc_normal(Shape shape, double std_dev, RngState& rng) {
    TensorT<S> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        double z = rng.next_normal();
        while (std::abs(z) > 2.0) z = rng.next_normal();
        t[i] = static_cast<S>(z * std_dev);
    }
    return t;
}

template <class S>
TensorT<S> normal_init(Shape shape, double std_dev, RngState& rng) {
    TensorT<S> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.next_normal() * std_dev);
    return t;
}

} // namespace dmad
