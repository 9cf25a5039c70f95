#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "uhdfour/ops.hpp"
#include "uhdfour/tensor.hpp"

namespace uhdfour {

/// Ordered registry of named trainable tensors. Handles returned by add() and
/// get() share storage with the registry.
template <class T>
class ParamStore {
   public:
    Tensor<T> add(std::string name, Shape shape, std::vector<T> values) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        Tensor<T> t(shape, std::move(values), true);
        index_.emplace(name, tensors_.size());
        names_.push_back(std::move(name));
        tensors_.push_back(t);
        return t;
    }

    bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

    const Tensor<T>& get(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
        return tensors_[it->second];
    }

    const std::vector<std::string>& names() const { return names_; }
    std::vector<Tensor<T>>& tensors() { return tensors_; }
    const std::vector<Tensor<T>>& tensors() const { return tensors_; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    void zero_grads() {
        for (auto& t : tensors_) t.zero_grad();
    }

   private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class Init { kaiming, zero };

template <class T>
struct Conv {
    Tensor<T> weight;
    Tensor<T> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
    std::size_t kernel() const { return weight.shape().h; }
    std::size_t in_channels() const { return weight.shape().c; }
    std::size_t out_channels() const { return weight.shape().n; }
};

/// Registers `<name>.weight` (outC, inC, k, k) and `<name>.bias`. Weights are
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) (Kaiming uniform with a = sqrt(5)); biases
/// start at zero.
template <class T>
Conv<T> make_conv(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  std::size_t k, std::mt19937_64& rng, Init init = Init::kaiming,
                  std::size_t stride = 1, std::size_t padding = static_cast<std::size_t>(-1)) {
    if (padding == static_cast<std::size_t>(-1)) padding = (k - 1) / 2;
    const Shape ws{out, in, k, k};
    std::vector<T> w(ws.size(), T(0));
    if (init == Init::kaiming) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : w) v = static_cast<T>(dist(rng));
    }
    Conv<T> conv;
    conv.weight = store.add(name + ".weight", ws, std::move(w));
    conv.bias = store.add(name + ".bias", Shape{1, out, 1, 1}, std::vector<T>(out, T(0)));
    conv.stride = stride;
    conv.padding = padding;
    return conv;
}

}  // namespace uhdfour
