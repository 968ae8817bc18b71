#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mal/core/errors.hpp"
#include "mal/core/tensor.hpp"

namespace mal {

// Named trainable tensors in registration order. Order is part of the
// checkpoint format, so registration must be deterministic.
template <typename T>
class ParameterStore {
public:
    std::size_t add(const std::string& name, Tensor<T> value) {
        MAL_REQUIRE(!index_.contains(name), "duplicate parameter name: " + name);
        index_.emplace(name, tensors_.size());
        names_.push_back(name);
        tensors_.push_back(std::move(value));
        return tensors_.size() - 1;
    }

    std::size_t size() const noexcept { return tensors_.size(); }
    bool contains(const std::string& name) const { return index_.contains(name); }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        MAL_REQUIRE(it != index_.end(), "unknown parameter: " + name);
        return it->second;
    }

    const std::string& name(std::size_t i) const { return names_.at(i); }
    Tensor<T>& operator[](std::size_t i) { return tensors_.at(i); }
    const Tensor<T>& operator[](std::size_t i) const { return tensors_.at(i); }
    Tensor<T>& operator[](const std::string& name) { return tensors_[index_of(name)]; }
    const Tensor<T>& operator[](const std::string& name) const { return tensors_[index_of(name)]; }

    const std::vector<Tensor<T>>& tensors() const noexcept { return tensors_; }
    const std::vector<std::string>& names() const noexcept { return names_; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    std::vector<Tensor<T>> zeros_like() const {
        std::vector<Tensor<T>> out;
        out.reserve(tensors_.size());
        for (const auto& t : tensors_) out.emplace_back(t.rows(), t.cols());
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::map<std::string, std::size_t> index_;
};

template <typename T>
using GradientMap = std::vector<Tensor<T>>;

template <typename T, typename Rng>
Tensor<T> random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<T> out(rows, cols);
    for (auto& v : out.data()) v = static_cast<T>(dist(rng));
    return out;
}

}  // namespace mal
