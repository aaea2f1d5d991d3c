#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "octforge/tape.hpp"
#include "octforge/tensor.hpp"

namespace octforge {

// Named, trainable-or-frozen tensor with its persistent gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
};

// Registration-ordered parameter + buffer registry with unique names. Buffers
// are non-differentiable state (batchnorm running stats).
template <typename T>
class ParamStore {
public:
    Parameter<T>& add_param(const std::string& name, Tensor<T> init, bool trainable = true) {
        reserve_name(name);
        Parameter<T> p;
        p.name = name;
        p.grad = Tensor<T>(init.dims());
        p.value = std::move(init);
        p.trainable = trainable;
        param_index_[name] = params_.size();
        params_.push_back(std::move(p));
        return params_.back();
    }

    Tensor<T>& add_buffer(const std::string& name, Tensor<T> init) {
        reserve_name(name);
        buffer_index_[name] = buffers_.size();
        buffers_.emplace_back(name, std::move(init));
        return buffers_.back().second;
    }

    Parameter<T>& param(const std::string& name) {
        auto it = param_index_.find(name);
        check(it != param_index_.end(), "unknown parameter: " + name);
        return params_[it->second];
    }
    const Parameter<T>& param(const std::string& name) const {
        auto it = param_index_.find(name);
        check(it != param_index_.end(), "unknown parameter: " + name);
        return params_[it->second];
    }
    bool has_param(const std::string& name) const { return param_index_.count(name) > 0; }

    Tensor<T>& buffer(const std::string& name) {
        auto it = buffer_index_.find(name);
        check(it != buffer_index_.end(), "unknown buffer: " + name);
        return buffers_[it->second].second;
    }

    std::vector<Parameter<T>>& params() { return params_; }
    const std::vector<Parameter<T>>& params() const { return params_; }
    std::vector<std::pair<std::string, Tensor<T>>>& buffers() { return buffers_; }
    const std::vector<std::pair<std::string, Tensor<T>>>& buffers() const { return buffers_; }

    void zero_grads() {
        for (auto& p : params_) p.grad.zero();
    }

    int64_t trainable_count() const {
        int64_t n = 0;
        for (const auto& p : params_)
            if (p.trainable) n += p.value.numel();
        return n;
    }

    // Binds a parameter into a tape; frozen parameters join as constants so no
    // gradient work happens upstream of them.
    typename Tape<T>::Id bind(Tape<T>& tape, const std::string& name) {
        Parameter<T>& p = param(name);
        return tape.param(&p.value, p.trainable ? &p.grad : nullptr);
    }

private:
    void reserve_name(const std::string& name) {
        check(!param_index_.count(name) && !buffer_index_.count(name),
              "duplicate parameter/buffer name: " + name);
    }

    std::vector<Parameter<T>> params_;
    std::vector<std::pair<std::string, Tensor<T>>> buffers_;
    std::map<std::string, size_t> param_index_;
    std::map<std::string, size_t> buffer_index_;
};

// Kaiming fan-in normal init for conv/linear weights.
template <typename T>
Tensor<T> kaiming_init(std::vector<int> dims, int fan_in, Rng& rng) {
    Tensor<T> t(std::move(dims));
    const double stddev = std::sqrt(2.0 / double(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(stddev * rng.normal());
    return t;
}

} // namespace octforge
