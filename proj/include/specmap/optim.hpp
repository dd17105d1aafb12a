#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "specmap/autodiff.hpp"
#include "specmap/rng.hpp"

namespace specmap::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameter store shared across training steps. Each parameter keeps a
// gradient accumulator and Adam moments; iteration order is the name order,
// so updates are deterministic.
template <typename Real>
class ParameterSet {
  public:
    struct Entry {
        Tensor<Real> value;
        Tensor<Real> grad;
        Tensor<Real> m;
        Tensor<Real> v;
    };

    Tensor<Real>& add(const std::string& name, Tensor<Real> init) {
        auto [it, fresh] = params_.emplace(name, Entry{});
        if (!fresh) throw std::logic_error("ParameterSet: duplicate parameter " + name);
        it->second.value = std::move(init);
        it->second.grad = Tensor<Real>(it->second.value.shape);
        it->second.m = Tensor<Real>(it->second.value.shape);
        it->second.v = Tensor<Real>(it->second.value.shape);
        return it->second.value;
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    Entry& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::logic_error("ParameterSet: no parameter " + name);
        return it->second;
    }
    const Entry& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::logic_error("ParameterSet: no parameter " + name);
        return it->second;
    }

    const std::map<std::string, Entry>& entries() const { return params_; }
    std::map<std::string, Entry>& entries() { return params_; }

    void zero_grads() {
        for (auto& [name, e] : params_)
            std::fill(e.grad.data.begin(), e.grad.data.end(), Real(0));
    }

    // One Adam step over every parameter. Gradients are multiplied by
    // grad_scale first (used to average over a batch). If any gradient entry
    // is non-finite the whole step is skipped and counted.
    bool adam_step(const AdamConfig& cfg, double grad_scale = 1.0) {
        for (const auto& [name, e] : params_)
            for (Real g : e.grad.data)
                if (!std::isfinite(double(g))) {
                    ++skipped_steps_;
                    return false;
                }
        ++step_count_;
        const double b1t = 1.0 - std::pow(cfg.beta1, double(step_count_));
        const double b2t = 1.0 - std::pow(cfg.beta2, double(step_count_));
        for (auto& [name, e] : params_) {
            for (size_t i = 0; i < e.value.data.size(); ++i) {
                const double g = double(e.grad.data[i]) * grad_scale;
                const double m = cfg.beta1 * double(e.m.data[i]) + (1.0 - cfg.beta1) * g;
                const double v = cfg.beta2 * double(e.v.data[i]) + (1.0 - cfg.beta2) * g * g;
                e.m.data[i] = Real(m);
                e.v.data[i] = Real(v);
                const double mhat = m / b1t;
                const double vhat = v / b2t;
                e.value.data[i] -= Real(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
            }
        }
        return true;
    }

    int64_t step_count() const { return step_count_; }
    int64_t skipped_steps() const { return skipped_steps_; }

    // Order-independent content hash; used by freeze-contract tests.
    uint64_t checksum() const {
        uint64_t h = 0x811c9dc5ull;
        for (const auto& [name, e] : params_) {
            for (char c : name) h = (h ^ uint64_t(uint8_t(c))) * 0x100000001b3ull;
            for (Real v : e.value.data) {
                const double d = double(v);
                uint64_t bits;
                static_assert(sizeof(bits) == sizeof(d));
                std::memcpy(&bits, &d, sizeof(bits));
                h = (h ^ bits) * 0x100000001b3ull;
            }
        }
        return h;
    }

    int64_t total_values() const {
        int64_t n = 0;
        for (const auto& [name, e] : params_) n += e.value.size();
        return n;
    }

  private:
    std::map<std::string, Entry> params_;
    int64_t step_count_ = 0;
    int64_t skipped_steps_ = 0;
};

// Gaussian init helper for weight matrices.
template <typename Real>
Tensor<Real> randn_tensor(std::vector<int> shape, double stddev, Rng& rng) {
    Tensor<Real> t(std::move(shape));
    for (Real& v : t.data) v = Real(stddev * rng.next_normal());
    return t;
}

}  // namespace specmap::ad
