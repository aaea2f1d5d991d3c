#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "octforge/params.hpp"

namespace octforge {

// Adam with bias correction. Frozen parameters are skipped entirely: no value
// update, no moment update.
template <typename T>
class Adam {
public:
    Adam() = default;

    explicit Adam(const ParamStore<T>& store, T beta1 = T(0.9), T beta2 = T(0.999),
                  T eps = T(1e-8))
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : store.params())
            slots_.push_back({Tensor<T>(p.value.dims()), Tensor<T>(p.value.dims())});
    }

    void step(ParamStore<T>& store, T lr) {
        check(slots_.size() == store.params().size(), "adam: parameter set changed");
        ++step_;
        const T bc1 = T(1) - T(std::pow(double(beta1_), double(step_)));
        const T bc2 = T(1) - T(std::pow(double(beta2_), double(step_)));
        for (size_t i = 0; i < slots_.size(); ++i) {
            Parameter<T>& p = store.params()[i];
            if (!p.trainable) continue;
            if (!p.grad.all_finite())
                throw NumericError("non-finite gradient for parameter " + p.name);
            Tensor<T>& m = slots_[i].m;
            Tensor<T>& v = slots_[i].v;
            for (int64_t j = 0; j < p.value.numel(); ++j) {
                const T g = p.grad[j];
                m[j] = beta1_ * m[j] + (T(1) - beta1_) * g;
                v[j] = beta2_ * v[j] + (T(1) - beta2_) * g * g;
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                p.value[j] -= lr * mhat / (T(std::sqrt(double(vhat))) + eps_);
            }
        }
    }

    int64_t steps() const { return step_; }
    void set_steps(int64_t s) { step_ = s; }

    struct Slot {
        Tensor<T> m, v;
    };
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    std::vector<Slot> slots_;
    int64_t step_ = 0;
    T beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8);
};

// Validation-accuracy plateau schedule: drop the learning rate 10x after
// `patience` consecutive epochs without a `threshold` (percentage points)
// improvement over the best seen; stop once the dropped rate would fall below
// the floor. The first observed epoch seeds the reference and counts as the
// first stale epoch.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, double threshold_pp = 0.1, int patience = 5,
                     double floor = 1e-7)
        : lr0_(lr0), threshold_(threshold_pp), patience_(patience), floor_(floor) {}

    struct Update {
        double lr;
        bool dropped;
        bool stop;
    };

    Update observe(double val_acc_percent) {
        if (!has_best_) {
            has_best_ = true;
            best_ = val_acc_percent;
            stale_ = 1;
        } else if (val_acc_percent >= best_ + threshold_) {
            best_ = val_acc_percent;
            stale_ = 0;
        } else {
            ++stale_;
        }
        bool dropped = false;
        if (!stopped_ && stale_ >= patience_) {
            ++drops_;
            stale_ = 0;
            dropped = true;
            if (lr() < floor_ * (1.0 - 1e-9)) stopped_ = true;
        }
        return {lr(), dropped, stopped_};
    }

    double lr() const { return lr0_ * std::pow(10.0, -double(drops_)); }
    bool stopped() const { return stopped_; }

    // checkpoint plumbing
    double best() const { return best_; }
    bool has_best() const { return has_best_; }
    int stale() const { return stale_; }
    int drops() const { return drops_; }
    void restore(bool has_best, double best, int stale, int drops, bool stopped) {
        has_best_ = has_best;
        best_ = best;
        stale_ = stale;
        drops_ = drops;
        stopped_ = stopped;
    }

private:
    double lr0_;
    double threshold_;
    int patience_;
    double floor_;
    bool has_best_ = false;
    double best_ = 0.0;
    int stale_ = 0;
    int drops_ = 0;
    bool stopped_ = false;
};

} // namespace octforge
