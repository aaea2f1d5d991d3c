#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "octforge/tape.hpp"

namespace octforge {

// Central finite-difference verification of reverse-mode gradients, run in
// 64-bit mode. The builder is re-invoked on a fresh tape for every function
// evaluation; leaf ids are handed back in the order of `inputs`.
//
// Returns max over checked elements of |analytic - numeric| / max(1, |analytic| + |numeric|).
//
// max_checks_per_input == 0 checks every element; a positive value checks a
// seeded random subset, which is how large composites stay inside the runtime
// budget.
struct GradCheckOptions {
    double step = 1e-5;
    int64_t max_checks_per_input = 0;
    uint64_t sample_seed = 0x9d2c5680;
};

using GradCheckBuild =
    std::function<Tape<double>::Id(Tape<double>&, const std::vector<Tape<double>::Id>&)>;

inline double grad_check(const std::vector<Tensor<double>*>& inputs, const GradCheckBuild& build,
                         GradCheckOptions opts = {}) {
    auto eval = [&](void) -> double {
        Tape<double> tape;
        std::vector<Tape<double>::Id> ids;
        ids.reserve(inputs.size());
        for (Tensor<double>* t : inputs) ids.push_back(tape.input(*t));
        Tape<double>::Id loss = build(tape, ids);
        check(tape.val(loss).numel() == 1, "grad_check: builder must return a scalar loss");
        return tape.val(loss)[0];
    };

    // Analytic gradients.
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Tape<double>::Id> ids;
        for (Tensor<double>* t : inputs) ids.push_back(tape.leaf(*t));
        Tape<double>::Id loss = build(tape, ids);
        tape.backward(loss);
        for (auto id : ids) analytic.push_back(tape.grad(id));
    }

    const double h = opts.step;
    double max_err = 0.0;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor<double>& t = *inputs[ti];
        std::vector<int64_t> elems;
        if (opts.max_checks_per_input <= 0 || opts.max_checks_per_input >= t.numel()) {
            elems.resize(size_t(t.numel()));
            for (int64_t i = 0; i < t.numel(); ++i) elems[size_t(i)] = i;
        } else {
            Rng rng(mix_seed(opts.sample_seed, uint64_t(ti)));
            for (int64_t i = 0; i < opts.max_checks_per_input; ++i)
                elems.push_back(int64_t(rng.below(uint64_t(t.numel()))));
        }
        for (int64_t e : elems) {
            const double orig = t[e];
            t[e] = orig + h;
            const double fp = eval();
            t[e] = orig - h;
            const double fm = eval();
            t[e] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double ana = analytic[ti][e];
            const double err = std::abs(ana - numeric) /
                               std::max(1.0, std::abs(ana) + std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

// Seeded input following the gradient-check sampling rule.
inline Tensor<double> grad_check_input(std::vector<int> dims, uint64_t seed) {
    Tensor<double> t(std::move(dims));
    Rng rng(seed);
    fill_uniform_away_from_zero(t, rng);
    return t;
}

} // namespace octforge
