#pragma once

#include <vector>

#include "octforge/kernels.hpp"
#include "octforge/tensor.hpp"

namespace octforge {

// One manipulation-technique domain's worth of samples in a training step.
template <typename T>
struct DomainBatch {
    int domain_id = 0;
    Tensor<T> features; // [n_d, D] penultimate features
    std::vector<int> labels;
};

// Mean-embedding MMD across domains: 1/(K(K-1)) * sum over ordered pairs of
// squared distances between per-domain feature means.
template <typename T>
T mmd_distance(const std::vector<DomainBatch<T>>& batches) {
    const int k = int(batches.size());
    check(k >= 2, "mmd_distance: need at least 2 domains, got " + std::to_string(k));
    int total_rows = 0;
    const int d = batches[0].features.dim(1);
    for (const auto& b : batches) {
        check(b.features.rank() == 2, "mmd_distance: features must be [n_d, D]");
        check(b.features.dim(1) == d, "mmd_distance: feature dims differ across domains");
        check(b.features.dim(0) >= 1, "mmd_distance: empty domain batch");
        total_rows += b.features.dim(0);
    }
    Tensor<T> all({total_rows, d});
    std::vector<kernels::DomainRange> ranges;
    int row = 0;
    for (const auto& b : batches) {
        const int n = b.features.dim(0);
        std::copy(b.features.data(), b.features.data() + int64_t(n) * d,
                  all.data() + int64_t(row) * d);
        ranges.push_back({row, n});
        row += n;
    }
    return kernels::mmd_forward(all, ranges);
}

template <typename T>
struct LossBreakdown {
    T ce = T(0);
    T cda = T(0);
    T lambda = T(0);
    T total = T(0);
};

template <typename T>
LossBreakdown<T> total_loss(T ce, T cda, T lambda) {
    check(lambda >= T(0), "total_loss: lambda must be non-negative");
    check(cda >= T(0), "total_loss: alignment distance must be non-negative");
    LossBreakdown<T> out;
    out.ce = ce;
    out.cda = cda;
    out.lambda = lambda;
    out.total = ce + lambda * cda;
    return out;
}

} // namespace octforge
