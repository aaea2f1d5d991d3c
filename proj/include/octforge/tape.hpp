#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "octforge/kernels.hpp"
#include "octforge/tensor.hpp"

namespace octforge {

// Reverse-mode autodiff over an append-only op record. Append order is the
// topological order, so backward() is a single reverse sweep that visits each
// node once. Gradients of leaves (inputs bound with requires_grad and bound
// parameters) accumulate across backward() calls and are never overwritten;
// interior gradients are pass-local scratch.
template <typename T>
class Tape {
public:
    using Id = int;

    // ------------------------------------------------------------ leaves ---

    Id input(Tensor<T> value) { return add_leaf(std::move(value), false); }

    Id leaf(Tensor<T> value) { return add_leaf(std::move(value), true); }

    // Binds external parameter storage; gradients flow straight into *grad.
    Id param(const Tensor<T>* value, Tensor<T>* grad) {
        check(grad == nullptr || grad->same_dims(*value), "param grad dims mismatch");
        Node node;
        node.ext_val = value;
        node.ext_grad = grad;
        node.is_leaf = true;
        node.requires_grad = grad != nullptr;
        require_finite(*value, "tape parameter");
        nodes_.push_back(std::move(node));
        return Id(nodes_.size()) - 1;
    }

    const Tensor<T>& val(Id id) const { return node(id).value(); }

    // Persistent gradient of a leaf.
    const Tensor<T>& grad(Id id) const {
        const Node& n = node(id);
        check(n.is_leaf && n.requires_grad, "grad(): node is not a differentiable leaf");
        if (n.ext_grad) return *n.ext_grad;
        return n.leaf_grad;
    }

    void zero_grad() {
        for (Node& n : nodes_)
            if (n.is_leaf && n.requires_grad) {
                if (n.ext_grad)
                    n.ext_grad->zero();
                else
                    n.leaf_grad.zero();
            }
    }

    size_t size() const { return nodes_.size(); }

    // --------------------------------------------------------------- ops ---

    Id conv2d(Id x, Id w, Id b, int stride, int pad) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& wv = val(w);
        auto d = kernels::conv2d_dims(xv.dims(), wv.dims(), stride, pad);
        const T* bias = nullptr;
        if (b >= 0) {
            check_shape(val(b).numel() == d.cout, "conv2d: bias dim " + val(b).shape_str() +
                                                      " != output channels " +
                                                      std::to_string(d.cout));
            bias = val(b).data();
        }
        Tensor<T> y(kernels::conv2d_out_dims(xv.dims(), d));
        kernels::conv2d_forward(xv, wv, bias, d, y);
        return add_op(std::move(y), "conv2d", {x, w, b},
                      [this, x, w, b, d](const Tensor<T>& gy) {
                          Tensor<T>* gx = grad_target(x);
                          Tensor<T>* gw = grad_target(w);
                          Tensor<T>* gb = b >= 0 ? grad_target(b) : nullptr;
                          kernels::conv2d_backward(val(x), val(w), d, gy, gx, gw, gb);
                      });
    }

    Id avg_pool2x2(Id x) {
        Tensor<T> y = kernels::avg_pool2x2_forward(val(x));
        auto s = kernels::as_nchw(val(x).dims(), "avg_pool2x2");
        return add_op(std::move(y), "avg_pool2x2", {x}, [this, x, s](const Tensor<T>& gy) {
            if (Tensor<T>* gx = grad_target(x)) kernels::avg_pool2x2_backward(s, gy, *gx);
        });
    }

    Id upsample_nearest2x(Id x) {
        Tensor<T> y = kernels::upsample_nearest2x_forward(val(x));
        auto s = kernels::as_nchw(val(x).dims(), "upsample_nearest2x");
        return add_op(std::move(y), "upsample_nearest2x", {x}, [this, x, s](const Tensor<T>& gy) {
            if (Tensor<T>* gx = grad_target(x)) kernels::upsample_nearest2x_backward(s, gy, *gx);
        });
    }

    Id relu(Id x) {
        const Tensor<T>& xv = val(x);
        Tensor<T> y(xv.dims());
        for (int64_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
        return add_op(std::move(y), "relu", {x}, [this, x](const Tensor<T>& gy) {
            if (Tensor<T>* gx = grad_target(x)) {
                const Tensor<T>& xv = val(x);
                for (int64_t i = 0; i < xv.numel(); ++i)
                    if (xv[i] > T(0)) (*gx)[i] += gy[i];
            }
        });
    }

    // Running stats live outside the tape (model buffers) and are updated in
    // training mode as a side effect of the forward pass.
    Id batchnorm(Id x, Id gamma, Id beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                 bool training, T momentum = T(0.9), T eps = T(1e-5)) {
        const Tensor<T>& xv = val(x);
        Tensor<T> y(xv.dims());
        auto saved = kernels::batchnorm_forward(xv, val(gamma), val(beta), running_mean,
                                                running_var, training, momentum, eps, y);
        return add_op(std::move(y), "batchnorm", {x, gamma, beta},
                      [this, x, gamma, beta, training, saved](const Tensor<T>& gy) {
                          kernels::batchnorm_backward(val(x), val(gamma), saved, training, gy,
                                                      grad_target(x), grad_target(gamma),
                                                      grad_target(beta));
                      });
    }

    Id linear(Id x, Id w, Id b) {
        Tensor<T> y = kernels::linear_forward(val(x), val(w), val(b));
        return add_op(std::move(y), "linear", {x, w, b}, [this, x, w, b](const Tensor<T>& gy) {
            kernels::linear_backward(val(x), val(w), gy, grad_target(x), grad_target(w),
                                     grad_target(b));
        });
    }

    Id global_avg_pool(Id x) {
        Tensor<T> y = kernels::global_avg_pool_forward(val(x));
        auto s = kernels::as_nchw(val(x).dims(), "global_avg_pool");
        return add_op(std::move(y), "global_avg_pool", {x}, [this, x, s](const Tensor<T>& gy) {
            if (Tensor<T>* gx = grad_target(x)) kernels::global_avg_pool_backward(s, gy, *gx);
        });
    }

    Id softmax_cross_entropy(Id logits, std::vector<int> labels) {
        T loss = kernels::softmax_cross_entropy_forward(val(logits), labels);
        return add_op(Tensor<T>::scalar(loss), "softmax_cross_entropy", {logits},
                      [this, logits, labels = std::move(labels)](const Tensor<T>& gy) {
                          if (Tensor<T>* gl = grad_target(logits))
                              kernels::softmax_cross_entropy_backward(val(logits), labels, gy[0],
                                                                      *gl);
                      });
    }

    // weights_out, when given, receives the per-row (w1, w2) softmax weights.
    Id attention_fuse(Id v1, Id v2, Id q, Tensor<T>* weights_out = nullptr) {
        const Tensor<T>& a = val(v1);
        const int n = a.dim(0), d = a.dim(1);
        Tensor<T> fused({n, 2 * d});
        auto weights = std::make_shared<Tensor<T>>(std::vector<int>{n, 2});
        kernels::attention_fuse_forward(a, val(v2), val(q), fused, *weights);
        if (weights_out) *weights_out = *weights;
        return add_op(std::move(fused), "attention_fuse", {v1, v2, q},
                      [this, v1, v2, q, weights](const Tensor<T>& gy) {
                          kernels::attention_fuse_backward(val(v1), val(v2), val(q), *weights, gy,
                                                           grad_target(v1), grad_target(v2),
                                                           grad_target(q));
                      });
    }

    Id mmd(Id feats, std::vector<kernels::DomainRange> ranges) {
        std::vector<T> means;
        T value = kernels::mmd_forward(val(feats), ranges, &means);
        const int d = val(feats).dim(1);
        return add_op(Tensor<T>::scalar(value), "mmd", {feats},
                      [this, feats, ranges = std::move(ranges), means = std::move(means),
                       d](const Tensor<T>& gy) {
                          if (Tensor<T>* gf = grad_target(feats))
                              kernels::mmd_backward(ranges, means, d, gy[0], *gf);
                      });
    }

    Id add(Id a, Id b) {
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        check_shape(av.same_dims(bv),
                    "add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
        Tensor<T> y(av.dims());
        for (int64_t i = 0; i < av.numel(); ++i) y[i] = av[i] + bv[i];
        return add_op(std::move(y), "add", {a, b}, [this, a, b](const Tensor<T>& gy) {
            if (Tensor<T>* ga = grad_target(a))
                for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i];
            if (Tensor<T>* gb = grad_target(b))
                for (int64_t i = 0; i < gy.numel(); ++i) (*gb)[i] += gy[i];
        });
    }

    Id mul(Id a, Id b) {
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        check_shape(av.same_dims(bv),
                    "mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
        Tensor<T> y(av.dims());
        for (int64_t i = 0; i < av.numel(); ++i) y[i] = av[i] * bv[i];
        return add_op(std::move(y), "mul", {a, b}, [this, a, b](const Tensor<T>& gy) {
            const Tensor<T>& av = val(a);
            const Tensor<T>& bv = val(b);
            if (Tensor<T>* ga = grad_target(a))
                for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * bv[i];
            if (Tensor<T>* gb = grad_target(b))
                for (int64_t i = 0; i < gy.numel(); ++i) (*gb)[i] += gy[i] * av[i];
        });
    }

    Id scale(Id a, T c) {
        const Tensor<T>& av = val(a);
        Tensor<T> y(av.dims());
        for (int64_t i = 0; i < av.numel(); ++i) y[i] = av[i] * c;
        return add_op(std::move(y), "scale", {a}, [this, a, c](const Tensor<T>& gy) {
            if (Tensor<T>* ga = grad_target(a))
                for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * c;
        });
    }

    // a + c*b, the loss combiner
    Id add_scaled(Id a, Id b, T c) {
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        check_shape(av.same_dims(bv),
                    "add_scaled: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
        Tensor<T> y(av.dims());
        for (int64_t i = 0; i < av.numel(); ++i) y[i] = av[i] + c * bv[i];
        return add_op(std::move(y), "add_scaled", {a, b}, [this, a, b, c](const Tensor<T>& gy) {
            if (Tensor<T>* ga = grad_target(a))
                for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i];
            if (Tensor<T>* gb = grad_target(b))
                for (int64_t i = 0; i < gy.numel(); ++i) (*gb)[i] += gy[i] * c;
        });
    }

    Id sum(Id a) {
        const Tensor<T>& av = val(a);
        T s = T(0);
        for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
        return add_op(Tensor<T>::scalar(s), "sum", {a}, [this, a](const Tensor<T>& gy) {
            if (Tensor<T>* ga = grad_target(a))
                for (int64_t i = 0; i < ga->numel(); ++i) (*ga)[i] += gy[0];
        });
    }

    // ---------------------------------------------------------- backward ---

    // Each pass computes its contribution in fresh scratch buffers and adds
    // the completed contribution to the persistent leaf accumulators with one
    // rounding per element, so a repeated backward doubles gradients exactly.
    void backward(Id loss) {
        check(val(loss).numel() == 1, "backward: loss must be a scalar node, got shape " +
                                          val(loss).shape_str());
        if (!node(loss).requires_grad) return;
        pass_grads_.clear();
        pass_grads_.resize(nodes_.size());
        touch(loss)[0] += T(1);
        for (Id id = loss; id >= 0; --id) {
            Node& n = nodes_[size_t(id)];
            if (n.is_leaf || !n.requires_grad || !n.backprop) continue;
            if (!pass_grads_[size_t(id)]) continue; // no gradient flowed here
            n.backprop(*pass_grads_[size_t(id)]);
        }
        for (size_t i = 0; i < nodes_.size(); ++i) {
            Node& n = nodes_[i];
            if (!n.is_leaf || !n.requires_grad || !pass_grads_[i]) continue;
            Tensor<T>& dst = n.ext_grad ? *n.ext_grad : n.leaf_grad;
            const Tensor<T>& src = *pass_grads_[i];
            for (int64_t j = 0; j < dst.numel(); ++j) dst[j] += src[j];
        }
        pass_grads_.clear();
    }

private:
    struct Node {
        Tensor<T> owned_val;
        const Tensor<T>* ext_val = nullptr;
        Tensor<T>* ext_grad = nullptr;
        Tensor<T> leaf_grad;
        bool is_leaf = false;
        bool requires_grad = false;
        std::function<void(const Tensor<T>&)> backprop;

        const Tensor<T>& value() const { return ext_val ? *ext_val : owned_val; }
    };

    Id add_leaf(Tensor<T> value, bool requires_grad) {
        require_finite(value, "tape input");
        Node node;
        node.owned_val = std::move(value);
        node.is_leaf = true;
        node.requires_grad = requires_grad;
        if (requires_grad) node.leaf_grad = Tensor<T>(node.owned_val.dims());
        nodes_.push_back(std::move(node));
        return Id(nodes_.size()) - 1;
    }

    Id add_op(Tensor<T> value, const char* name, std::initializer_list<Id> inputs,
              std::function<void(const Tensor<T>&)> backprop) {
        require_finite(value, std::string(name) + " output");
        Node node;
        node.owned_val = std::move(value);
        for (Id in : inputs)
            if (in >= 0 && nodes_[size_t(in)].requires_grad) node.requires_grad = true;
        if (node.requires_grad) node.backprop = std::move(backprop);
        nodes_.push_back(std::move(node));
        return Id(nodes_.size()) - 1;
    }

    const Node& node(Id id) const {
        check(id >= 0 && size_t(id) < nodes_.size(), "tape: bad node id");
        return nodes_[size_t(id)];
    }

    // Pass-local gradient accumulation target for node `id`; nullptr when the
    // node does not require gradients.
    Tensor<T>* grad_target(Id id) {
        if (id < 0) return nullptr;
        Node& n = nodes_[size_t(id)];
        if (!n.requires_grad) return nullptr;
        return &touch(id);
    }

    Tensor<T>& touch(Id id) {
        auto& slot = pass_grads_[size_t(id)];
        if (!slot) slot = std::make_unique<Tensor<T>>(nodes_[size_t(id)].value().dims());
        return *slot;
    }

    std::deque<Node> nodes_;
    std::vector<std::unique_ptr<Tensor<T>>> pass_grads_;
};

} // namespace octforge
