#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "sept/common.hpp"

namespace sept {

// Reverse-mode autodiff over dense row-major tensors. Scalar type is a
// template parameter: float is the training dtype, double is the
// verification dtype used by finite-difference and summation oracles.

inline thread_local bool g_grad_enabled = true;

/// Disables graph recording for the current thread while alive (scoring,
/// reference-distribution and evaluation passes).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class TensorT {
public:
    struct Node {
        std::vector<int64_t> shape;
        std::vector<T> data;
        std::vector<T> grad;  // sized lazily; empty means all-zero
        bool requires_grad = false;
        bool backward_done = false;
        std::vector<std::shared_ptr<Node>> inputs;
        std::function<void(Node&)> backprop;  // accumulates into inputs' grads

        int64_t numel() const { return static_cast<int64_t>(data.size()); }
        void ensure_grad() {
            if (grad.empty()) grad.assign(data.size(), T(0));
        }
    };

    TensorT() = default;

    explicit TensorT(std::vector<int64_t> shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        int64_t n = shape_numel(shape);
        node_->shape = std::move(shape);
        node_->data.assign(static_cast<size_t>(n), fill);
        node_->requires_grad = requires_grad;
    }

    TensorT(std::vector<int64_t> shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
            throw DimensionError("tensor: data length " + std::to_string(data.size()) +
                                 " does not match shape numel " + std::to_string(shape_numel(shape)));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static TensorT scalar(T v) { return TensorT({1}, std::vector<T>{v}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int64_t>& shape() const { return node_->shape; }
    int64_t dim(size_t i) const { return node_->shape.at(i); }
    int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }

    /// Gradient accumulator; allocates zeros on first access.
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        node_->ensure_grad();
        std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw DimensionError("item: tensor is not scalar");
        return node_->data[0];
    }

    T at(std::initializer_list<int64_t> idx) const {
        return node_->data[static_cast<size_t>(flat_index(idx))];
    }
    T& at_mut(std::initializer_list<int64_t> idx) {
        return node_->data[static_cast<size_t>(flat_index(idx))];
    }

    bool all_finite() const {
        for (T v : node_->data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    std::shared_ptr<Node> node() const { return node_; }

    static int64_t shape_numel(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }

private:
    int64_t flat_index(std::initializer_list<int64_t> idx) const {
        if (static_cast<int64_t>(idx.size()) != rank()) {
            throw DimensionError("index rank mismatch");
        }
        int64_t flat = 0;
        size_t i = 0;
        for (int64_t v : idx) {
            flat = flat * node_->shape[i] + v;
            ++i;
        }
        return flat;
    }

    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const TensorT<T>*> inputs) {
    if (!g_grad_enabled) return false;
    for (const auto* t : inputs) {
        if ((*t).requires_grad()) return true;
    }
    return false;
}

template <typename T>
TensorT<T> make_result(std::vector<int64_t> shape, std::vector<T> data, bool record,
                       std::vector<std::shared_ptr<typename TensorT<T>::Node>> inputs,
                       std::function<void(typename TensorT<T>::Node&)> backprop) {
    TensorT<T> out(std::move(shape), std::move(data));
    if (record) {
        out.node()->requires_grad = true;
        out.node()->inputs = std::move(inputs);
        out.node()->backprop = std::move(backprop);
    }
    return out;
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check(a.shape() == b.shape(), "add: shape mismatch");
    std::vector<T> out(a.data().size());
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    bool rec = detail::should_record<T>({&a, &b});
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(
        a.shape(), std::move(out), rec, {an, bn}, [an, bn](typename TensorT<T>::Node& self) {
            const T* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += g[i];
            }
        });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check(a.shape() == b.shape(), "mul: shape mismatch");
    std::vector<T> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    bool rec = detail::should_record<T>({&a, &b});
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(
        a.shape(), std::move(out), rec, {an, bn}, [an, bn](typename TensorT<T>::Node& self) {
            const T* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += g[i] * an->data[i];
            }
        });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, double c) {
    std::vector<T> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(x.data()[i] * c);
    bool rec = detail::should_record<T>({&x});
    auto xn = x.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), rec, {xn}, [xn, c](typename TensorT<T>::Node& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) {
                xn->grad[i] += static_cast<T>(self.grad[i] * c);
            }
        });
}

/// x: [..., d] plus a length-d bias broadcast over leading dims.
template <typename T>
TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& bias) {
    detail::check(bias.rank() == 1, "add_bias: bias must be rank 1");
    int64_t d = bias.dim(0);
    detail::check(x.rank() >= 1 && x.shape().back() == d, "add_bias: trailing dim mismatch");
    int64_t rows = x.numel() / d;
    std::vector<T> out(x.data().size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = x.data().data() + r * d;
        T* po = out.data() + r * d;
        const T* pb = bias.data().data();
        for (int64_t j = 0; j < d; ++j) po[j] = px[j] + pb[j];
    }
    bool rec = detail::should_record<T>({&x, &bias});
    auto xn = x.node(), bn = bias.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), rec, {xn, bn},
        [xn, bn, rows, d](typename TensorT<T>::Node& self) {
            const T* g = self.grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const T* gr = g + r * d;
                    for (int64_t j = 0; j < d; ++j) bn->grad[static_cast<size_t>(j)] += gr[j];
                }
            }
        });
}

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
    std::vector<T> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        double v = static_cast<double>(x.data()[i]);
        out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    }
    bool rec = detail::should_record<T>({&x});
    auto xn = x.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), rec, {xn}, [xn](typename TensorT<T>::Node& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) {
                double v = static_cast<double>(xn->data[i]);
                double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                xn->grad[i] += static_cast<T>(static_cast<double>(self.grad[i]) * (cdf + v * pdf));
            }
        });
}

// ---------------------------------------------------------------------------
// matmul family

namespace detail {

template <typename T>
void mm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    // C[m,n] += A[m,k] * B[k,n], ikj order
    for (int64_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            T av = ai[p];
            if (av == T(0)) continue;
            const T* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

template <typename T>
void mm_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    // C[m,n] += A[m,k] * B[n,k]^T, dot products over contiguous k
    for (int64_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T acc = T(0);
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    // C[k,n] += A[m,k]^T * B[m,n]
    for (int64_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            T av = ai[p];
            if (av == T(0)) continue;
            T* cp = c + p * n;
            for (int64_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace detail

/// Matrix product. Accepts [r,k]x[k,c] or batched [B,r,k]x[B,k,c].
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check(a.rank() == b.rank() && (a.rank() == 2 || a.rank() == 3),
                  "matmul: expects two rank-2 or two rank-3 tensors");
    int64_t batch = 1;
    if (a.rank() == 3) {
        detail::check(a.dim(0) == b.dim(0), "matmul: batch dims differ");
        batch = a.dim(0);
    }
    int64_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    int64_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    detail::check(k == k2, "matmul: inner dims " + std::to_string(k) + " vs " + std::to_string(k2));

    std::vector<T> out(static_cast<size_t>(batch * m * n), T(0));
    for (int64_t s = 0; s < batch; ++s) {
        detail::mm_acc(a.data().data() + s * m * k, b.data().data() + s * k * n,
                       out.data() + s * m * n, m, k, n);
    }
    std::vector<int64_t> shape = a.rank() == 3 ? std::vector<int64_t>{batch, m, n}
                                               : std::vector<int64_t>{m, n};
    bool rec = detail::should_record<T>({&a, &b});
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(
        std::move(shape), std::move(out), rec, {an, bn},
        [an, bn, batch, m, k, n](typename TensorT<T>::Node& self) {
            // dA = dC * B^T ; dB = A^T * dC
            for (int64_t s = 0; s < batch; ++s) {
                const T* gc = self.grad.data() + s * m * n;
                if (an->requires_grad) {
                    an->ensure_grad();
                    detail::mm_nt_acc(gc, bn->data.data() + s * k * n,
                                      an->grad.data() + s * m * k, m, n, k);
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    detail::mm_tn_acc(an->data.data() + s * m * k, gc,
                                      bn->grad.data() + s * k * n, m, k, n);
                }
            }
        });
}

/// C = A * B^T with B stored row-major [n,k]; same batching rules as matmul.
template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check(a.rank() == b.rank() && (a.rank() == 2 || a.rank() == 3),
                  "matmul_nt: expects two rank-2 or two rank-3 tensors");
    int64_t batch = 1;
    if (a.rank() == 3) {
        detail::check(a.dim(0) == b.dim(0), "matmul_nt: batch dims differ");
        batch = a.dim(0);
    }
    int64_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    int64_t n = b.dim(b.rank() - 2), k2 = b.dim(b.rank() - 1);
    detail::check(k == k2, "matmul_nt: inner dims " + std::to_string(k) + " vs " + std::to_string(k2));

    std::vector<T> out(static_cast<size_t>(batch * m * n), T(0));
    for (int64_t s = 0; s < batch; ++s) {
        detail::mm_nt_acc(a.data().data() + s * m * k, b.data().data() + s * n * k,
                          out.data() + s * m * n, m, k, n);
    }
    std::vector<int64_t> shape = a.rank() == 3 ? std::vector<int64_t>{batch, m, n}
                                               : std::vector<int64_t>{m, n};
    bool rec = detail::should_record<T>({&a, &b});
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(
        std::move(shape), std::move(out), rec, {an, bn},
        [an, bn, batch, m, k, n](typename TensorT<T>::Node& self) {
            // dA = dC * B ; dB = dC^T * A
            for (int64_t s = 0; s < batch; ++s) {
                const T* gc = self.grad.data() + s * m * n;
                if (an->requires_grad) {
                    an->ensure_grad();
                    detail::mm_acc(gc, bn->data.data() + s * n * k,
                                   an->grad.data() + s * m * k, m, n, k);
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    detail::mm_tn_acc(gc, an->data.data() + s * m * k,
                                      bn->grad.data() + s * n * k, m, n, k);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<int64_t> new_shape) {
    detail::check(TensorT<T>::shape_numel(new_shape) == x.numel(), "reshape: numel mismatch");
    std::vector<T> out = x.data();
    bool rec = detail::should_record<T>({&x});
    auto xn = x.node();
    return detail::make_result<T>(
        std::move(new_shape), std::move(out), rec, {xn}, [xn](typename TensorT<T>::Node& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += self.grad[i];
        });
}

namespace detail {

inline std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (int64_t i = static_cast<int64_t>(shape.size()) - 2; i >= 0; --i) {
        st[static_cast<size_t>(i)] = st[static_cast<size_t>(i + 1)] * shape[static_cast<size_t>(i + 1)];
    }
    return st;
}

template <typename T>
void permute_copy(const T* src, T* dst, const std::vector<int64_t>& in_shape,
                  const std::vector<int64_t>& perm, bool accumulate_back) {
    // dst[out_index] = src[in_index] where out dims are in_shape permuted.
    size_t rank = in_shape.size();
    std::vector<int64_t> out_shape(rank);
    for (size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[static_cast<size_t>(perm[i])];
    auto in_strides = strides_of(in_shape);
    std::vector<int64_t> gather_strides(rank);
    for (size_t i = 0; i < rank; ++i) gather_strides[i] = in_strides[static_cast<size_t>(perm[i])];
    int64_t total = 1;
    for (int64_t d : in_shape) total *= d;
    std::vector<int64_t> idx(rank, 0);
    int64_t src_off = 0;
    for (int64_t flat = 0; flat < total; ++flat) {
        if (accumulate_back) {
            dst[src_off] += src[flat];
        } else {
            dst[flat] = src[src_off];
        }
        for (int64_t dpos = static_cast<int64_t>(rank) - 1; dpos >= 0; --dpos) {
            size_t d = static_cast<size_t>(dpos);
            idx[d]++;
            src_off += gather_strides[d];
            if (idx[d] < out_shape[d]) break;
            src_off -= gather_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

}  // namespace detail

/// Generic axis permutation (materialized copy).
template <typename T>
TensorT<T> transpose(const TensorT<T>& x, std::vector<int64_t> perm) {
    detail::check(static_cast<int64_t>(perm.size()) == x.rank(), "transpose: perm rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    for (int64_t p : perm) {
        detail::check(p >= 0 && p < x.rank() && !seen[static_cast<size_t>(p)],
                      "transpose: perm is not a permutation");
        seen[static_cast<size_t>(p)] = true;
    }
    std::vector<int64_t> out_shape(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.dim(static_cast<size_t>(perm[i]));
    std::vector<T> out(x.data().size());
    detail::permute_copy(x.data().data(), out.data(), x.shape(), perm, false);
    bool rec = detail::should_record<T>({&x});
    auto xn = x.node();
    auto in_shape = x.shape();
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), rec, {xn},
        [xn, in_shape, perm](typename TensorT<T>::Node& self) {
            xn->ensure_grad();
            detail::permute_copy(self.grad.data(), xn->grad.data(), in_shape, perm, true);
        });
}

/// Convenience for 2-D transpose.
template <typename T>
TensorT<T> transpose2d(const TensorT<T>& x) {
    return transpose(x, {1, 0});
}

// ---------------------------------------------------------------------------
// normalization and activation rows

/// Row softmax along the last dim, max-shifted, exp-sum accumulated in double.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    if (!x.all_finite()) throw NumericError("softmax_rows: non-finite input");
    int64_t cols = x.shape().back();
    int64_t rows = x.numel() / cols;
    std::vector<T> out(x.data().size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = x.data().data() + r * cols;
        T* po = out.data() + r * cols;
        T mx = px[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, px[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            double e = std::exp(static_cast<double>(px[j]) - static_cast<double>(mx));
            po[j] = static_cast<T>(e);
            sum += e;
        }
        double inv = 1.0 / sum;
        for (int64_t j = 0; j < cols; ++j) po[j] = static_cast<T>(static_cast<double>(po[j]) * inv);
    }
    bool rec = detail::should_record<T>({&x});
    auto xn = x.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), rec, {xn}, [xn, rows, cols](typename TensorT<T>::Node& self) {
            xn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const T* y = self.data.data() + r * cols;
                const T* gy = self.grad.data() + r * cols;
                T* gx = xn->grad.data() + r * cols;
                double dot = 0.0;
                for (int64_t j = 0; j < cols; ++j) {
                    dot += static_cast<double>(gy[j]) * static_cast<double>(y[j]);
                }
                for (int64_t j = 0; j < cols; ++j) {
                    gx[j] += static_cast<T>(static_cast<double>(y[j]) *
                                            (static_cast<double>(gy[j]) - dot));
                }
            }
        });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row zero-mean/unit-variance over the last dim, then affine.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias) {
    int64_t d = x.shape().back();
    detail::check(gain.rank() == 1 && gain.dim(0) == d, "layer_norm: gain dim mismatch");
    detail::check(bias.rank() == 1 && bias.dim(0) == d, "layer_norm: bias dim mismatch");
    int64_t rows = x.numel() / d;
    std::vector<T> out(x.data().size());
    std::vector<double> inv_std(static_cast<size_t>(rows));
    std::vector<double> means(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = x.data().data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += static_cast<double>(px[j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            double c = static_cast<double>(px[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + kLayerNormEps);
        means[static_cast<size_t>(r)] = mean;
        inv_std[static_cast<size_t>(r)] = is;
        T* po = out.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
            double xhat = (static_cast<double>(px[j]) - mean) * is;
            po[j] = static_cast<T>(xhat * static_cast<double>(gain.data()[static_cast<size_t>(j)]) +
                                   static_cast<double>(bias.data()[static_cast<size_t>(j)]));
        }
    }
    bool rec = detail::should_record<T>({&x, &gain, &bias});
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), rec, {xn, gn, bn},
        [xn, gn, bn, rows, d, means, inv_std](typename TensorT<T>::Node& self) {
            for (int64_t r = 0; r < rows; ++r) {
                const T* px = xn->data.data() + r * d;
                const T* gy = self.grad.data() + r * d;
                double mean = means[static_cast<size_t>(r)];
                double is = inv_std[static_cast<size_t>(r)];
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    double xhat = (static_cast<double>(px[j]) - mean) * is;
                    double dxhat = static_cast<double>(gy[j]) *
                                   static_cast<double>(gn->data[static_cast<size_t>(j)]);
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (gn->requires_grad) {
                        gn->ensure_grad();
                        gn->grad[static_cast<size_t>(j)] +=
                            static_cast<T>(static_cast<double>(gy[j]) * xhat);
                    }
                    if (bn->requires_grad) {
                        bn->ensure_grad();
                        bn->grad[static_cast<size_t>(j)] += gy[j];
                    }
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    T* gx = xn->grad.data() + r * d;
                    double inv_d = 1.0 / static_cast<double>(d);
                    for (int64_t j = 0; j < d; ++j) {
                        double xhat = (static_cast<double>(px[j]) - mean) * is;
                        double dxhat = static_cast<double>(gy[j]) *
                                       static_cast<double>(gn->data[static_cast<size_t>(j)]);
                        gx[j] += static_cast<T>(
                            is * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat));
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// gathers and dropout

/// Row lookup E[ids] -> [N, d]; backward scatter-adds into the table.
template <typename T>
TensorT<T> embedding_gather(const TensorT<T>& table, const std::vector<int32_t>& ids) {
    detail::check(table.rank() == 2, "embedding_gather: table must be rank 2");
    int64_t v = table.dim(0), d = table.dim(1);
    for (int32_t id : ids) {
        if (id < 0 || id >= v) {
            throw UsageError("embedding_gather: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
        }
    }
    int64_t n = static_cast<int64_t>(ids.size());
    std::vector<T> out(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n; ++i) {
        const T* src = table.data().data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
        std::copy(src, src + d, out.data() + i * d);
    }
    bool rec = detail::should_record<T>({&table});
    auto tn = table.node();
    return detail::make_result<T>(
        {n, d}, std::move(out), rec, {tn}, [tn, ids, d](typename TensorT<T>::Node& self) {
            tn->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i) {
                T* dst = tn->grad.data() + static_cast<int64_t>(ids[i]) * d;
                const T* g = self.grad.data() + static_cast<int64_t>(i) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
            }
        });
}

/// Select rows of a rank-2 tensor by index; backward scatter-adds.
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int64_t>& rows) {
    detail::check(x.rank() == 2, "gather_rows: input must be rank 2");
    int64_t n = x.dim(0), d = x.dim(1);
    for (int64_t r : rows) {
        if (r < 0 || r >= n) throw UsageError("gather_rows: row " + std::to_string(r) + " out of range");
    }
    int64_t m = static_cast<int64_t>(rows.size());
    std::vector<T> out(static_cast<size_t>(m * d));
    for (int64_t i = 0; i < m; ++i) {
        const T* src = x.data().data() + rows[static_cast<size_t>(i)] * d;
        std::copy(src, src + d, out.data() + i * d);
    }
    bool rec = detail::should_record<T>({&x});
    auto xn = x.node();
    return detail::make_result<T>(
        {m, d}, std::move(out), rec, {xn}, [xn, rows, d](typename TensorT<T>::Node& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < rows.size(); ++i) {
                T* dst = xn->grad.data() + rows[i] * d;
                const T* g = self.grad.data() + static_cast<int64_t>(i) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
            }
        });
}

/// Inverted dropout; caller invokes only in train mode. rate 0 is a no-op.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout: rate must be in [0,1)");
    if (rate == 0.0) return x;
    double keep = 1.0 - rate;
    double scale_v = 1.0 / keep;
    std::vector<T> mask(x.data().size());
    std::vector<T> out(x.data().size());
    for (size_t i = 0; i < mask.size(); ++i) {
        T mv = rng.uniform() < keep ? static_cast<T>(scale_v) : T(0);
        mask[i] = mv;
        out[i] = x.data()[i] * mv;
    }
    bool rec = detail::should_record<T>({&x});
    auto xn = x.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), rec, {xn},
        [xn, mask = std::move(mask)](typename TensorT<T>::Node& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += self.grad[i] * mask[i];
        });
}

// ---------------------------------------------------------------------------
// losses

inline constexpr double kProbFloor = 1e-12;

/// -sum_v target[v] * ln(pred[v]) over two probability vectors, natural log,
/// pred floor-clamped at 1e-12.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& target, const TensorT<T>& pred) {
    detail::check(target.rank() == 1 && pred.rank() == 1, "cross_entropy: expects rank-1 vectors");
    detail::check(target.dim(0) == pred.dim(0),
                  "cross_entropy: length mismatch " + std::to_string(target.dim(0)) + " vs " +
                      std::to_string(pred.dim(0)));
    int64_t v = pred.dim(0);
    double loss = 0.0;
    for (int64_t j = 0; j < v; ++j) {
        double t = static_cast<double>(target.data()[static_cast<size_t>(j)]);
        if (t == 0.0) continue;
        double p = std::max(static_cast<double>(pred.data()[static_cast<size_t>(j)]), kProbFloor);
        loss -= t * std::log(p);
    }
    bool rec = detail::should_record<T>({&target, &pred});
    auto tn = target.node(), pn = pred.node();
    return detail::make_result<T>(
        {1}, {static_cast<T>(loss)}, rec, {tn, pn}, [tn, pn, v](typename TensorT<T>::Node& self) {
            double g = static_cast<double>(self.grad[0]);
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (int64_t j = 0; j < v; ++j) {
                    double t = static_cast<double>(tn->data[static_cast<size_t>(j)]);
                    if (t == 0.0) continue;
                    double p = static_cast<double>(pn->data[static_cast<size_t>(j)]);
                    if (p <= kProbFloor) continue;  // clamp region: flat
                    pn->grad[static_cast<size_t>(j)] += static_cast<T>(-g * t / p);
                }
            }
            if (tn->requires_grad) {
                tn->ensure_grad();
                for (int64_t j = 0; j < v; ++j) {
                    double p = std::max(static_cast<double>(pn->data[static_cast<size_t>(j)]),
                                        kProbFloor);
                    tn->grad[static_cast<size_t>(j)] += static_cast<T>(-g * std::log(p));
                }
            }
        });
}

/// Mean over rows of -sum_v targets[i,v] * ln(preds[i,v]); the batched loss
/// core shared by the one-hot and smoothed objectives.
template <typename T>
TensorT<T> cross_entropy_rows_mean(const TensorT<T>& targets, const TensorT<T>& preds) {
    detail::check(targets.rank() == 2 && preds.rank() == 2,
                  "cross_entropy_rows_mean: expects rank-2 tensors");
    detail::check(targets.shape() == preds.shape(), "cross_entropy_rows_mean: shape mismatch");
    int64_t m = preds.dim(0), v = preds.dim(1);
    detail::check(m >= 1, "cross_entropy_rows_mean: no rows");
    double total = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        const T* t = targets.data().data() + i * v;
        const T* p = preds.data().data() + i * v;
        double row = 0.0;
        for (int64_t j = 0; j < v; ++j) {
            double tv = static_cast<double>(t[j]);
            if (tv == 0.0) continue;
            row -= tv * std::log(std::max(static_cast<double>(p[j]), kProbFloor));
        }
        total += row;
    }
    total /= static_cast<double>(m);
    bool rec = detail::should_record<T>({&targets, &preds});
    auto tn = targets.node(), pn = preds.node();
    return detail::make_result<T>(
        {1}, {static_cast<T>(total)}, rec, {tn, pn},
        [tn, pn, m, v](typename TensorT<T>::Node& self) {
            double g = static_cast<double>(self.grad[0]) / static_cast<double>(m);
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (int64_t i = 0; i < m; ++i) {
                    const T* t = tn->data.data() + i * v;
                    const T* p = pn->data.data() + i * v;
                    T* gp = pn->grad.data() + i * v;
                    for (int64_t j = 0; j < v; ++j) {
                        double tv = static_cast<double>(t[j]);
                        if (tv == 0.0) continue;
                        double pv = static_cast<double>(p[j]);
                        if (pv <= kProbFloor) continue;
                        gp[j] += static_cast<T>(-g * tv / pv);
                    }
                }
            }
        });
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    double total = 0.0;
    for (T v : x.data()) total += static_cast<double>(v);
    bool rec = detail::should_record<T>({&x});
    auto xn = x.node();
    return detail::make_result<T>(
        {1}, {static_cast<T>(total)}, rec, {xn}, [xn](typename TensorT<T>::Node& self) {
            xn->ensure_grad();
            T g = self.grad[0];
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
        });
}

// ---------------------------------------------------------------------------
// backward

/// Reverse-mode sweep from a scalar root. Visits each recorded node exactly
/// once in reverse topological order; a second sweep from the same root
/// without rebuilding the graph is rejected.
template <typename T>
void backward(TensorT<T>& root) {
    using Node = typename TensorT<T>::Node;
    if (root.numel() != 1) throw UsageError("backward: root must be scalar");
    Node* rn = root.node().get();
    if (rn->backward_done) throw UsageError("backward: repeated call on the same root");

    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(rn, 0);
    visited.insert(rn);
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->inputs.size()) {
            Node* next = node->inputs[child].get();
            ++child;
            if (visited.insert(next).second) stack.emplace_back(next, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    rn->ensure_grad();
    rn->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop && !node->grad.empty()) {
            node->backprop(*node);
        }
    }
    rn->backward_done = true;
}

}  // namespace sept
