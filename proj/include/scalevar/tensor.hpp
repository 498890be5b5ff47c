#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "scalevar/errors.hpp"

namespace scalevar {

namespace detail {

inline bool& grad_mode() {
    static bool enabled = true;
    return enabled;
}

inline std::uint64_t& node_seq() {
    static std::uint64_t counter = 0;
    return counter;
}

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // sized by backward() for reachable nodes
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;

    std::size_t size() const { return rows * cols; }
};

// Hot inner loops live out of line so every caller shares a single compiled
// instance; results are then bit-identical across code paths regardless of
// inlining or FP contraction decisions at the call sites.

// c[m,n] += a[m,k] @ b[k,n]; per-element accumulation runs over k ascending.
[[gnu::noinline]] inline void gemm_nn(const double* a, const double* b, double* c,
                                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// db[k,n] += a^T @ dc, streamed over rows to keep accesses contiguous.
[[gnu::noinline]] inline void gemm_tn(const double* a, const double* dc, double* db,
                                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* crow = dc + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            double* brow = db + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                brow[j] += av * crow[j];
            }
        }
    }
}

[[gnu::noinline]] inline void vadd(const double* a, const double* b, double* o, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = a[i] + b[i];
}

[[gnu::noinline]] inline void vmul(const double* a, const double* b, double* o, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = a[i] * b[i];
}

[[gnu::noinline]] inline void vacc(double* o, const double* g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] += g[i];
}

[[gnu::noinline]] inline void vacc_mul(double* o, const double* g, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] += g[i] * b[i];
}

// Row-wise softmax with per-row max subtraction.
[[gnu::noinline]] inline void softmax_rows_core(const double* x, double* y,
                                                std::size_t m, std::size_t n) {
    for (std::size_t r = 0; r < m; ++r) {
        const double* xr = x + r * n;
        double* yr = y + r * n;
        double mx = xr[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
    }
}

// Row-wise normalization: y = (x - mean) / sqrt(var + eps) * gain + bias.
// Also emits xhat and the inverse stddev per row for the backward pass.
[[gnu::noinline]] inline void layer_norm_core(const double* x, const double* gain,
                                              const double* bias, double eps,
                                              double* y, double* xhat, double* inv_std,
                                              std::size_t t, std::size_t c) {
    for (std::size_t r = 0; r < t; ++r) {
        const double* xr = x + r * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += xr[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        double* hr = xhat + r * c;
        double* yr = y + r * c;
        for (std::size_t j = 0; j < c; ++j) {
            hr[j] = (xr[j] - mean) * inv;
            yr[j] = hr[j] * gain[j] + bias[j];
        }
    }
}

}  // namespace detail

// Disables gradient recording for the current scope (inference paths).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense 2-D tensor of 64-bit reals with reverse-mode autodiff. A Tensor is a
// cheap handle onto a graph node; the graph is formed implicitly by the
// kernels below, and node creation order is a topological order by
// construction. All kernels accumulate in a fixed sequential order, so
// results (values and gradients) are bit-reproducible.
class Tensor {
public:
    Tensor() : node_(nullptr) {}

    static Tensor zeros(std::size_t rows, std::size_t cols) {
        return make(rows, cols, std::vector<double>(rows * cols, 0.0), false);
    }

    static Tensor full(std::size_t rows, std::size_t cols, double v) {
        return make(rows, cols, std::vector<double>(rows * cols, v), false);
    }

    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values) {
        check_size(rows, cols, values.size());
        return make(rows, cols, std::move(values), false);
    }

    static Tensor scalar_of(double v) { return from(1, 1, {v}); }

    // Trainable leaf.
    static Tensor param(std::size_t rows, std::size_t cols, std::vector<double> values) {
        check_size(rows, cols, values.size());
        return make(rows, cols, std::move(values), true);
    }

    bool defined() const { return node_ != nullptr; }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_ ? node_->size() : 0; }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    const std::vector<double>& values() const { return node_->value; }

    // In-place access for optimizer updates; never use on non-leaf nodes.
    std::vector<double>& values_mut() { return node_->value; }

    double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }

    double scalar() const {
        if (size() != 1) throw std::invalid_argument("scalar(): tensor is not 1x1");
        return node_->value[0];
    }

    const std::vector<double>& grad() const {
        if (!node_ || node_->grad.size() != node_->size()) {
            throw state_error("grad(): no gradient computed for this tensor");
        }
        return node_->grad;
    }

    bool has_grad() const { return node_ && node_->grad.size() == node_->size(); }

    void clear_grad() {
        if (node_) node_->grad.clear();
    }

    // Value copy outside the graph.
    Tensor detach() const {
        return make(node_->rows, node_->cols, node_->value, false);
    }

    bool all_finite() const {
        for (double v : node_->value) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    const void* id() const { return node_.get(); }

    friend Tensor matmul(const Tensor& a, const Tensor& b);
    friend Tensor add(const Tensor& a, const Tensor& b);
    friend Tensor mul(const Tensor& a, const Tensor& b);
    friend Tensor softmax_rows(const Tensor& x);
    friend Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
    friend Tensor gather_rows(const Tensor& table, const std::vector<std::uint32_t>& ids);
    friend Tensor cross_entropy(const Tensor& logits, const std::vector<std::uint32_t>& targets);
    friend Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols);
    friend Tensor transpose(const Tensor& x);
    friend Tensor concat_rows(const Tensor& a, const Tensor& b);
    friend void backward(const Tensor& root);

private:
    static void check_size(std::size_t rows, std::size_t cols, std::size_t n) {
        if (rows == 0 || cols == 0 || rows * cols != n) {
            throw std::invalid_argument("tensor shape does not match data length");
        }
    }

    static Tensor make(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad) {
        Tensor t;
        t.node_ = std::make_shared<detail::Node>();
        t.node_->rows = rows;
        t.node_->cols = cols;
        t.node_->value = std::move(values);
        t.node_->requires_grad = requires_grad;
        t.node_->seq = detail::node_seq()++;
        return t;
    }

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool track(const Tensor& a) { return grad_mode() && a.requires_grad(); }

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                    std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + ")");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);

    Tensor c = Tensor::make(m, n, std::move(out), false);
    const bool ga = detail::track(a), gb = detail::track(b);
    if (ga || gb) {
        auto* cn = c.node_.get();
        auto* an = a.node_.get();
        auto* bn = b.node_.get();
        cn->requires_grad = true;
        cn->parents = {a.node_, b.node_};
        cn->backprop = [cn, an, bn, ga, gb, m, k, n]() {
            if (ga) {
                // da += dc @ b^T (b^T materialized once for contiguity)
                std::vector<double> bt(n * k);
                for (std::size_t kk = 0; kk < k; ++kk) {
                    for (std::size_t j = 0; j < n; ++j) bt[j * k + kk] = bn->value[kk * n + j];
                }
                detail::gemm_nn(cn->grad.data(), bt.data(), an->grad.data(), m, n, k);
            }
            if (gb) {
                detail::gemm_tn(an->value.data(), cn->grad.data(), bn->grad.data(), m, k, n);
            }
        };
    }
    return c;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument("add: shape mismatch");
    }
    std::vector<double> out(a.size());
    detail::vadd(a.values().data(), b.values().data(), out.data(), a.size());
    Tensor c = Tensor::make(a.rows(), a.cols(), std::move(out), false);
    const bool ga = detail::track(a), gb = detail::track(b);
    if (ga || gb) {
        auto* cn = c.node_.get();
        auto* an = a.node_.get();
        auto* bn = b.node_.get();
        cn->requires_grad = true;
        cn->parents = {a.node_, b.node_};
        cn->backprop = [cn, an, bn, ga, gb]() {
            if (ga) detail::vacc(an->grad.data(), cn->grad.data(), cn->size());
            if (gb) detail::vacc(bn->grad.data(), cn->grad.data(), cn->size());
        };
    }
    return c;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument("mul: shape mismatch");
    }
    std::vector<double> out(a.size());
    detail::vmul(a.values().data(), b.values().data(), out.data(), a.size());
    Tensor c = Tensor::make(a.rows(), a.cols(), std::move(out), false);
    const bool ga = detail::track(a), gb = detail::track(b);
    if (ga || gb) {
        auto* cn = c.node_.get();
        auto* an = a.node_.get();
        auto* bn = b.node_.get();
        cn->requires_grad = true;
        cn->parents = {a.node_, b.node_};
        cn->backprop = [cn, an, bn, ga, gb]() {
            if (ga) detail::vacc_mul(an->grad.data(), cn->grad.data(), bn->value.data(), cn->size());
            if (gb) detail::vacc_mul(bn->grad.data(), cn->grad.data(), an->value.data(), cn->size());
        };
    }
    return c;
}

inline Tensor softmax_rows(const Tensor& x) {
    for (double v : x.values()) {
        if (!std::isfinite(v)) throw numeric_error("softmax_rows: non-finite input");
    }
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    detail::softmax_rows_core(x.values().data(), out.data(), m, n);
    Tensor y = Tensor::make(m, n, std::move(out), false);
    if (detail::track(x)) {
        auto* yn = y.node_.get();
        auto* xn = x.node_.get();
        yn->requires_grad = true;
        yn->parents = {x.node_};
        yn->backprop = [yn, xn, m, n]() {
            for (std::size_t r = 0; r < m; ++r) {
                const double* s = yn->value.data() + r * n;
                const double* g = yn->grad.data() + r * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * s[j];
                double* dx = xn->grad.data() + r * n;
                for (std::size_t j = 0; j < n; ++j) dx[j] += s[j] * (g[j] - dot);
            }
        };
    }
    return y;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t t = x.rows(), c = x.cols();
    if (c < 2) throw std::invalid_argument("layer_norm: needs at least 2 channels");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    if (gain.size() != c || bias.size() != c) {
        throw std::invalid_argument("layer_norm: gain/bias must have one entry per channel");
    }
    std::vector<double> out(t * c);
    auto xhat = std::make_shared<std::vector<double>>(t * c);
    auto inv_std = std::make_shared<std::vector<double>>(t);
    detail::layer_norm_core(x.values().data(), gain.values().data(), bias.values().data(), eps,
                            out.data(), xhat->data(), inv_std->data(), t, c);
    Tensor y = Tensor::make(t, c, std::move(out), false);
    const bool gx = detail::track(x), gg = detail::track(gain), gb = detail::track(bias);
    if (gx || gg || gb) {
        auto* yn = y.node_.get();
        auto* xn = x.node_.get();
        auto* gn = gain.node_.get();
        auto* bn = bias.node_.get();
        yn->requires_grad = true;
        yn->parents = {x.node_, gain.node_, bias.node_};
        yn->backprop = [yn, xn, gn, bn, gx, gg, gb, xhat, inv_std, t, c]() {
            const double* h = xhat->data();
            for (std::size_t r = 0; r < t; ++r) {
                const double* g = yn->grad.data() + r * c;
                const double* hr = h + r * c;
                if (gg) {
                    for (std::size_t j = 0; j < c; ++j) gn->grad[j] += g[j] * hr[j];
                }
                if (gb) {
                    for (std::size_t j = 0; j < c; ++j) bn->grad[j] += g[j];
                }
                if (gx) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double gg_j = g[j] * gn->value[j];
                        s1 += gg_j;
                        s2 += gg_j * hr[j];
                    }
                    const double inv_c = 1.0 / static_cast<double>(c);
                    const double inv = (*inv_std)[r];
                    double* dx = xn->grad.data() + r * c;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double gg_j = g[j] * gn->value[j];
                        dx[j] += inv * (gg_j - s1 * inv_c - hr[j] * s2 * inv_c);
                    }
                }
            }
        };
    }
    return y;
}

// Rows of `table` selected by index; duplicates allowed. Gradient scatters
// back with row-ascending accumulation.
inline Tensor gather_rows(const Tensor& table, const std::vector<std::uint32_t>& ids) {
    const std::size_t rows = table.rows(), w = table.cols();
    for (std::uint32_t id : ids) {
        if (id >= rows) throw std::out_of_range("gather_rows: index " + std::to_string(id) +
                                                " out of range [0, " + std::to_string(rows) + ")");
    }
    if (ids.empty()) throw std::invalid_argument("gather_rows: empty index list");
    std::vector<double> out(ids.size() * w);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const double* src = table.values().data() + static_cast<std::size_t>(ids[r]) * w;
        std::copy(src, src + w, out.data() + r * w);
    }
    Tensor y = Tensor::make(ids.size(), w, std::move(out), false);
    if (detail::track(table)) {
        auto* yn = y.node_.get();
        auto* tn = table.node_.get();
        auto ids_copy = std::make_shared<std::vector<std::uint32_t>>(ids);
        yn->requires_grad = true;
        yn->parents = {table.node_};
        yn->backprop = [yn, tn, ids_copy, w]() {
            for (std::size_t r = 0; r < ids_copy->size(); ++r) {
                double* dst = tn->grad.data() + static_cast<std::size_t>((*ids_copy)[r]) * w;
                const double* g = yn->grad.data() + r * w;
                for (std::size_t j = 0; j < w; ++j) dst[j] += g[j];
            }
        };
    }
    return y;
}

// Mean over rows of -log softmax(logits)[target].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::uint32_t>& targets) {
    const std::size_t t = logits.rows(), v = logits.cols();
    if (targets.size() != t) {
        throw std::invalid_argument("cross_entropy: one target per logits row required");
    }
    for (std::uint32_t tgt : targets) {
        if (tgt >= v) throw std::out_of_range("cross_entropy: target " + std::to_string(tgt) +
                                              " out of range [0, " + std::to_string(v) + ")");
    }
    auto probs = std::make_shared<std::vector<double>>(t * v);
    double loss_sum = 0.0;
    for (std::size_t r = 0; r < t; ++r) {
        const double* x = logits.values().data() + r * v;
        double mx = x[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        double* p = probs->data() + r * v;
        for (std::size_t j = 0; j < v; ++j) {
            p[j] = std::exp(x[j] - mx);
            sum += p[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < v; ++j) p[j] *= inv;
        loss_sum += mx + std::log(sum) - x[targets[r]];
    }
    Tensor y = Tensor::make(1, 1, {loss_sum / static_cast<double>(t)}, false);
    if (detail::track(logits)) {
        auto* yn = y.node_.get();
        auto* xn = logits.node_.get();
        auto tgt_copy = std::make_shared<std::vector<std::uint32_t>>(targets);
        yn->requires_grad = true;
        yn->parents = {logits.node_};
        yn->backprop = [yn, xn, probs, tgt_copy, t, v]() {
            const double g0 = yn->grad[0] / static_cast<double>(t);
            for (std::size_t r = 0; r < t; ++r) {
                const double* p = probs->data() + r * v;
                double* dx = xn->grad.data() + r * v;
                for (std::size_t j = 0; j < v; ++j) dx[j] += g0 * p[j];
                dx[(*tgt_copy)[r]] -= g0;
            }
        };
    }
    return y;
}

inline Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols) {
    if (rows * cols != x.size()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor y = Tensor::make(rows, cols, x.values(), false);
    if (detail::track(x)) {
        auto* yn = y.node_.get();
        auto* xn = x.node_.get();
        yn->requires_grad = true;
        yn->parents = {x.node_};
        yn->backprop = [yn, xn]() { detail::vacc(xn->grad.data(), yn->grad.data(), yn->size()); };
    }
    return y;
}

inline Tensor transpose(const Tensor& x) {
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.values()[i * n + j];
    }
    Tensor y = Tensor::make(n, m, std::move(out), false);
    if (detail::track(x)) {
        auto* yn = y.node_.get();
        auto* xn = x.node_.get();
        yn->requires_grad = true;
        yn->parents = {x.node_};
        yn->backprop = [yn, xn, m, n]() {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += yn->grad[j * m + i];
            }
        };
    }
    return y;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: column counts differ");
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    Tensor c = Tensor::make(a.rows() + b.rows(), a.cols(), std::move(out), false);
    const bool ga = detail::track(a), gb = detail::track(b);
    if (ga || gb) {
        auto* cn = c.node_.get();
        auto* an = a.node_.get();
        auto* bn = b.node_.get();
        cn->requires_grad = true;
        cn->parents = {a.node_, b.node_};
        cn->backprop = [cn, an, bn, ga, gb]() {
            if (ga) detail::vacc(an->grad.data(), cn->grad.data(), an->size());
            if (gb) detail::vacc(bn->grad.data(), cn->grad.data() + an->size(), bn->size());
        };
    }
    return c;
}

// Convenience compositions over the kernel set above.

inline Tensor scale(const Tensor& x, double c) {
    return mul(x, Tensor::full(x.rows(), x.cols(), c));
}

// x[t,w] + row vector b[1,w], broadcast via ones[t,1] @ b.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (b.rows() != 1 || b.cols() != x.cols()) {
        throw std::invalid_argument("add_rowvec: expected [1, cols] bias");
    }
    return add(x, matmul(Tensor::full(x.rows(), 1, 1.0), b));
}

// Reverse-mode sweep from a scalar root. Reachable gradients are reset to
// zero first, then nodes run in reverse creation order (a valid reverse
// topological order, since inputs always precede outputs).
inline void backward(const Tensor& root) {
    if (root.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root.requires_grad()) {
        throw state_error("backward: root does not require grad (no graph recorded)");
    }

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root.node_.get()};
    seen.insert(stack.back());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

    for (detail::Node* n : order) n->grad.assign(n->size(), 0.0);
    root.node_->grad[0] = 1.0;
    for (detail::Node* n : order) {
        if (n->backprop) n->backprop();
    }
}

}  // namespace scalevar
