// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with reverse-mode autodiff.
//
// Every op records an eager backward closure; backward() walks the graph
// once in reverse topological order and accumulates gradients into the
// leaves. A graph can be consumed exactly once. Gradients on leaf tensors
// persist across graphs (batch accumulation), cleared via zero_grad().
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace paragen {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on demand
    bool requires_grad = false;
    bool consumed = false;  // set on the root after backward()
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backprop;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value.assign(static_cast<size_t>(n->numel()), 0.0);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor from(std::vector<int> shape, std::vector<double> data, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        if (static_cast<int64_t>(data.size()) != n->numel())
            throw std::invalid_argument("Tensor::from: data length does not match shape");
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rows() const { return node_->rows(); }
    int cols() const { return node_->cols(); }
    int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    double item() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor is not scalar");
        return node_->value[0];
    }
    double at(int r, int c) const { return node_->value[static_cast<size_t>(r) * cols() + c]; }
    double& at(int r, int c) { return node_->value[static_cast<size_t>(r) * cols() + c]; }

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

namespace detail {

// -------- raw matmul kernels (C = or += op(A)·op(B)) --------

// C[m x n] (+)= A[m x k] · B[k x n]
inline void mm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accum) {
    for (int i = 0; i < m; ++i) {
        double* c = C + static_cast<size_t>(i) * n;
        if (!accum)
            for (int j = 0; j < n; ++j) c[j] = 0.0;
        const double* a = A + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m x n] (+)= A[m x k] · B[n x k]^T
inline void mm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accum) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        double* c = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* b = B + static_cast<size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[p] * b[p];
            if (accum)
                c[j] += s;
            else
                c[j] = s;
        }
    }
}

// C[m x n] (+)= A[k x m]^T · B[k x n]
inline void mm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accum) {
    if (!accum)
        for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) C[i] = 0.0;
    for (int p = 0; p < k; ++p) {
        const double* a = A + static_cast<size_t>(p) * m;
        const double* b = B + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = a[i];
            double* c = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

inline NodePtr make_node(std::vector<int> shape, std::vector<NodePtr> parents) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(n->numel()), 0.0);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) n->parents = std::move(parents);
    return n;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// -------- elementwise --------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    auto n = detail::make_node(a.shape(), {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] + bv[i];
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            for (auto& p : self.parents) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        };
    return Tensor(n);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    auto n = detail::make_node(a.shape(), {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] - bv[i];
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        };
    return Tensor(n);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    auto n = detail::make_node(a.shape(), {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] * bv[i];
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
            }
        };
    return Tensor(n);
}

inline Tensor scale(const Tensor& a, double c) {
    auto n = detail::make_node(a.shape(), {a.node()});
    const auto& av = a.data();
    for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] * c;
    if (n->requires_grad)
        n->backprop = [c](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * c;
        };
    return Tensor(n);
}

inline Tensor add_scalar(const Tensor& a, double c) {
    auto n = detail::make_node(a.shape(), {a.node()});
    const auto& av = a.data();
    for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] + c;
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        };
    return Tensor(n);
}

// broadcast-add a row vector v (len n) to every row of a (m x n)
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    if (a.cols() != static_cast<int>(v.numel()))
        throw std::invalid_argument("add_rowvec: width mismatch");
    auto n = detail::make_node(a.shape(), {a.node(), v.node()});
    const int R = a.rows(), C = a.cols();
    const auto& av = a.data();
    const auto& vv = v.data();
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) n->value[static_cast<size_t>(i) * C + j] = av[static_cast<size_t>(i) * C + j] + vv[j];
    if (n->requires_grad)
        n->backprop = [R, C](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pv = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pv->requires_grad) {
                pv->ensure_grad();
                for (int i = 0; i < R; ++i)
                    for (int j = 0; j < C; ++j) pv->grad[j] += self.grad[static_cast<size_t>(i) * C + j];
            }
        };
    return Tensor(n);
}

inline Tensor gelu(const Tensor& a) {
    auto n = detail::make_node(a.shape(), {a.node()});
    const auto& av = a.data();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < av.size(); ++i) {
        const double x = av[i];
        n->value[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            constexpr double inv_sqrt2 = 0.70710678118654752440;
            constexpr double inv_sqrt2pi = 0.39894228040143267794;
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const double x = p->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                p->grad[i] += self.grad[i] * (cdf + x * pdf);
            }
        };
    return Tensor(n);
}

// -------- matmul --------

// (m x k) · (k x n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims mismatch");
    const int m = a.rows(), k = a.cols(), nn = b.cols();
    auto n = detail::make_node({m, nn}, {a.node(), b.node()});
    detail::mm_nn(a.data().data(), b.data().data(), n->value.data(), m, k, nn, false);
    if (n->requires_grad)
        n->backprop = [m, k, nn](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                // dA += dC · B^T
                detail::mm_nt(self.grad.data(), pb->value.data(), pa->grad.data(), m, nn, k, true);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                // dB += A^T · dC
                detail::mm_tn(pa->value.data(), self.grad.data(), pb->grad.data(), k, m, nn, true);
            }
        };
    return Tensor(n);
}

// (m x k) · (n x k)^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dims mismatch");
    const int m = a.rows(), k = a.cols(), nn = b.rows();
    auto n = detail::make_node({m, nn}, {a.node(), b.node()});
    detail::mm_nt(a.data().data(), b.data().data(), n->value.data(), m, k, nn, false);
    if (n->requires_grad)
        n->backprop = [m, k, nn](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                // dA += dC · B
                detail::mm_nn(self.grad.data(), pb->value.data(), pa->grad.data(), m, nn, k, true);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                // dB += dC^T · A
                detail::mm_tn(self.grad.data(), pa->value.data(), pb->grad.data(), nn, m, k, true);
            }
        };
    return Tensor(n);
}

inline Tensor transpose(const Tensor& a) {
    const int R = a.rows(), C = a.cols();
    auto n = detail::make_node({C, R}, {a.node()});
    const auto& av = a.data();
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) n->value[static_cast<size_t>(j) * R + i] = av[static_cast<size_t>(i) * C + j];
    if (n->requires_grad)
        n->backprop = [R, C](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < C; ++j) p->grad[static_cast<size_t>(i) * C + j] += self.grad[static_cast<size_t>(j) * R + i];
        };
    return Tensor(n);
}

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
    auto n = detail::make_node(std::move(shape), {a.node()});
    if (n->numel() != a.numel()) throw std::invalid_argument("reshape: element count mismatch");
    n->value = a.data();
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        };
    return Tensor(n);
}

// -------- slicing / concatenation --------

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    const int R = a.rows(), C = a.cols();
    if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    const int W = c1 - c0;
    auto n = detail::make_node({R, W}, {a.node()});
    const auto& av = a.data();
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < W; ++j) n->value[static_cast<size_t>(i) * W + j] = av[static_cast<size_t>(i) * C + c0 + j];
    if (n->requires_grad)
        n->backprop = [R, C, W, c0](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < W; ++j)
                    p->grad[static_cast<size_t>(i) * C + c0 + j] += self.grad[static_cast<size_t>(i) * W + j];
        };
    return Tensor(n);
}

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
    const int R = a.rows(), C = a.cols();
    if (r0 < 0 || r1 > R || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    const int H = r1 - r0;
    auto n = detail::make_node({H, C}, {a.node()});
    const auto& av = a.data();
    std::copy(av.begin() + static_cast<size_t>(r0) * C, av.begin() + static_cast<size_t>(r1) * C, n->value.begin());
    if (n->requires_grad)
        n->backprop = [r0, C, H](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < C; ++j)
                    p->grad[static_cast<size_t>(r0 + i) * C + j] += self.grad[static_cast<size_t>(i) * C + j];
        };
    return Tensor(n);
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int R = parts[0].rows();
    int W = 0;
    std::vector<NodePtr> ps;
    std::vector<int> widths;
    for (const auto& t : parts) {
        if (t.rows() != R) throw std::invalid_argument("concat_cols: row mismatch");
        widths.push_back(t.cols());
        W += t.cols();
        ps.push_back(t.node());
    }
    auto n = detail::make_node({R, W}, ps);
    int off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& av = parts[pi].data();
        const int C = widths[pi];
        for (int i = 0; i < R; ++i)
            for (int j = 0; j < C; ++j) n->value[static_cast<size_t>(i) * W + off + j] = av[static_cast<size_t>(i) * C + j];
        off += C;
    }
    if (n->requires_grad)
        n->backprop = [R, W, widths](TensorNode& self) {
            int off = 0;
            for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                auto& p = self.parents[pi];
                const int C = widths[pi];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < R; ++i)
                        for (int j = 0; j < C; ++j)
                            p->grad[static_cast<size_t>(i) * C + j] += self.grad[static_cast<size_t>(i) * W + off + j];
                }
                off += C;
            }
        };
    return Tensor(n);
}

// gather rows of a matrix by index (embedding lookup, logit row selection)
inline Tensor gather_rows(const Tensor& m, const std::vector<int>& ids) {
    const int R = m.rows(), C = m.cols();
    for (int id : ids)
        if (id < 0 || id >= R) throw std::out_of_range("gather_rows: index out of range");
    auto n = detail::make_node({static_cast<int>(ids.size()), C}, {m.node()});
    const auto& mv = m.data();
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(mv.begin() + static_cast<size_t>(ids[i]) * C, mv.begin() + static_cast<size_t>(ids[i] + 1) * C,
                  n->value.begin() + i * C);
    if (n->requires_grad)
        n->backprop = [ids, C](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < C; ++j)
                    p->grad[static_cast<size_t>(ids[i]) * C + j] += self.grad[i * C + j];
        };
    return Tensor(n);
}

// embedding lookup where one reserved id resolves to a separate vector
// instead of its matrix row (the document-mask placeholder). The mask
// vector joins the graph only when the id actually occurs.
inline Tensor embed_tokens(const Tensor& emb, const Tensor& mask_vec, const std::vector<int>& ids, int mask_id) {
    const int V = emb.rows(), C = emb.cols();
    if (static_cast<int>(mask_vec.numel()) != C) throw std::invalid_argument("embed_tokens: mask vector width mismatch");
    bool has_mask = false;
    for (int id : ids) {
        if (id < 0 || id >= V) throw std::out_of_range("embed_tokens: token id out of range");
        has_mask = has_mask || (id == mask_id);
    }
    if (!has_mask) return gather_rows(emb, ids);
    auto n = detail::make_node({static_cast<int>(ids.size()), C}, {emb.node(), mask_vec.node()});
    const auto& ev = emb.data();
    const auto& mv = mask_vec.data();
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == mask_id)
            std::copy(mv.begin(), mv.end(), n->value.begin() + i * C);
        else
            std::copy(ev.begin() + static_cast<size_t>(ids[i]) * C, ev.begin() + static_cast<size_t>(ids[i] + 1) * C,
                      n->value.begin() + i * C);
    }
    if (n->requires_grad)
        n->backprop = [ids, C, mask_id](TensorNode& self) {
            auto& pe = self.parents[0];
            auto& pm = self.parents[1];
            for (size_t i = 0; i < ids.size(); ++i) {
                if (ids[i] == mask_id) {
                    if (!pm->requires_grad) continue;
                    pm->ensure_grad();
                    for (int j = 0; j < C; ++j) pm->grad[j] += self.grad[i * C + j];
                } else {
                    if (!pe->requires_grad) continue;
                    pe->ensure_grad();
                    for (int j = 0; j < C; ++j) pe->grad[static_cast<size_t>(ids[i]) * C + j] += self.grad[i * C + j];
                }
            }
        };
    return Tensor(n);
}

// -------- normalization / softmax --------

inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    const int R = x.rows(), C = x.cols();
    if (static_cast<int>(gain.numel()) != C || static_cast<int>(bias.numel()) != C)
        throw std::invalid_argument("layer_norm_rows: affine width mismatch");
    auto n = detail::make_node(x.shape(), {x.node(), gain.node(), bias.node()});
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    // cache per-row mean and inverse stddev plus normalized values for backward
    auto cache = std::make_shared<std::vector<double>>(static_cast<size_t>(R) * (C + 1));
    for (int i = 0; i < R; ++i) {
        const double* row = xv.data() + static_cast<size_t>(i) * C;
        double mean = 0.0;
        for (int j = 0; j < C; ++j) mean += row[j];
        mean /= C;
        double var = 0.0;
        for (int j = 0; j < C; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= C;
        const double inv_std = 1.0 / std::sqrt(var + eps);
        double* xhat = cache->data() + static_cast<size_t>(i) * (C + 1);
        xhat[C] = inv_std;
        for (int j = 0; j < C; ++j) {
            xhat[j] = (row[j] - mean) * inv_std;
            n->value[static_cast<size_t>(i) * C + j] = xhat[j] * gv[j] + bv[j];
        }
    }
    if (n->requires_grad)
        n->backprop = [R, C, cache](TensorNode& self) {
            auto& px = self.parents[0];
            auto& pg = self.parents[1];
            auto& pb = self.parents[2];
            const auto& gv = pg->value;
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            for (int i = 0; i < R; ++i) {
                const double* xhat = cache->data() + static_cast<size_t>(i) * (C + 1);
                const double inv_std = xhat[C];
                const double* dy = self.grad.data() + static_cast<size_t>(i) * C;
                if (pg->requires_grad)
                    for (int j = 0; j < C; ++j) pg->grad[j] += dy[j] * xhat[j];
                if (pb->requires_grad)
                    for (int j = 0; j < C; ++j) pb->grad[j] += dy[j];
                if (px->requires_grad) {
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int j = 0; j < C; ++j) {
                        const double dxhat = dy[j] * gv[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat[j];
                    }
                    double* dx = px->grad.data() + static_cast<size_t>(i) * C;
                    for (int j = 0; j < C; ++j) {
                        const double dxhat = dy[j] * gv[j];
                        dx[j] += inv_std * (dxhat - sum_dxhat / C - xhat[j] * sum_dxhat_xhat / C);
                    }
                }
            }
        };
    return Tensor(n);
}

namespace detail {
inline void softmax_row(const double* in, double* out, int n) {
    double mx = in[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
        out[j] = std::exp(in[j] - mx);
        z += out[j];
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < n; ++j) out[j] *= inv;
}
}  // namespace detail

inline Tensor softmax_rows(const Tensor& x) {
    const int R = x.rows(), C = x.cols();
    auto n = detail::make_node(x.shape(), {x.node()});
    for (int i = 0; i < R; ++i)
        detail::softmax_row(x.data().data() + static_cast<size_t>(i) * C, n->value.data() + static_cast<size_t>(i) * C, C);
    if (n->requires_grad)
        n->backprop = [R, C](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int i = 0; i < R; ++i) {
                const double* y = self.value.data() + static_cast<size_t>(i) * C;
                const double* dy = self.grad.data() + static_cast<size_t>(i) * C;
                double dot = 0.0;
                for (int j = 0; j < C; ++j) dot += dy[j] * y[j];
                double* dx = p->grad.data() + static_cast<size_t>(i) * C;
                for (int j = 0; j < C; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        };
    return Tensor(n);
}

// row-wise softmax over the causal prefix: row i attends to columns 0..i.
// Entries beyond the diagonal are exactly zero.
inline Tensor causal_softmax_rows(const Tensor& x) {
    const int R = x.rows(), C = x.cols();
    if (C < R) throw std::invalid_argument("causal_softmax_rows: fewer cols than rows");
    auto n = detail::make_node(x.shape(), {x.node()});
    for (int i = 0; i < R; ++i) {
        const double* in = x.data().data() + static_cast<size_t>(i) * C;
        double* out = n->value.data() + static_cast<size_t>(i) * C;
        detail::softmax_row(in, out, i + 1);
        for (int j = i + 1; j < C; ++j) out[j] = 0.0;
    }
    if (n->requires_grad)
        n->backprop = [R, C](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int i = 0; i < R; ++i) {
                const int w = i + 1;
                const double* y = self.value.data() + static_cast<size_t>(i) * C;
                const double* dy = self.grad.data() + static_cast<size_t>(i) * C;
                double dot = 0.0;
                for (int j = 0; j < w; ++j) dot += dy[j] * y[j];
                double* dx = p->grad.data() + static_cast<size_t>(i) * C;
                for (int j = 0; j < w; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        };
    return Tensor(n);
}

// -------- reductions / losses --------

inline Tensor sum_all(const Tensor& a) {
    auto n = detail::make_node({1}, {a.node()});
    double s = 0.0;
    for (double v : a.data()) s += v;
    n->value[0] = s;
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (auto& g : p->grad) g += self.grad[0];
        };
    return Tensor(n);
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

// mean over rows of -log softmax(logits_row)[target]
inline Tensor nll_from_logits(const Tensor& logits, const std::vector<int>& targets) {
    const int R = logits.rows(), C = logits.cols();
    if (static_cast<int>(targets.size()) != R) throw std::invalid_argument("nll_from_logits: target count mismatch");
    for (int t : targets)
        if (t < 0 || t >= C) throw std::out_of_range("nll_from_logits: target out of range");
    auto n = detail::make_node({1}, {logits.node()});
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(R) * C);
    double total = 0.0;
    for (int i = 0; i < R; ++i) {
        detail::softmax_row(logits.data().data() + static_cast<size_t>(i) * C, probs->data() + static_cast<size_t>(i) * C, C);
        total -= std::log(std::max((*probs)[static_cast<size_t>(i) * C + targets[i]], 1e-300));
    }
    n->value[0] = total / R;
    if (n->requires_grad)
        n->backprop = [R, C, probs, targets](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            const double g = self.grad[0] / R;
            for (int i = 0; i < R; ++i) {
                double* dx = p->grad.data() + static_cast<size_t>(i) * C;
                const double* pr = probs->data() + static_cast<size_t>(i) * C;
                for (int j = 0; j < C; ++j) dx[j] += g * pr[j];
                dx[targets[i]] -= g;
            }
        };
    return Tensor(n);
}

// mean over rows of KL(softmax(p_logits) || softmax(q_logits)).
// The first argument is the reference distribution and must not require
// gradients (teacher side is detached by construction).
inline Tensor kl_rows_mean(const Tensor& p_logits, const Tensor& q_logits) {
    detail::check_same_shape(p_logits, q_logits, "kl_rows_mean");
    if (p_logits.requires_grad())
        throw std::invalid_argument("kl_rows_mean: reference distribution must be detached");
    const int R = p_logits.rows(), C = p_logits.cols();
    auto n = detail::make_node({1}, {q_logits.node()});
    auto pp = std::make_shared<std::vector<double>>(static_cast<size_t>(R) * C);
    auto qq = std::make_shared<std::vector<double>>(static_cast<size_t>(R) * C);
    double total = 0.0;
    for (int i = 0; i < R; ++i) {
        double* pr = pp->data() + static_cast<size_t>(i) * C;
        double* qr = qq->data() + static_cast<size_t>(i) * C;
        detail::softmax_row(p_logits.data().data() + static_cast<size_t>(i) * C, pr, C);
        detail::softmax_row(q_logits.data().data() + static_cast<size_t>(i) * C, qr, C);
        for (int j = 0; j < C; ++j)
            if (pr[j] > 0.0) total += pr[j] * (std::log(pr[j]) - std::log(std::max(qr[j], 1e-300)));
    }
    n->value[0] = total / R;
    if (n->requires_grad)
        n->backprop = [R, C, pp, qq](TensorNode& self) {
            auto& q = self.parents[0];
            q->ensure_grad();
            const double g = self.grad[0] / R;
            for (int i = 0; i < R; ++i) {
                const double* pr = pp->data() + static_cast<size_t>(i) * C;
                const double* qr = qq->data() + static_cast<size_t>(i) * C;
                double* dq = q->grad.data() + static_cast<size_t>(i) * C;
                for (int j = 0; j < C; ++j) dq[j] += g * (qr[j] - pr[j]);
            }
        };
    return Tensor(n);
}

// mean over rows of cos(a_i, b_i)
inline Tensor cos_rows_mean(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "cos_rows_mean");
    const int R = a.rows(), C = a.cols();
    auto n = detail::make_node({1}, {a.node(), b.node()});
    constexpr double eps = 1e-12;
    double total = 0.0;
    for (int i = 0; i < R; ++i) {
        const double* ar = a.data().data() + static_cast<size_t>(i) * C;
        const double* br = b.data().data() + static_cast<size_t>(i) * C;
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int j = 0; j < C; ++j) {
            dot += ar[j] * br[j];
            na += ar[j] * ar[j];
            nb += br[j] * br[j];
        }
        total += dot / (std::sqrt(na) * std::sqrt(nb) + eps);
    }
    n->value[0] = total / R;
    if (n->requires_grad)
        n->backprop = [R, C](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) pa->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            constexpr double eps = 1e-12;
            const double g = self.grad[0] / R;
            for (int i = 0; i < R; ++i) {
                const double* ar = pa->value.data() + static_cast<size_t>(i) * C;
                const double* br = pb->value.data() + static_cast<size_t>(i) * C;
                double dot = 0.0, na2 = 0.0, nb2 = 0.0;
                for (int j = 0; j < C; ++j) {
                    dot += ar[j] * br[j];
                    na2 += ar[j] * ar[j];
                    nb2 += br[j] * br[j];
                }
                const double na = std::sqrt(na2), nb = std::sqrt(nb2);
                const double denom = na * nb + eps;
                const double c = dot / denom;
                if (pa->requires_grad) {
                    double* da = pa->grad.data() + static_cast<size_t>(i) * C;
                    for (int j = 0; j < C; ++j) da[j] += g * (br[j] / denom - c * ar[j] / (na2 + eps));
                }
                if (pb->requires_grad) {
                    double* db = pb->grad.data() + static_cast<size_t>(i) * C;
                    for (int j = 0; j < C; ++j) db[j] += g * (ar[j] / denom - c * br[j] / (nb2 + eps));
                }
            }
        };
    return Tensor(n);
}

// -------- backward --------

// Reverse-mode sweep from a scalar loss. Each graph may be consumed once.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    TensorNode* root = loss.node().get();
    if (root->consumed) throw std::runtime_error("backward: graph already consumed");
    root->consumed = true;
    if (!root->requires_grad) return;  // nothing reachable requires grad

    // iterative post-order DFS -> topological order
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* parent = node->parents[idx++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

// -------- finite differences --------

// Central-difference gradient oracle: (f(p + eps e_k) - f(p - eps e_k)) / 2 eps.
inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> params, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    std::vector<double> g(params.size());
    for (size_t k = 0; k < params.size(); ++k) {
        const double orig = params[k];
        params[k] = orig + eps;
        const double fp = f(params);
        params[k] = orig - eps;
        const double fm = f(params);
        params[k] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite function evaluation");
        g[k] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

}  // namespace paragen
