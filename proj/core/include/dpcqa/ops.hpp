#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpcqa/tape.hpp"
#include "dpcqa/tensor.hpp"

// Primitive differentiable ops. Every op computes its forward result,
// verifies finiteness, and records a backward rule on the tape.

namespace dpcqa {

namespace detail {

template <typename T>
TensorPtr<T> alloc_like_shape(const Shape& shape, bool requires_grad) {
    auto out = zeros<T>(shape);
    out->requires_grad = requires_grad;
    return out;
}

template <typename T>
void require_same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b, const char* op) {
    if (!same_shape(*a, *b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> add(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_same_shape(a, b, "add");
    auto out = detail::alloc_like_shape<T>(a->shape, a->requires_grad || b->requires_grad);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    check_finite(*out, "add");
    tape.record(out, {a, b}, [a, b, out] {
        const auto& g = out->grad;
        if (a->requires_grad)
            for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i];
        if (b->requires_grad)
            for (size_t i = 0; i < g.size(); ++i) b->grad[i] += g[i];
    });
    return out;
}

template <typename T>
TensorPtr<T> sub(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_same_shape(a, b, "sub");
    auto out = detail::alloc_like_shape<T>(a->shape, a->requires_grad || b->requires_grad);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
    check_finite(*out, "sub");
    tape.record(out, {a, b}, [a, b, out] {
        const auto& g = out->grad;
        if (a->requires_grad)
            for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i];
        if (b->requires_grad)
            for (size_t i = 0; i < g.size(); ++i) b->grad[i] -= g[i];
    });
    return out;
}

template <typename T>
TensorPtr<T> mul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_same_shape(a, b, "mul");
    auto out = detail::alloc_like_shape<T>(a->shape, a->requires_grad || b->requires_grad);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    check_finite(*out, "mul");
    tape.record(out, {a, b}, [a, b, out] {
        const auto& g = out->grad;
        if (a->requires_grad)
            for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i] * b->data[i];
        if (b->requires_grad)
            for (size_t i = 0; i < g.size(); ++i) b->grad[i] += g[i] * a->data[i];
    });
    return out;
}

// y = c * x for a plain constant c.
template <typename T>
TensorPtr<T> scale(Tape<T>& tape, const TensorPtr<T>& x, T c) {
    auto out = detail::alloc_like_shape<T>(x->shape, x->requires_grad);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = c * x->data[i];
    check_finite(*out, "scale");
    tape.record(out, {x}, [x, out, c] {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += c * out->grad[i];
    });
    return out;
}

template <typename T>
TensorPtr<T> add_all(Tape<T>& tape, const std::vector<TensorPtr<T>>& xs) {
    if (xs.empty()) throw ShapeError("add_all: empty input list");
    bool rg = false;
    for (const auto& x : xs) {
        detail::require_same_shape(xs.front(), x, "add_all");
        rg = rg || x->requires_grad;
    }
    auto out = detail::alloc_like_shape<T>(xs.front()->shape, rg);
    for (const auto& x : xs)
        for (size_t i = 0; i < out->data.size(); ++i) out->data[i] += x->data[i];
    check_finite(*out, "add_all");
    tape.record(out, {xs.begin(), xs.end()}, [xs, out] {
        for (const auto& x : xs) {
            if (!x->requires_grad) continue;
            for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> relu(Tape<T>& tape, const TensorPtr<T>& x) {
    auto out = detail::alloc_like_shape<T>(x->shape, x->requires_grad);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
    tape.record(out, {x}, [x, out] {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < out->grad.size(); ++i)
            if (x->data[i] > T(0)) x->grad[i] += out->grad[i];
    });
    return out;
}

template <typename T>
T sigmoid_scalar(T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    T e = std::exp(v);
    return e / (T(1) + e);
}

template <typename T>
TensorPtr<T> sigmoid(Tape<T>& tape, const TensorPtr<T>& x) {
    auto out = detail::alloc_like_shape<T>(x->shape, x->requires_grad);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = sigmoid_scalar(x->data[i]);
    check_finite(*out, "sigmoid");
    tape.record(out, {x}, [x, out] {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < out->grad.size(); ++i) {
            T y = out->data[i];
            x->grad[i] += out->grad[i] * y * (T(1) - y);
        }
    });
    return out;
}

// softplus(x) = ln(1 + e^x), computed as max(x,0) + log1p(e^-|x|).
template <typename T>
TensorPtr<T> softplus(Tape<T>& tape, const TensorPtr<T>& x) {
    auto out = detail::alloc_like_shape<T>(x->shape, x->requires_grad);
    for (size_t i = 0; i < out->data.size(); ++i) {
        T v = x->data[i];
        out->data[i] = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
    }
    check_finite(*out, "softplus");
    tape.record(out, {x}, [x, out] {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < out->grad.size(); ++i)
            x->grad[i] += out->grad[i] * sigmoid_scalar(x->data[i]);
    });
    return out;
}

// |x| with subgradient 0 at the kink.
template <typename T>
TensorPtr<T> abs_val(Tape<T>& tape, const TensorPtr<T>& x) {
    auto out = detail::alloc_like_shape<T>(x->shape, x->requires_grad);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::abs(x->data[i]);
    tape.record(out, {x}, [x, out] {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < out->grad.size(); ++i) {
            T v = x->data[i];
            if (v > T(0))
                x->grad[i] += out->grad[i];
            else if (v < T(0))
                x->grad[i] -= out->grad[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> sum(Tape<T>& tape, const TensorPtr<T>& x) {
    T acc(0);
    for (T v : x->data) acc += v;
    auto out = detail::alloc_like_shape<T>(Shape{1}, x->requires_grad);
    out->data[0] = acc;
    check_finite(*out, "sum");
    tape.record(out, {x}, [x, out] {
        if (!x->requires_grad) return;
        T g = out->grad[0];
        for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    });
    return out;
}

template <typename T>
TensorPtr<T> mean(Tape<T>& tape, const TensorPtr<T>& x) {
    if (x->numel() == 0) throw ShapeError("mean of empty tensor");
    T acc(0);
    for (T v : x->data) acc += v;
    T inv = T(1) / static_cast<T>(x->numel());
    auto out = detail::alloc_like_shape<T>(Shape{1}, x->requires_grad);
    out->data[0] = acc * inv;
    check_finite(*out, "mean");
    tape.record(out, {x}, [x, out, inv] {
        if (!x->requires_grad) return;
        T g = out->grad[0] * inv;
        for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    });
    return out;
}

// Mean over a single axis, removing it. mean_pool([n x D], 0) -> [D].
template <typename T>
TensorPtr<T> mean_pool(Tape<T>& tape, const TensorPtr<T>& x, size_t axis) {
    if (axis >= x->rank()) throw ShapeError("mean_pool: axis out of range");
    int64_t n = x->shape[axis];
    if (n == 0) throw ShapeError("mean_pool over empty axis");
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= x->shape[i];
    for (size_t i = axis + 1; i < x->rank(); ++i) inner *= x->shape[i];
    Shape out_shape;
    for (size_t i = 0; i < x->rank(); ++i)
        if (i != axis) out_shape.push_back(x->shape[i]);
    if (out_shape.empty()) out_shape = Shape{1};
    auto out = detail::alloc_like_shape<T>(out_shape, x->requires_grad);
    T inv = T(1) / static_cast<T>(n);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < n; ++k)
            for (int64_t i = 0; i < inner; ++i)
                out->data[static_cast<size_t>(o * inner + i)] +=
                    x->data[static_cast<size_t>((o * n + k) * inner + i)];
    for (auto& v : out->data) v *= inv;
    check_finite(*out, "mean_pool");
    tape.record(out, {x}, [x, out, outer, n, inner, inv] {
        if (!x->requires_grad) return;
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t k = 0; k < n; ++k)
                for (int64_t i = 0; i < inner; ++i)
                    x->grad[static_cast<size_t>((o * n + k) * inner + i)] +=
                        out->grad[static_cast<size_t>(o * inner + i)] * inv;
    });
    return out;
}

// [C x H x W] -> [C], mean over the spatial grid.
template <typename T>
TensorPtr<T> global_avg_pool(Tape<T>& tape, const TensorPtr<T>& x) {
    if (x->rank() != 3) throw ShapeError("global_avg_pool expects [C x H x W]");
    int64_t c = x->shape[0], hw = x->shape[1] * x->shape[2];
    if (hw == 0) throw ShapeError("global_avg_pool over empty grid");
    auto out = detail::alloc_like_shape<T>(Shape{c}, x->requires_grad);
    T inv = T(1) / static_cast<T>(hw);
    for (int64_t ch = 0; ch < c; ++ch) {
        T acc(0);
        for (int64_t i = 0; i < hw; ++i) acc += x->data[static_cast<size_t>(ch * hw + i)];
        out->data[static_cast<size_t>(ch)] = acc * inv;
    }
    check_finite(*out, "global_avg_pool");
    tape.record(out, {x}, [x, out, c, hw, inv] {
        if (!x->requires_grad) return;
        for (int64_t ch = 0; ch < c; ++ch) {
            T g = out->grad[static_cast<size_t>(ch)] * inv;
            for (int64_t i = 0; i < hw; ++i) x->grad[static_cast<size_t>(ch * hw + i)] += g;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> matmul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->rank() != 2 || b->rank() != 2)
        throw ShapeError("matmul expects rank-2 tensors");
    int64_t m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    auto out = detail::alloc_like_shape<T>(Shape{m, n}, a->requires_grad || b->requires_grad);
    const T* ad = a->data.data();
    const T* bd = b->data.data();
    T* od = out->data.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            T av = ad[i * k + p];
            if (av == T(0)) continue;
            const T* brow = bd + p * n;
            T* orow = od + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    check_finite(*out, "matmul");
    tape.record(out, {a, b}, [a, b, out, m, k, n] {
        const T* g = out->grad.data();
        if (a->requires_grad) {
            // dA = dC . B^T
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    T acc(0);
                    const T* grow = g + i * n;
                    const T* brow = b->data.data() + p * n;
                    for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    a->grad[static_cast<size_t>(i * k + p)] += acc;
                }
        }
        if (b->requires_grad) {
            // dB = A^T . dC
            for (int64_t p = 0; p < k; ++p)
                for (int64_t i = 0; i < m; ++i) {
                    T av = a->data[static_cast<size_t>(i * k + p)];
                    if (av == T(0)) continue;
                    const T* grow = g + i * n;
                    T* brow = b->grad.data() + p * n;
                    for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
    return out;
}

template <typename T>
TensorPtr<T> transpose2d(Tape<T>& tape, const TensorPtr<T>& x) {
    if (x->rank() != 2) throw ShapeError("transpose2d expects rank 2");
    int64_t m = x->shape[0], n = x->shape[1];
    auto out = detail::alloc_like_shape<T>(Shape{n, m}, x->requires_grad);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out->data[static_cast<size_t>(j * m + i)] = x->data[static_cast<size_t>(i * n + j)];
    tape.record(out, {x}, [x, out, m, n] {
        if (!x->requires_grad) return;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                x->grad[static_cast<size_t>(i * n + j)] += out->grad[static_cast<size_t>(j * m + i)];
    });
    return out;
}

// A [m x n] . x [n] -> [m]
template <typename T>
TensorPtr<T> matvec(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& x) {
    if (a->rank() != 2 || x->rank() != 1 || a->shape[1] != x->shape[0])
        throw ShapeError("matvec: incompatible shapes " + shape_str(a->shape) + " and " +
                         shape_str(x->shape));
    int64_t m = a->shape[0], n = a->shape[1];
    auto out = detail::alloc_like_shape<T>(Shape{m}, a->requires_grad || x->requires_grad);
    for (int64_t i = 0; i < m; ++i) {
        T acc(0);
        const T* arow = a->data.data() + i * n;
        for (int64_t j = 0; j < n; ++j) acc += arow[j] * x->data[static_cast<size_t>(j)];
        out->data[static_cast<size_t>(i)] = acc;
    }
    check_finite(*out, "matvec");
    tape.record(out, {a, x}, [a, x, out, m, n] {
        for (int64_t i = 0; i < m; ++i) {
            T g = out->grad[static_cast<size_t>(i)];
            if (g == T(0)) continue;
            if (a->requires_grad) {
                T* garow = a->grad.data() + i * n;
                for (int64_t j = 0; j < n; ++j) garow[j] += g * x->data[static_cast<size_t>(j)];
            }
            if (x->requires_grad) {
                const T* arow = a->data.data() + i * n;
                for (int64_t j = 0; j < n; ++j) x->grad[static_cast<size_t>(j)] += g * arow[j];
            }
        }
    });
    return out;
}

// x [m] . A [m x n] -> [n]
template <typename T>
TensorPtr<T> vecmat(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& a) {
    if (a->rank() != 2 || x->rank() != 1 || a->shape[0] != x->shape[0])
        throw ShapeError("vecmat: incompatible shapes " + shape_str(x->shape) + " and " +
                         shape_str(a->shape));
    int64_t m = a->shape[0], n = a->shape[1];
    auto out = detail::alloc_like_shape<T>(Shape{n}, a->requires_grad || x->requires_grad);
    for (int64_t i = 0; i < m; ++i) {
        T xv = x->data[static_cast<size_t>(i)];
        if (xv == T(0)) continue;
        const T* arow = a->data.data() + i * n;
        for (int64_t j = 0; j < n; ++j) out->data[static_cast<size_t>(j)] += xv * arow[j];
    }
    check_finite(*out, "vecmat");
    tape.record(out, {x, a}, [a, x, out, m, n] {
        if (x->requires_grad) {
            for (int64_t i = 0; i < m; ++i) {
                T acc(0);
                const T* arow = a->data.data() + i * n;
                for (int64_t j = 0; j < n; ++j) acc += arow[j] * out->grad[static_cast<size_t>(j)];
                x->grad[static_cast<size_t>(i)] += acc;
            }
        }
        if (a->requires_grad) {
            for (int64_t i = 0; i < m; ++i) {
                T xv = x->data[static_cast<size_t>(i)];
                if (xv == T(0)) continue;
                T* garow = a->grad.data() + i * n;
                for (int64_t j = 0; j < n; ++j) garow[j] += xv * out->grad[static_cast<size_t>(j)];
            }
        }
    });
    return out;
}

// W [out x in] . x [in] + b [out]
template <typename T>
TensorPtr<T> linear(Tape<T>& tape, const TensorPtr<T>& w, const TensorPtr<T>& x,
                    const TensorPtr<T>& b) {
    return add(tape, matvec(tape, w, x), b);
}

// ---------------------------------------------------------------------------
// softmax / layer_norm
// ---------------------------------------------------------------------------

// Max-subtracted softmax along one axis; each slice sums to 1.
template <typename T>
TensorPtr<T> softmax(Tape<T>& tape, const TensorPtr<T>& x, size_t axis) {
    if (axis >= x->rank()) throw ShapeError("softmax: axis out of range");
    int64_t n = x->shape[axis];
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= x->shape[i];
    for (size_t i = axis + 1; i < x->rank(); ++i) inner *= x->shape[i];
    auto out = detail::alloc_like_shape<T>(x->shape, x->requires_grad);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            auto idx = [&](int64_t k) { return static_cast<size_t>((o * n + k) * inner + in); };
            T mx = x->data[idx(0)];
            for (int64_t k = 1; k < n; ++k) mx = std::max(mx, x->data[idx(k)]);
            T z(0);
            for (int64_t k = 0; k < n; ++k) {
                T e = std::exp(x->data[idx(k)] - mx);
                out->data[idx(k)] = e;
                z += e;
            }
            for (int64_t k = 0; k < n; ++k) out->data[idx(k)] /= z;
        }
    check_finite(*out, "softmax");
    tape.record(out, {x}, [x, out, outer, n, inner] {
        if (!x->requires_grad) return;
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t in = 0; in < inner; ++in) {
                auto idx = [&](int64_t k) { return static_cast<size_t>((o * n + k) * inner + in); };
                T dot(0);
                for (int64_t k = 0; k < n; ++k) dot += out->grad[idx(k)] * out->data[idx(k)];
                for (int64_t k = 0; k < n; ++k)
                    x->grad[idx(k)] += out->data[idx(k)] * (out->grad[idx(k)] - dot);
            }
    });
    return out;
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// learnable per-feature scale and shift.
template <typename T>
TensorPtr<T> layer_norm(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, T eps = T(1e-6)) {
    if (x->rank() == 0) throw ShapeError("layer_norm on empty tensor");
    int64_t d = x->shape.back();
    if (gamma->numel() != d || beta->numel() != d)
        throw ShapeError("layer_norm: scale/shift must have last-axis length");
    int64_t rows = x->numel() / d;
    auto out = detail::alloc_like_shape<T>(
        x->shape, x->requires_grad || gamma->requires_grad || beta->requires_grad);
    auto xhat = std::make_shared<std::vector<T>>(x->data.size());
    auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x->data.data() + r * d;
        T mu(0);
        for (int64_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<T>(d);
        T var(0);
        for (int64_t i = 0; i < d; ++i) {
            T c = xr[i] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_sigma)[static_cast<size_t>(r)] = is;
        for (int64_t i = 0; i < d; ++i) {
            T h = (xr[i] - mu) * is;
            (*xhat)[static_cast<size_t>(r * d + i)] = h;
            out->data[static_cast<size_t>(r * d + i)] =
                gamma->data[static_cast<size_t>(i)] * h + beta->data[static_cast<size_t>(i)];
        }
    }
    check_finite(*out, "layer_norm");
    tape.record(out, {x, gamma, beta}, [x, gamma, beta, out, xhat, inv_sigma, rows, d] {
        for (int64_t r = 0; r < rows; ++r) {
            const T* g = out->grad.data() + r * d;
            const T* h = xhat->data() + r * d;
            if (gamma->requires_grad)
                for (int64_t i = 0; i < d; ++i) gamma->grad[static_cast<size_t>(i)] += g[i] * h[i];
            if (beta->requires_grad)
                for (int64_t i = 0; i < d; ++i) beta->grad[static_cast<size_t>(i)] += g[i];
            if (x->requires_grad) {
                T mean_gh(0), mean_ghh(0);
                for (int64_t i = 0; i < d; ++i) {
                    T gh = g[i] * gamma->data[static_cast<size_t>(i)];
                    mean_gh += gh;
                    mean_ghh += gh * h[i];
                }
                mean_gh /= static_cast<T>(d);
                mean_ghh /= static_cast<T>(d);
                T is = (*inv_sigma)[static_cast<size_t>(r)];
                for (int64_t i = 0; i < d; ++i) {
                    T gh = g[i] * gamma->data[static_cast<size_t>(i)];
                    x->grad[static_cast<size_t>(r * d + i)] +=
                        (gh - mean_gh - h[i] * mean_ghh) * is;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> reshape(Tape<T>& tape, const TensorPtr<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x->numel())
        throw ShapeError("reshape: element count changes from " + shape_str(x->shape) + " to " +
                         shape_str(new_shape));
    auto out = detail::alloc_like_shape<T>(new_shape, x->requires_grad);
    out->data = x->data;
    tape.record(out, {x}, [x, out] {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
    });
    return out;
}

template <typename T>
TensorPtr<T> concat(Tape<T>& tape, const std::vector<TensorPtr<T>>& xs, size_t axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    size_t rank = xs.front()->rank();
    if (axis >= rank) throw ShapeError("concat: axis out of range");
    Shape out_shape = xs.front()->shape;
    bool rg = false;
    for (const auto& x : xs) {
        if (x->rank() != rank) throw ShapeError("concat: rank mismatch");
        for (size_t i = 0; i < rank; ++i)
            if (i != axis && x->shape[i] != out_shape[i])
                throw ShapeError("concat: non-axis dims must agree");
        rg = rg || x->requires_grad;
    }
    out_shape[axis] = 0;
    for (const auto& x : xs) out_shape[axis] += x->shape[axis];
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= out_shape[i];
    for (size_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];
    auto out = detail::alloc_like_shape<T>(out_shape, rg);
    int64_t out_axis = out_shape[axis];
    int64_t offset = 0;
    for (const auto& x : xs) {
        int64_t n = x->shape[axis];
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t k = 0; k < n; ++k)
                std::copy_n(x->data.data() + (o * n + k) * inner, inner,
                            out->data.data() + (o * out_axis + offset + k) * inner);
        offset += n;
    }
    check_finite(*out, "concat");
    std::vector<int64_t> axis_lens;
    for (const auto& x : xs) axis_lens.push_back(x->shape[axis]);
    tape.record(out, {xs.begin(), xs.end()}, [xs, out, outer, inner, out_axis, axis_lens] {
        int64_t off = 0;
        for (size_t xi = 0; xi < xs.size(); ++xi) {
            const auto& x = xs[xi];
            int64_t n = axis_lens[xi];
            if (x->requires_grad) {
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t k = 0; k < n; ++k) {
                        const T* g = out->grad.data() + (o * out_axis + off + k) * inner;
                        T* xg = x->grad.data() + (o * n + k) * inner;
                        for (int64_t i = 0; i < inner; ++i) xg[i] += g[i];
                    }
            }
            off += n;
        }
    });
    return out;
}

// Stacks same-shape tensors along a new leading axis.
template <typename T>
TensorPtr<T> stack0(Tape<T>& tape, const std::vector<TensorPtr<T>>& xs) {
    if (xs.empty()) throw ShapeError("stack0: empty input list");
    bool rg = false;
    for (const auto& x : xs) {
        detail::require_same_shape(xs.front(), x, "stack0");
        rg = rg || x->requires_grad;
    }
    Shape out_shape;
    out_shape.push_back(static_cast<int64_t>(xs.size()));
    for (int64_t d : xs.front()->shape) out_shape.push_back(d);
    auto out = detail::alloc_like_shape<T>(out_shape, rg);
    int64_t stride = xs.front()->numel();
    for (size_t i = 0; i < xs.size(); ++i)
        std::copy(xs[i]->data.begin(), xs[i]->data.end(),
                  out->data.begin() + static_cast<int64_t>(i) * stride);
    tape.record(out, {xs.begin(), xs.end()}, [xs, out, stride] {
        for (size_t i = 0; i < xs.size(); ++i) {
            if (!xs[i]->requires_grad) continue;
            const T* g = out->grad.data() + static_cast<int64_t>(i) * stride;
            for (int64_t j = 0; j < stride; ++j) xs[i]->grad[static_cast<size_t>(j)] += g[j];
        }
    });
    return out;
}

// Reorders the rows of a [n x m] tensor: out row i = x row order[i].
// order must be a permutation so the backward scatter is one-to-one.
template <typename T>
TensorPtr<T> gather_rows(Tape<T>& tape, const TensorPtr<T>& x,
                         const std::vector<int64_t>& order) {
    if (x->rank() != 2) throw ShapeError("gather_rows expects a rank-2 tensor");
    int64_t n = x->shape[0], m = x->shape[1];
    if (static_cast<int64_t>(order.size()) != n)
        throw ShapeError("gather_rows: order length does not match row count");
    std::vector<uint8_t> seen(static_cast<size_t>(n), 0);
    for (int64_t r : order) {
        if (r < 0 || r >= n || seen[static_cast<size_t>(r)])
            throw ShapeError("gather_rows: order is not a permutation");
        seen[static_cast<size_t>(r)] = 1;
    }
    auto out = detail::alloc_like_shape<T>(x->shape, x->requires_grad);
    for (int64_t i = 0; i < n; ++i)
        std::copy(x->data.begin() + order[static_cast<size_t>(i)] * m,
                  x->data.begin() + (order[static_cast<size_t>(i)] + 1) * m,
                  out->data.begin() + i * m);
    auto ord = std::make_shared<std::vector<int64_t>>(order);
    tape.record(out, {x}, [x, out, ord, n, m] {
        for (int64_t i = 0; i < n; ++i) {
            const T* g = out->grad.data() + i * m;
            T* dst = x->grad.data() + (*ord)[static_cast<size_t>(i)] * m;
            for (int64_t j = 0; j < m; ++j) dst[j] += g[j];
        }
    });
    return out;
}

}  // namespace dpcqa
