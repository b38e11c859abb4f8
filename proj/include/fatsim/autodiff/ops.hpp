#pragma once

// Differentiable operations on Graph variables. Matrix products and
// convolutions run through Eigen GEMM; softmax/cross-entropy and plain
// reductions accumulate in double.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fatsim/autodiff/graph.hpp"
#include "fatsim/autodiff/tensor.hpp"
#include "fatsim/error.hpp"

namespace fatsim::ad {

namespace detail {

template <typename S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapR = Eigen::Map<MatR<S>>;
template <typename S>
using CMapR = Eigen::Map<const MatR<S>>;

[[noreturn]] inline void shape_fail(const std::string& op, const std::string& what) {
    throw ShapeError(op + ": " + what);
}

template <typename S>
void require_rank(const std::string& op, const BasicTensor<S>& t, std::size_t rank, const char* name) {
    if (t.rank() != rank)
        shape_fail(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                           shape_str(t.shape));
}

template <typename S>
void require_same(const std::string& op, const BasicTensor<S>& a, const BasicTensor<S>& b) {
    if (a.shape != b.shape) shape_fail(op, "shapes differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

template <typename S>
void accumulate(BasicTensor<S>* dst, const BasicTensor<S>& src, S factor = S(1)) {
    if (!dst) return;
    for (std::size_t i = 0; i < src.numel(); ++i) dst->data[i] += factor * src.data[i];
}

// Rows = leading dim, cols = product of the rest. Softmax-style ops treat a rank-1 tensor as one row.
template <typename S>
std::pair<std::size_t, std::size_t> rows_cols(const BasicTensor<S>& t) {
    if (t.rank() == 1) return {1, t.dim(0)};
    return {t.dim(0), t.numel() / t.dim(0)};
}

}  // namespace detail

/// [m,k] x [k,n] -> [m,n]
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    const auto& A = a.value();
    const auto& B = b.value();
    detail::require_rank("matmul", A, 2, "lhs");
    detail::require_rank("matmul", B, 2, "rhs");
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    if (B.dim(0) != k)
        detail::shape_fail("matmul", "inner dims differ: lhs " + shape_str(A.shape) + " rhs " + shape_str(B.shape));
    BasicTensor<S> out({m, n});
    detail::MapR<S>(out.data.data(), m, n).noalias() =
        detail::CMapR<S>(A.data.data(), m, k) * detail::CMapR<S>(B.data.data(), k, n);
    return a.graph->record(std::move(out), {a, b}, [m, k, n](Graph<S>& g, std::size_t self) {
        const auto& G = g.node_grad(self);
        detail::CMapR<S> gm(G.data.data(), m, n);
        if (auto* ga = g.input_grad(self, 0)) {
            const auto& Bv = g.node_value(g.input_id(self, 1));
            detail::MapR<S>(ga->data.data(), m, k).noalias() += gm * detail::CMapR<S>(Bv.data.data(), k, n).transpose();
        }
        if (auto* gb = g.input_grad(self, 1)) {
            const auto& Av = g.node_value(g.input_id(self, 0));
            detail::MapR<S>(gb->data.data(), k, n).noalias() += detail::CMapR<S>(Av.data.data(), m, k).transpose() * gm;
        }
    });
}

/// Adds b[F] along the feature axis of x[N,F], or b[C] along the channel axis of x[N,C,H,W].
template <typename S>
Var<S> add_bias(Var<S> x, Var<S> b) {
    const auto& X = x.value();
    const auto& B = b.value();
    detail::require_rank("add_bias", B, 1, "bias");
    if (X.rank() != 2 && X.rank() != 4)
        detail::shape_fail("add_bias", "input must be [N,F] or [N,C,H,W], got " + shape_str(X.shape));
    const std::size_t n = X.dim(0), c = X.dim(1);
    const std::size_t inner = X.numel() / (n * c);
    if (B.dim(0) != c)
        detail::shape_fail("add_bias", "bias " + shape_str(B.shape) + " does not match axis 1 of " + shape_str(X.shape));
    BasicTensor<S> out = X;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            S* p = out.data.data() + (i * c + j) * inner;
            for (std::size_t t = 0; t < inner; ++t) p[t] += B.data[j];
        }
    return x.graph->record(std::move(out), {x, b}, [n, c, inner](Graph<S>& g, std::size_t self) {
        const auto& G = g.node_grad(self);
        detail::accumulate(g.input_grad(self, 0), G);
        if (auto* gb = g.input_grad(self, 1)) {
            for (std::size_t j = 0; j < c; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const S* p = G.data.data() + (i * c + j) * inner;
                    for (std::size_t t = 0; t < inner; ++t) acc += p[t];
                }
                gb->data[j] += static_cast<S>(acc);
            }
        }
    });
}

/// 2-D convolution, stride 1, symmetric zero padding. x[N,C,H,W] * w[O,C,KH,KW] -> [N,O,H',W'].
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, std::size_t pad = 0) {
    const auto& X = x.value();
    const auto& W = w.value();
    detail::require_rank("conv2d", X, 4, "input");
    detail::require_rank("conv2d", W, 4, "kernel");
    const std::size_t n = X.dim(0), c = X.dim(1), h = X.dim(2), wd = X.dim(3);
    const std::size_t o = W.dim(0), kh = W.dim(2), kw = W.dim(3);
    if (W.dim(1) != c)
        detail::shape_fail("conv2d", "kernel " + shape_str(W.shape) + " expects " + std::to_string(W.dim(1)) +
                                         " input channels, input " + shape_str(X.shape) + " has " + std::to_string(c));
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        detail::shape_fail("conv2d", "kernel " + shape_str(W.shape) + " larger than padded input " + shape_str(X.shape));
    const std::size_t oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;
    const std::size_t plane = oh * ow, rows = c * kh * kw, cols_n = n * plane;

    // im2col: cols[(ci,ki,kj), (b,y,x)]
    std::vector<S> cols(rows * cols_n, S(0));
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ki = 0; ki < kh; ++ki)
            for (std::size_t kj = 0; kj < kw; ++kj) {
                S* row = cols.data() + ((ci * kh + ki) * kw + kj) * cols_n;
                for (std::size_t b = 0; b < n; ++b) {
                    const S* src = X.data.data() + (b * c + ci) * h * wd;
                    S* dst = row + b * plane;
                    for (std::size_t y = 0; y < oh; ++y) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ki) - static_cast<std::ptrdiff_t>(pad);
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t xx = 0; xx < ow; ++xx) {
                            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kj) - static_cast<std::ptrdiff_t>(pad);
                            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(wd)) continue;
                            dst[y * ow + xx] = src[sy * wd + sx];
                        }
                    }
                }
            }

    detail::MatR<S> prod(o, cols_n);
    prod.noalias() = detail::CMapR<S>(W.data.data(), o, rows) * detail::CMapR<S>(cols.data(), rows, cols_n);
    BasicTensor<S> out({n, o, oh, ow});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oc = 0; oc < o; ++oc)
            std::copy_n(prod.data() + oc * cols_n + b * plane, plane, out.data.data() + (b * o + oc) * plane);

    return x.graph->record(
        std::move(out), {x, w},
        [n, c, h, wd, o, kh, kw, pad, oh, ow, plane, rows, cols_n, cols = std::move(cols)](Graph<S>& g, std::size_t self) {
            const auto& G = g.node_grad(self);
            detail::MatR<S> gprod(o, cols_n);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t oc = 0; oc < o; ++oc)
                    std::copy_n(G.data.data() + (b * o + oc) * plane, plane, gprod.data() + oc * cols_n + b * plane);
            if (auto* gw = g.input_grad(self, 1))
                detail::MapR<S>(gw->data.data(), o, rows).noalias() +=
                    gprod * detail::CMapR<S>(cols.data(), rows, cols_n).transpose();
            if (auto* gx = g.input_grad(self, 0)) {
                const auto& Wv = g.node_value(g.input_id(self, 1));
                detail::MatR<S> gcols(rows, cols_n);
                gcols.noalias() = detail::CMapR<S>(Wv.data.data(), o, rows).transpose() * gprod;
                for (std::size_t ci = 0; ci < c; ++ci)
                    for (std::size_t ki = 0; ki < kh; ++ki)
                        for (std::size_t kj = 0; kj < kw; ++kj) {
                            const S* row = gcols.data() + ((ci * kh + ki) * kw + kj) * cols_n;
                            for (std::size_t b = 0; b < n; ++b) {
                                S* dst = gx->data.data() + (b * c + ci) * h * wd;
                                const S* src = row + b * plane;
                                for (std::size_t y = 0; y < oh; ++y) {
                                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ki) - static_cast<std::ptrdiff_t>(pad);
                                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                                    for (std::size_t xx = 0; xx < ow; ++xx) {
                                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kj) - static_cast<std::ptrdiff_t>(pad);
                                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(wd)) continue;
                                        dst[sy * wd + sx] += src[y * ow + xx];
                                    }
                                }
                            }
                        }
            }
        });
}

template <typename S>
Var<S> relu(Var<S> x) {
    BasicTensor<S> out = x.value();
    for (auto& v : out.data) v = v > S(0) ? v : S(0);
    return x.graph->record(std::move(out), {x}, [](Graph<S>& g, std::size_t self) {
        if (auto* gx = g.input_grad(self, 0)) {
            const auto& G = g.node_grad(self);
            const auto& Y = g.node_value(self);
            for (std::size_t i = 0; i < G.numel(); ++i)
                if (Y.data[i] > S(0)) gx->data[i] += G.data[i];
        }
    });
}

/// 2x2 max pool with stride 2 over [N,C,H,W]; odd trailing rows/cols are dropped.
/// Ties resolve to the first element in row-major window order.
template <typename S>
Var<S> max_pool2x2(Var<S> x) {
    const auto& X = x.value();
    detail::require_rank("max_pool2x2", X, 4, "input");
    const std::size_t n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
    if (h < 2 || w < 2) detail::shape_fail("max_pool2x2", "spatial dims must be >= 2, got " + shape_str(X.shape));
    const std::size_t oh = h / 2, ow = w / 2;
    BasicTensor<S> out({n, c, oh, ow});
    std::vector<std::size_t> argmax(out.numel());
    for (std::size_t p = 0; p < n * c; ++p) {
        const S* src = X.data.data() + p * h * w;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                std::size_t best = (2 * y) * w + 2 * xx;
                for (std::size_t cand : {(2 * y) * w + 2 * xx + 1, (2 * y + 1) * w + 2 * xx, (2 * y + 1) * w + 2 * xx + 1})
                    if (src[cand] > src[best]) best = cand;
                const std::size_t oi = p * oh * ow + y * ow + xx;
                out.data[oi] = src[best];
                argmax[oi] = p * h * w + best;
            }
    }
    return x.graph->record(std::move(out), {x}, [argmax = std::move(argmax)](Graph<S>& g, std::size_t self) {
        if (auto* gx = g.input_grad(self, 0)) {
            const auto& G = g.node_grad(self);
            for (std::size_t i = 0; i < G.numel(); ++i) gx->data[argmax[i]] += G.data[i];
        }
    });
}

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
    const auto& X = x.value();
    if (shape_numel(shape) != X.numel())
        detail::shape_fail("reshape", "cannot view " + shape_str(X.shape) + " as " + shape_str(shape));
    BasicTensor<S> out(std::move(shape), X.data);
    return x.graph->record(std::move(out), {x}, [](Graph<S>& g, std::size_t self) {
        if (auto* gx = g.input_grad(self, 0))
            for (std::size_t i = 0; i < gx->numel(); ++i) gx->data[i] += g.node_grad(self).data[i];
    });
}

/// [N, ...] -> [N, prod(...)]
template <typename S>
Var<S> flatten(Var<S> x) {
    const auto& X = x.value();
    if (X.rank() < 2) detail::shape_fail("flatten", "input must have a batch axis, got " + shape_str(X.shape));
    return reshape(x, Shape{X.dim(0), X.numel() / X.dim(0)});
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    detail::require_same("add", a.value(), b.value());
    BasicTensor<S> out = a.value();
    const auto& B = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
    return a.graph->record(std::move(out), {a, b}, [](Graph<S>& g, std::size_t self) {
        detail::accumulate(g.input_grad(self, 0), g.node_grad(self));
        detail::accumulate(g.input_grad(self, 1), g.node_grad(self));
    });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    detail::require_same("sub", a.value(), b.value());
    BasicTensor<S> out = a.value();
    const auto& B = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= B.data[i];
    return a.graph->record(std::move(out), {a, b}, [](Graph<S>& g, std::size_t self) {
        detail::accumulate(g.input_grad(self, 0), g.node_grad(self));
        detail::accumulate(g.input_grad(self, 1), g.node_grad(self), S(-1));
    });
}

/// Elementwise product.
template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
    detail::require_same("mul", a.value(), b.value());
    BasicTensor<S> out = a.value();
    const auto& B = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= B.data[i];
    return a.graph->record(std::move(out), {a, b}, [](Graph<S>& g, std::size_t self) {
        const auto& G = g.node_grad(self);
        if (auto* ga = g.input_grad(self, 0)) {
            const auto& Bv = g.node_value(g.input_id(self, 1));
            for (std::size_t i = 0; i < G.numel(); ++i) ga->data[i] += G.data[i] * Bv.data[i];
        }
        if (auto* gb = g.input_grad(self, 1)) {
            const auto& Av = g.node_value(g.input_id(self, 0));
            for (std::size_t i = 0; i < G.numel(); ++i) gb->data[i] += G.data[i] * Av.data[i];
        }
    });
}

template <typename S>
Var<S> scale(Var<S> x, S factor) {
    BasicTensor<S> out = x.value();
    for (auto& v : out.data) v *= factor;
    return x.graph->record(std::move(out), {x}, [factor](Graph<S>& g, std::size_t self) {
        detail::accumulate(g.input_grad(self, 0), g.node_grad(self), factor);
    });
}

template <typename S>
Var<S> sum(Var<S> x) {
    double acc = 0.0;
    for (S v : x.value().data) acc += v;
    return x.graph->record(BasicTensor<S>::scalar(static_cast<S>(acc)), {x}, [](Graph<S>& g, std::size_t self) {
        if (auto* gx = g.input_grad(self, 0)) {
            const S gs = g.node_grad(self).data[0];
            for (auto& v : gx->data) v += gs;
        }
    });
}

template <typename S>
Var<S> mean(Var<S> x) {
    const std::size_t count = x.value().numel();
    return scale(sum(x), S(1) / static_cast<S>(count));
}

namespace detail {

inline void check_temperature(const char* op, double t) {
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError(std::string(op) + ": temperature must be positive, got " + std::to_string(t));
}

// Row-wise softmax(z / T) in double.
template <typename S>
std::vector<double> softmax_rows(const BasicTensor<S>& z, double t) {
    const auto [r, c] = rows_cols(z);
    std::vector<double> p(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const S* row = z.data.data() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]) / t);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += (p[i * c + j] = std::exp(static_cast<double>(row[j]) / t - mx));
        for (std::size_t j = 0; j < c; ++j) p[i * c + j] /= total;
    }
    return p;
}

}  // namespace detail

/// Row-wise softmax(logits / T), max-subtracted.
template <typename S>
Var<S> softmax(Var<S> logits, double temperature = 1.0) {
    detail::check_temperature("softmax", temperature);
    const auto& Z = logits.value();
    if (Z.rank() > 2) detail::shape_fail("softmax", "expects [N,C] or [C], got " + shape_str(Z.shape));
    const auto p = detail::softmax_rows(Z, temperature);
    BasicTensor<S> out(Z.shape, std::vector<S>(p.begin(), p.end()));
    return logits.graph->record(std::move(out), {logits}, [temperature](Graph<S>& g, std::size_t self) {
        auto* gz = g.input_grad(self, 0);
        if (!gz) return;
        const auto& Y = g.node_value(self);
        const auto& G = g.node_grad(self);
        const auto [r, c] = detail::rows_cols(Y);
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += static_cast<double>(G.data[i * c + j]) * Y.data[i * c + j];
            for (std::size_t j = 0; j < c; ++j) {
                const double y = Y.data[i * c + j];
                gz->data[i * c + j] += static_cast<S>(y * (G.data[i * c + j] - dot) / temperature);
            }
        }
    });
}

enum class Reduction { mean, sum };

/// Cross-entropy of softmax(logits / T) against integer labels.
template <typename S>
Var<S> cross_entropy(Var<S> logits, std::span<const int> labels, double temperature = 1.0,
                     Reduction reduction = Reduction::mean) {
    detail::check_temperature("cross_entropy", temperature);
    const auto& Z = logits.value();
    detail::require_rank("cross_entropy", Z, 2, "logits");
    const std::size_t n = Z.dim(0), c = Z.dim(1);
    if (labels.size() != n)
        detail::shape_fail("cross_entropy", "got " + std::to_string(labels.size()) + " labels for logits " + shape_str(Z.shape));
    const auto p = detail::softmax_rows(Z, temperature);
    const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
    double loss = 0.0;
    BasicTensor<S> dz(Z.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            detail::shape_fail("cross_entropy", "label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
        // log p_y = z_y/T - max - log(sum exp(z/T - max)), recomputed for accuracy at saturation
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(Z.data[i * c + j]) / temperature);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp(static_cast<double>(Z.data[i * c + j]) / temperature - mx);
        loss += mx + std::log(total) - static_cast<double>(Z.data[i * c + y]) / temperature;
        for (std::size_t j = 0; j < c; ++j) {
            const double target = static_cast<std::size_t>(y) == j ? 1.0 : 0.0;
            dz.data[i * c + j] = static_cast<S>((p[i * c + j] - target) * norm / temperature);
        }
    }
    return logits.graph->record(BasicTensor<S>::scalar(static_cast<S>(loss * norm)), {logits},
                                [dz = std::move(dz)](Graph<S>& g, std::size_t self) {
                                    detail::accumulate(g.input_grad(self, 0), dz, g.node_grad(self).data[0]);
                                });
}

/// Cross-entropy of softmax(logits / T) against soft target distributions [N,C].
template <typename S>
Var<S> soft_cross_entropy(Var<S> logits, const BasicTensor<S>& targets, double temperature = 1.0,
                          Reduction reduction = Reduction::mean) {
    detail::check_temperature("soft_cross_entropy", temperature);
    const auto& Z = logits.value();
    detail::require_rank("soft_cross_entropy", Z, 2, "logits");
    detail::require_same("soft_cross_entropy", Z, targets);
    const std::size_t n = Z.dim(0), c = Z.dim(1);
    const auto p = detail::softmax_rows(Z, temperature);
    const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
    double loss = 0.0;
    BasicTensor<S> dz(Z.shape);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(Z.data[i * c + j]) / temperature);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp(static_cast<double>(Z.data[i * c + j]) / temperature - mx);
        const double lse = mx + std::log(total);
        double mass = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double t = targets.data[i * c + j];
            mass += t;
            loss -= t * (static_cast<double>(Z.data[i * c + j]) / temperature - lse);
        }
        for (std::size_t j = 0; j < c; ++j)
            dz.data[i * c + j] =
                static_cast<S>((p[i * c + j] * mass - static_cast<double>(targets.data[i * c + j])) * norm / temperature);
    }
    return logits.graph->record(BasicTensor<S>::scalar(static_cast<S>(loss * norm)), {logits},
                                [dz = std::move(dz)](Graph<S>& g, std::size_t self) {
                                    detail::accumulate(g.input_grad(self, 0), dz, g.node_grad(self).data[0]);
                                });
}

}  // namespace fatsim::ad
