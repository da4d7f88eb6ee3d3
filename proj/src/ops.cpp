#include "hcvp/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace hcvp {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatR>;
using MutMap = Eigen::Map<MatR>;
using detail::Node;

ConstMap cmap(const std::vector<double>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return ConstMap(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap mmap(std::vector<double>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return MutMap(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
    }
}

bool needs(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }
std::vector<double>& grad_of(Node& self, std::size_t i) { return self.inputs[i]->ensure_grad(); }
const std::vector<double>& value_of(const Node& self, std::size_t i) { return self.inputs[i]->value; }

template <typename F>
Tensor unary(const Tensor& x, const char* op, F&& f, std::function<void(Node&)> backward) {
    std::vector<double> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return detail::make_result(x.shape(), std::move(out), {x}, op, std::move(backward));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
        throw DimensionError("add: cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
    }
    const std::size_t inner = b.numel();
    const std::size_t outer = a.numel() / inner;
    std::vector<double> out(a.data().begin(), a.data().end());
    auto bv = b.data();
    for (std::size_t o = 0; o < outer; ++o) {
        double* row = out.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) row[i] += bv[i];
    }
    return detail::make_result(sa, std::move(out), {a, b}, "add", [inner, outer](Node& self) {
        if (needs(self, 0)) {
            auto& ga = grad_of(self, 0);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (needs(self, 1)) {
            auto& gb = grad_of(self, 1);
            for (std::size_t o = 0; o < outer; ++o) {
                const double* row = self.grad.data() + o * inner;
                for (std::size_t i = 0; i < inner; ++i) gb[i] += row[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, "sub", [](Node& self) {
        if (needs(self, 0)) {
            auto& g = grad_of(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (needs(self, 1)) {
            auto& g = grad_of(self, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
        const auto& av = value_of(self, 0);
        const auto& bv = value_of(self, 1);
        if (needs(self, 0)) {
            auto& g = grad_of(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (needs(self, 1)) {
            auto& g = grad_of(self, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    std::vector<double> out(a.numel());
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, "div", [](Node& self) {
        const auto& bv = value_of(self, 1);
        if (needs(self, 0)) {
            auto& g = grad_of(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bv[i];
        }
        if (needs(self, 1)) {
            auto& g = grad_of(self, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / bv[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, "scale", [factor](double v) { return v * factor; }, [factor](Node& self) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor add_scalar(const Tensor& a, double offset) {
    return unary(a, "add_scalar", [offset](double v) { return v + offset; }, [](Node& self) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor relu(const Tensor& x) {
    return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](Node& self) {
        const auto& xv = value_of(self, 0);
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](Node& self) {
            constexpr double inv_sqrt_2pi = 0.39894228040143267794;
            const auto& xv = value_of(self, 0);
            auto& g = grad_of(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = xv[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                g[i] += self.grad[i] * (cdf + v * pdf);
            }
        });
}

Tensor exp(const Tensor& x) {
    return unary(x, "exp", [](double v) { return std::exp(v); }, [](Node& self) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
    });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
    }
    return unary(x, "log", [](double v) { return std::log(v); }, [](Node& self) {
        const auto& xv = value_of(self, 0);
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / xv[i];
    });
}

Tensor softmax(const Tensor& x) {
    if (x.rank() == 0) throw DimensionError("softmax: empty shape");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    std::vector<double> out(x.numel());
    auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = in.data() + r * n;
        double* dst = out.data() + r * n;
        const double mx = *std::max_element(src, src + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            dst[j] = std::exp(src[j] - mx);
            total += dst[j];
        }
        for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
    }
    return detail::make_result(x.shape(), std::move(out), {x}, "softmax", [n, rows](Node& self) {
        auto& g = grad_of(self, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * n;
            const double* dy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            double* dx = g.data() + r * n;
            for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
}

Tensor log_softmax(const Tensor& x, const std::vector<bool>& keep) {
    if (x.rank() == 0) throw DimensionError("log_softmax: empty shape");
    if (!keep.empty() && keep.size() != x.numel()) {
        throw DimensionError("log_softmax: mask length " + std::to_string(keep.size()) +
                             " does not match " + shape_str(x.shape()));
    }
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    auto kept = [&keep](std::size_t i) { return keep.empty() || keep[i]; };
    std::vector<double> out(x.numel(), 0.0);
    std::vector<double> probs(x.numel(), 0.0);
    auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (kept(r * n + j)) mx = std::max(mx, in[r * n + j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) {
            throw DimensionError("log_softmax: row " + std::to_string(r) + " has no kept entries");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (kept(r * n + j)) total += std::exp(in[r * n + j] - mx);
        }
        const double lse = mx + std::log(total);
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t i = r * n + j;
            if (kept(i)) {
                out[i] = in[i] - lse;
                probs[i] = std::exp(out[i]);
            }
        }
    }
    return detail::make_result(
        x.shape(), std::move(out), {x}, "log_softmax",
        [n, rows, keep, probs = std::move(probs)](Node& self) {
            auto& g = grad_of(self, 0);
            for (std::size_t r = 0; r < rows; ++r) {
                double total = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t i = r * n + j;
                    if (keep.empty() || keep[i]) total += self.grad[i];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t i = r * n + j;
                    if (keep.empty() || keep[i]) g[i] += self.grad[i] - probs[i] * total;
                }
            }
        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimensionError("layer_norm: gamma/beta width must be " + std::to_string(d) + ", got " +
                             shape_str(gamma.shape()) + "/" + shape_str(beta.shape()));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> rstd(rows);
    auto in = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = in.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += src[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            xhat[i] = (src[j] - mu) * rstd[r];
            out[i] = xhat[i] * gv[j] + bv[j];
        }
    }
    return detail::make_result(
        x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
        [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
            const auto& gv = value_of(self, 1);
            if (needs(self, 1) || needs(self, 2)) {
                std::vector<double> dg(d, 0.0), db(d, 0.0);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        const std::size_t i = r * d + j;
                        dg[j] += self.grad[i] * xhat[i];
                        db[j] += self.grad[i];
                    }
                }
                if (needs(self, 1)) {
                    auto& g = grad_of(self, 1);
                    for (std::size_t j = 0; j < d; ++j) g[j] += dg[j];
                }
                if (needs(self, 2)) {
                    auto& g = grad_of(self, 2);
                    for (std::size_t j = 0; j < d; ++j) g[j] += db[j];
                }
            }
            if (needs(self, 0)) {
                auto& gx = grad_of(self, 0);
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dxhat = 0.0;
                    double mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const std::size_t i = r * d + j;
                        const double dxh = self.grad[i] * gv[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[i];
                    }
                    mean_dxhat *= inv_d;
                    mean_dxhat_xhat *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const std::size_t i = r * d + j;
                        const double dxh = self.grad[i] * gv[j];
                        gx[i] += rstd[r] * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
                    }
                }
            }
        });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
    require_rank(x, 2, "l2_normalize_rows");
    const std::size_t n = x.dim(0);
    const std::size_t d = x.dim(1);
    std::vector<double> out(x.numel());
    std::vector<double> norms(n);
    auto in = x.data();
    for (std::size_t r = 0; r < n; ++r) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += in[r * d + j] * in[r * d + j];
        norms[r] = std::max(std::sqrt(sq), eps);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[r * d + j] / norms[r];
    }
    return detail::make_result(
        x.shape(), std::move(out), {x}, "l2_normalize_rows",
        [n, d, eps, norms = std::move(norms)](Node& self) {
            auto& g = grad_of(self, 0);
            for (std::size_t r = 0; r < n; ++r) {
                const double* y = self.value.data() + r * d;
                const double* dy = self.grad.data() + r * d;
                double* dx = g.data() + r * d;
                if (norms[r] <= eps) {
                    for (std::size_t j = 0; j < d; ++j) dx[j] += dy[j] / norms[r];
                    continue;
                }
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
                for (std::size_t j = 0; j < d; ++j) dx[j] += (dy[j] - y[j] * dot) / norms[r];
            }
        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    mmap(out, m, n).noalias() = cmap(av, m, k) * cmap(bv, k, n);
    return detail::make_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
        auto dc = cmap(self.grad, m, n);
        if (needs(self, 0)) mmap(grad_of(self, 0), m, k).noalias() += dc * cmap(value_of(self, 1), k, n).transpose();
        if (needs(self, 1)) mmap(grad_of(self, 1), k, n).noalias() += cmap(value_of(self, 0), m, k).transpose() * dc;
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    if (b.dim(0) != g || bk != k) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             (transpose_b ? " (b transposed)" : ""));
    }
    std::vector<double> out(g * m * n);
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < g; ++i) {
        auto dst = mmap(out, m, n, i * m * n);
        auto lhs = cmap(av, m, k, i * m * k);
        if (transpose_b) {
            dst.noalias() = lhs * cmap(bv, n, k, i * n * k).transpose();
        } else {
            dst.noalias() = lhs * cmap(bv, k, n, i * k * n);
        }
    }
    return detail::make_result({g, m, n}, std::move(out), {a, b}, "bmm", [g, m, k, n, transpose_b](Node& self) {
        const auto& av = value_of(self, 0);
        const auto& bv = value_of(self, 1);
        for (std::size_t i = 0; i < g; ++i) {
            auto dc = cmap(self.grad, m, n, i * m * n);
            if (needs(self, 0)) {
                auto ga = mmap(grad_of(self, 0), m, k, i * m * k);
                if (transpose_b) {
                    ga.noalias() += dc * cmap(bv, n, k, i * n * k);
                } else {
                    ga.noalias() += dc * cmap(bv, k, n, i * k * n).transpose();
                }
            }
            if (needs(self, 1)) {
                auto lhs = cmap(av, m, k, i * m * k);
                if (transpose_b) {
                    mmap(grad_of(self, 1), n, k, i * n * k).noalias() += dc.transpose() * lhs;
                } else {
                    mmap(grad_of(self, 1), k, n, i * k * n).noalias() += lhs.transpose() * dc;
                }
            }
        }
    });
}

Tensor multi_head_attention(const Tensor& qkv, std::size_t heads, Tensor* weights) {
    require_rank(qkv, 3, "multi_head_attention");
    if (heads == 0 || qkv.dim(2) % (3 * heads) != 0) {
        throw DimensionError("multi_head_attention: last axis of " + shape_str(qkv.shape()) +
                             " is not 3 x heads x head_dim for " + std::to_string(heads) + " heads");
    }
    using Strided = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;
    using MutStrided = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
    const std::size_t b = qkv.dim(0), t = qkv.dim(1), d = qkv.dim(2) / 3, dh = d / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto ti = static_cast<Eigen::Index>(t), dhi = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(3 * d));
    const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));

    const auto& in = qkv.node()->value;
    std::vector<double> out(b * t * d);
    std::vector<double> probs(b * heads * t * t);
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t h = 0; h < heads; ++h) {
            const double* base = in.data() + n * t * 3 * d + h * dh;
            Strided q(base, ti, dhi, in_stride), k(base + d, ti, dhi, in_stride), v(base + 2 * d, ti, dhi, in_stride);
            auto a = mmap(probs, t, t, (n * heads + h) * t * t);
            a.noalias() = (q * k.transpose()) * scale_factor;
            for (std::size_t r = 0; r < t; ++r) {
                double* row = a.data() + r * t;
                const double mx = *std::max_element(row, row + t);
                double total = 0.0;
                for (std::size_t c = 0; c < t; ++c) total += (row[c] = std::exp(row[c] - mx));
                for (std::size_t c = 0; c < t; ++c) row[c] /= total;
            }
            MutStrided(out.data() + n * t * d + h * dh, ti, dhi, out_stride).noalias() = a * v;
        }
    }
    if (weights) *weights = Tensor::from({b * heads, t, t}, probs);
    return detail::make_result(
        {b, t, d}, std::move(out), {qkv}, "multi_head_attention",
        [=, probs = std::move(probs)](Node& self) {
            const auto& in = value_of(self, 0);
            auto& g = grad_of(self, 0);
            MatR d_attn(ti, ti);
            for (std::size_t n = 0; n < b; ++n) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = n * t * 3 * d + h * dh;
                    Strided q(in.data() + off, ti, dhi, in_stride), k(in.data() + off + d, ti, dhi, in_stride),
                        v(in.data() + off + 2 * d, ti, dhi, in_stride);
                    MutStrided gq(g.data() + off, ti, dhi, in_stride), gk(g.data() + off + d, ti, dhi, in_stride),
                        gv(g.data() + off + 2 * d, ti, dhi, in_stride);
                    Strided dy(self.grad.data() + n * t * d + h * dh, ti, dhi, out_stride);
                    auto a = cmap(probs, t, t, (n * heads + h) * t * t);
                    gv.noalias() += a.transpose() * dy;
                    d_attn.noalias() = dy * v.transpose();
                    // softmax backward, then the 1/sqrt(dh) scale
                    for (std::size_t r = 0; r < t; ++r) {
                        double* dr = d_attn.data() + r * t;
                        const double* ar = a.data() + r * t;
                        double dot = 0.0;
                        for (std::size_t c = 0; c < t; ++c) dot += dr[c] * ar[c];
                        for (std::size_t c = 0; c < t; ++c) dr[c] = ar[c] * (dr[c] - dot) * scale_factor;
                    }
                    gq.noalias() += d_attn * k;
                    gk.noalias() += d_attn.transpose() * q;
                }
            }
        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "linear");
    const std::size_t in = weight.dim(0), outw = weight.dim(1);
    if (x.shape().back() != in || bias.numel() != outw) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
    }
    const std::size_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outw;
    std::vector<double> out(rows * outw);
    auto dst = mmap(out, rows, outw);
    dst.noalias() = cmap(x.node()->value, rows, in) * cmap(weight.node()->value, in, outw);
    dst.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), static_cast<Eigen::Index>(outw));
    return detail::make_result(std::move(out_shape), std::move(out), {x, weight, bias}, "linear",
                               [rows, in, outw](Node& self) {
                                   auto dy = cmap(self.grad, rows, outw);
                                   if (needs(self, 0)) {
                                       mmap(grad_of(self, 0), rows, in).noalias() +=
                                           dy * cmap(value_of(self, 1), in, outw).transpose();
                                   }
                                   if (needs(self, 1)) {
                                       mmap(grad_of(self, 1), in, outw).noalias() +=
                                           cmap(value_of(self, 0), rows, in).transpose() * dy;
                                   }
                                   if (needs(self, 2)) {
                                       auto& gb = grad_of(self, 2);
                                       for (std::size_t r = 0; r < rows; ++r) {
                                           const double* row = self.grad.data() + r * outw;
                                           for (std::size_t c = 0; c < outw; ++c) gb[c] += row[c];
                                       }
                                   }
                               });
}

namespace {

struct ConvGeom {
    std::size_t batch, in_c, h, w, out_c, kh, kw, stride, pad, oh, ow;

    std::size_t patch() const { return in_c * kh * kw; }
    std::size_t area() const { return oh * ow; }
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    require_rank(input, 4, "conv2d");
    require_rank(kernel, 4, "conv2d");
    if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
    ConvGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
               kernel.dim(3), stride, padding, 0, 0};
    if (kernel.dim(1) != g.in_c) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                             std::to_string(kernel.dim(1)) + " channels, input " + shape_str(input.shape()) +
                             " has " + std::to_string(g.in_c));
    }
    if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                             shape_str(input.shape()) + " with padding " + std::to_string(padding));
    }
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
    return g;
}

// Calls f(row, col, input_offset) for every in-bounds entry of the
// [c*kh*kw x oh*ow] patch matrix of one sample.
template <typename F>
void for_each_patch_entry(const ConvGeom& g, F&& f) {
    for (std::size_t c = 0; c < g.in_c; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const std::size_t row = (c * g.kh + ky) * g.kw + kx;
                for (std::size_t y = 0; y < g.oh; ++y) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(y * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t x = 0; x < g.ow; ++x) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(x * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        f(row, y * g.ow + x,
                          (c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix));
                    }
                }
            }
        }
    }
}

void im2col(const ConvGeom& g, const double* sample, std::vector<double>& cols) {
    const std::size_t area = g.area();
    cols.assign(g.patch() * area, 0.0);
    for_each_patch_entry(g, [&](std::size_t r, std::size_t c, std::size_t i) { cols[r * area + c] = sample[i]; });
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    const ConvGeom g = conv_geometry(input, kernel, stride, padding);
    const std::size_t area = g.area(), patch = g.patch();
    const std::size_t in_size = g.in_c * g.h * g.w, out_size = g.out_c * area;
    std::vector<double> out(g.batch * out_size);
    const auto& iv = input.node()->value;
    auto weights = cmap(kernel.node()->value, g.out_c, patch);
    std::vector<double> cols;
    for (std::size_t n = 0; n < g.batch; ++n) {
        im2col(g, iv.data() + n * in_size, cols);
        mmap(out, g.out_c, area, n * out_size).noalias() = weights * cmap(cols, patch, area);
    }
    return detail::make_result(
        {g.batch, g.out_c, g.oh, g.ow}, std::move(out), {input, kernel}, "conv2d",
        [g, area, patch, in_size, out_size](Node& self) {
            const auto& iv = value_of(self, 0);
            auto weights = cmap(value_of(self, 1), g.out_c, patch);
            std::vector<double> cols;
            std::vector<double> dcols(patch * area);
            for (std::size_t n = 0; n < g.batch; ++n) {
                auto dy = cmap(self.grad, g.out_c, area, n * out_size);
                if (needs(self, 1)) {
                    im2col(g, iv.data() + n * in_size, cols);
                    mmap(grad_of(self, 1), g.out_c, patch).noalias() += dy * cmap(cols, patch, area).transpose();
                }
                if (needs(self, 0)) {
                    mmap(dcols, patch, area).noalias() = weights.transpose() * dy;
                    double* gi = grad_of(self, 0).data() + n * in_size;
                    for_each_patch_entry(g, [&](std::size_t r, std::size_t c, std::size_t i) {
                        gi[i] += dcols[r * area + c];
                    });
                }
            }
        });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    Tensor y = conv2d(input, kernel, stride, padding);
    const std::size_t channels = y.dim(1);
    if (bias.numel() != channels) {
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(channels) + " output channels");
    }
    const std::size_t batch = y.dim(0);
    const std::size_t area = y.dim(2) * y.dim(3);
    std::vector<double> out(y.data().begin(), y.data().end());
    auto bv = bias.data();
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            double* dst = out.data() + (n * channels + c) * area;
            for (std::size_t j = 0; j < area; ++j) dst[j] += bv[c];
        }
    }
    return detail::make_result(y.shape(), std::move(out), {y, bias}, "conv2d_bias",
                               [batch, channels, area](Node& self) {
                                   if (needs(self, 0)) {
                                       auto& g = grad_of(self, 0);
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                   }
                                   if (needs(self, 1)) {
                                       auto& g = grad_of(self, 1);
                                       for (std::size_t n = 0; n < batch; ++n) {
                                           for (std::size_t c = 0; c < channels; ++c) {
                                               const double* src = self.grad.data() + (n * channels + c) * area;
                                               for (std::size_t j = 0; j < area; ++j) g[c] += src[j];
                                           }
                                       }
                                   }
                               });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool");
    const std::size_t rows = x.dim(0) * x.dim(1);
    const std::size_t area = x.dim(2) * x.dim(3);
    std::vector<double> out(rows, 0.0);
    auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < area; ++j) s += in[r * area + j];
        out[r] = s / static_cast<double>(area);
    }
    return detail::make_result({x.dim(0), x.dim(1)}, std::move(out), {x}, "global_avg_pool",
                               [rows, area](Node& self) {
                                   auto& g = grad_of(self, 0);
                                   const double inv = 1.0 / static_cast<double>(area);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t j = 0; j < area; ++j) g[r * area + j] += self.grad[r] * inv;
                                   }
                               });
}

Tensor spatial_broadcast(const Tensor& x, std::size_t height, std::size_t width) {
    require_rank(x, 2, "spatial_broadcast");
    if (height == 0 || width == 0) throw DimensionError("spatial_broadcast: zero-sized target");
    const std::size_t rows = x.numel();
    const std::size_t area = height * width;
    std::vector<double> out(rows * area);
    auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(r * area), area, in[r]);
    return detail::make_result({x.dim(0), x.dim(1), height, width}, std::move(out), {x}, "spatial_broadcast",
                               [rows, area](Node& self) {
                                   auto& g = grad_of(self, 0);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       double s = 0.0;
                                       for (std::size_t j = 0; j < area; ++j) s += self.grad[r * area + j];
                                       g[r] += s;
                                   }
                               });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    std::size_t trailing = 1;
    for (std::size_t i = axis + 1; i < first.size(); ++i) trailing *= first[i];
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
        if (!ok) {
            throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                                 " along axis " + std::to_string(axis));
        }
        out_shape[axis] += s[axis];
        widths.push_back(s[axis] * trailing);
    }
    const std::size_t total_width = out_shape[axis] * trailing;
    std::vector<double> out(outer * total_width);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto src = parts[p].data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[p]), widths[p],
                        out.begin() + static_cast<std::ptrdiff_t>(o * total_width + offset));
        }
        offset += widths[p];
    }
    return detail::make_result(std::move(out_shape), std::move(out), parts, "concat",
                               [outer, total_width, widths](Node& self) {
                                   std::size_t offset = 0;
                                   for (std::size_t p = 0; p < widths.size(); ++p) {
                                       if (needs(self, p)) {
                                           auto& g = grad_of(self, p);
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               const double* src = self.grad.data() + o * total_width + offset;
                                               double* dst = g.data() + o * widths[p];
                                               for (std::size_t j = 0; j < widths[p]; ++j) dst[j] += src[j];
                                           }
                                       }
                                       offset += widths[p];
                                   }
                               });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    for (auto d : shape) {
        if (d == 0) throw DimensionError("reshape: zero dimension in " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return detail::make_result(std::move(shape), std::move(out), {x}, "reshape", [](Node& self) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const Shape& in_shape = x.shape();
    const std::size_t r = in_shape.size();
    if (axes.size() != r) throw DimensionError("permute: axis list length mismatch for " + shape_str(in_shape));
    std::vector<bool> used(r, false);
    for (auto a : axes) {
        if (a >= r || used[a]) throw DimensionError("permute: invalid axis list for " + shape_str(in_shape));
        used[a] = true;
    }
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
    const std::size_t n = x.numel();
    std::vector<std::size_t> source(n);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[axes[i]];
        source[flat] = src;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<double> out(n);
    auto in = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = in[source[i]];
    return detail::make_result(std::move(out_shape), std::move(out), {x}, "permute",
                               [source = std::move(source)](Node& self) {
                                   auto& g = grad_of(self, 0);
                                   for (std::size_t i = 0; i < source.size(); ++i) g[source[i]] += self.grad[i];
                               });
}

Tensor transpose(const Tensor& x) {
    require_rank(x, 2, "transpose");
    return permute(x, {1, 0});
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& s = x.shape();
    if (axis >= s.size()) {
        throw DimensionError("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    if (length == 0 || start + length > s[axis]) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") invalid for axis of size " + std::to_string(s[axis]));
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    std::size_t trailing = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) trailing *= s[i];
    const std::size_t in_width = s[axis] * trailing;
    const std::size_t out_width = length * trailing;
    const std::size_t offset = start * trailing;
    Shape out_shape = s;
    out_shape[axis] = length;
    std::vector<double> out(outer * out_width);
    auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * in_width + offset), out_width,
                    out.begin() + static_cast<std::ptrdiff_t>(o * out_width));
    }
    return detail::make_result(std::move(out_shape), std::move(out), {x}, "slice",
                               [outer, in_width, out_width, offset](Node& self) {
                                   auto& g = grad_of(self, 0);
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       for (std::size_t j = 0; j < out_width; ++j) {
                                           g[o * in_width + offset + j] += self.grad[o * out_width + j];
                                       }
                                   }
                               });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "row_dot");
    require_same_shape(a, b, "row_dot");
    const std::size_t n = a.dim(0), d = a.dim(1);
    std::vector<double> out(n, 0.0);
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) out[r] += av[r * d + j] * bv[r * d + j];
    }
    return detail::make_result({n}, std::move(out), {a, b}, "row_dot", [n, d](Node& self) {
        const auto& av = value_of(self, 0);
        const auto& bv = value_of(self, 1);
        for (std::size_t r = 0; r < n; ++r) {
            const double dy = self.grad[r];
            if (needs(self, 0)) {
                auto& g = grad_of(self, 0);
                for (std::size_t j = 0; j < d; ++j) g[r * d + j] += dy * bv[r * d + j];
            }
            if (needs(self, 1)) {
                auto& g = grad_of(self, 1);
                for (std::size_t j = 0; j < d; ++j) g[r * d + j] += dy * av[r * d + j];
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    auto in = x.data();
    const double total = std::accumulate(in.begin(), in.end(), 0.0);
    return detail::make_result({1}, {total}, {x}, "sum", [](Node& self) {
        auto& g = grad_of(self, 0);
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) {
        throw DimensionError("sum_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out_shape.push_back(s[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<double> out(outer * inner, 0.0);
    auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * n + k) * inner + i];
        }
    }
    return detail::make_result(std::move(out_shape), std::move(out), {x}, "sum_axis",
                               [outer, n, inner](Node& self) {
                                   auto& g = grad_of(self, 0);
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       for (std::size_t k = 0; k < n; ++k) {
                                           for (std::size_t i = 0; i < inner; ++i) {
                                               g[(o * n + k) * inner + i] += self.grad[o * inner + i];
                                           }
                                       }
                                   }
                               });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
    Tensor s = sum_axis(x, axis);
    return scale(s, 1.0 / static_cast<double>(x.dim(axis)));
}

} // namespace hcvp
