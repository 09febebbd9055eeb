#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <tuple>
#include <vector>

#include "fcbswin/tensor.hpp"

namespace fcbswin {

/// Reverse-mode autodiff over Tensor<T>. Ops append nodes in topological
/// order; backward() walks them in reverse. Gradients are allocated lazily
/// so forward-only use (inference) carries no gradient memory.
template <typename T>
class Tape {
public:
    struct Var {
        int32_t id = -1;
    };

    using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map = Eigen::Map<EigenMat>;
    using CMap = Eigen::Map<const EigenMat>;

    Var leaf(Tensor<T> value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, nullptr);
    }

    const Tensor<T>& val(Var v) const { return nodes_[v.id].value; }

    /// Gradient of v; zeros until backward() has touched it.
    Tensor<T>& grad(Var v) { return acc(v.id); }

    bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

    void backward(Var loss) {
        check(nodes_[loss.id].value.numel() == 1, "backward() needs a scalar loss");
        acc(loss.id).data[0] = T(1);
        for (int32_t i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.back && !n.grad.empty()) n.back(*this, i);
        }
    }

    size_t size() const { return nodes_.size(); }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& y = val(b);
        check(x.shape == y.shape, "add: shape mismatch");
        Tensor<T> out = x;
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += y[i];
        return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            if (t.needs(a)) t.add_into(a, g);
            if (t.needs(b)) t.add_into(b, g);
        });
    }

    Var mul(Var a, Var b) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& y = val(b);
        check(x.shape == y.shape, "mul: shape mismatch");
        Tensor<T> out = x;
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= y[i];
        return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            if (t.needs(a)) {
                Tensor<T>& ga = t.acc(a.id);
                const Tensor<T>& y = t.val(b);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
            }
            if (t.needs(b)) {
                Tensor<T>& gb = t.acc(b.id);
                const Tensor<T>& x = t.val(a);
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * x[i];
            }
        });
    }

    Var scale(Var a, T c) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v *= c;
        return push(std::move(out), needs(a), [a, c](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            Tensor<T>& ga = t.acc(a.id);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
        });
    }

    Var relu(Var a) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = v > T(0) ? v : T(0);
        return push(std::move(out), needs(a), [a](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            const Tensor<T>& x = t.val(a);
            Tensor<T>& ga = t.acc(a.id);
            for (int64_t i = 0; i < g.numel(); ++i)
                if (x[i] > T(0)) ga[i] += g[i];
        });
    }

    // exact (erf) GELU
    Var gelu(Var a) {
        static const T inv_sqrt2 = T(0.7071067811865475);
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
        return push(std::move(out), needs(a), [a](Tape& t, int32_t self) {
            static const T inv_sqrt2pi = T(0.3989422804014327);
            const Tensor<T>& g = t.nodes_[self].grad;
            const Tensor<T>& x = t.val(a);
            Tensor<T>& ga = t.acc(a.id);
            for (int64_t i = 0; i < g.numel(); ++i) {
                T xi = x[i];
                T cdf = T(0.5) * (T(1) + std::erf(xi * inv_sqrt2));
                T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xi * xi);
                ga[i] += g[i] * (cdf + xi * pdf);
            }
        });
    }

    Var sigmoid(Var a) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
        Var r = push(std::move(out), needs(a), [a](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            const Tensor<T>& y = t.nodes_[self].value;
            Tensor<T>& ga = t.acc(a.id);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
        });
        return r;
    }

    // ---- linear algebra ----

    /// x: [..., K] @ w: [K, N] -> [..., N]
    Var matmul(Var a, Var w) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& wt = val(w);
        check(wt.rank() == 2 && x.rank() >= 1, "matmul: bad ranks");
        int64_t K = wt.dim(0), N = wt.dim(1);
        check(x.shape.back() == K, "matmul: inner dim mismatch");
        int64_t M = x.numel() / K;
        Shape out_shape = x.shape;
        out_shape.back() = N;
        Tensor<T> out(out_shape);
        CMap X(x.data.data(), M, K), W(wt.data.data(), K, N);
        Map(out.data.data(), M, N).noalias() = X * W;
        return push(std::move(out), needs(a) || needs(w), [a, w, M, K, N](Tape& t, int32_t self) {
            CMap G(t.nodes_[self].grad.data.data(), M, N);
            if (t.needs(a)) {
                CMap W(t.val(w).data.data(), K, N);
                Map(t.acc(a.id).data.data(), M, K).noalias() += G * W.transpose();
            }
            if (t.needs(w)) {
                CMap X(t.val(a).data.data(), M, K);
                Map(t.acc(w.id).data.data(), K, N).noalias() += X.transpose() * G;
            }
        });
    }

    /// x: [..., F] + b: [F]
    Var add_bias(Var a, Var b) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& bias = val(b);
        int64_t F = bias.numel();
        check(x.shape.back() == F, "add_bias: dim mismatch");
        Tensor<T> out = x;
        int64_t rows = x.numel() / F;
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t f = 0; f < F; ++f) out[r * F + f] += bias[f];
        return push(std::move(out), needs(a) || needs(b), [a, b, F](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            if (t.needs(a)) t.add_into(a, g);
            if (t.needs(b)) {
                Tensor<T>& gb = t.acc(b.id);
                int64_t rows = g.numel() / F;
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t f = 0; f < F; ++f) gb[f] += g[r * F + f];
            }
        });
    }

    /// a: [B, M, K] @ b: [B, K, N] (or [B, N, K] with transpose_b) -> [B, M, N]
    Var bmm(Var a, Var b, bool transpose_b = false) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& y = val(b);
        check(x.rank() == 3 && y.rank() == 3 && x.dim(0) == y.dim(0), "bmm: bad shapes");
        int64_t B = x.dim(0), M = x.dim(1), K = x.dim(2);
        int64_t N = transpose_b ? y.dim(1) : y.dim(2);
        check((transpose_b ? y.dim(2) : y.dim(1)) == K, "bmm: inner dim mismatch");
        Tensor<T> out({B, M, N});
        for (int64_t i = 0; i < B; ++i) {
            CMap X(x.data.data() + i * M * K, M, K);
            Map O(out.data.data() + i * M * N, M, N);
            if (transpose_b) {
                CMap Y(y.data.data() + i * N * K, N, K);
                O.noalias() = X * Y.transpose();
            } else {
                CMap Y(y.data.data() + i * K * N, K, N);
                O.noalias() = X * Y;
            }
        }
        return push(std::move(out), needs(a) || needs(b),
                    [a, b, B, M, K, N, transpose_b](Tape& t, int32_t self) {
                        const Tensor<T>& g = t.nodes_[self].grad;
                        const Tensor<T>& x = t.val(a);
                        const Tensor<T>& y = t.val(b);
                        for (int64_t i = 0; i < B; ++i) {
                            CMap G(g.data.data() + i * M * N, M, N);
                            CMap X(x.data.data() + i * M * K, M, K);
                            if (transpose_b) {
                                CMap Y(y.data.data() + i * N * K, N, K);
                                if (t.needs(a))
                                    Map(t.acc(a.id).data.data() + i * M * K, M, K).noalias() += G * Y;
                                if (t.needs(b))
                                    Map(t.acc(b.id).data.data() + i * N * K, N, K).noalias() +=
                                        G.transpose() * X;
                            } else {
                                CMap Y(y.data.data() + i * K * N, K, N);
                                if (t.needs(a))
                                    Map(t.acc(a.id).data.data() + i * M * K, M, K).noalias() +=
                                        G * Y.transpose();
                                if (t.needs(b))
                                    Map(t.acc(b.id).data.data() + i * K * N, K, N).noalias() +=
                                        X.transpose() * G;
                            }
                        }
                    });
    }

    // ---- shape ops ----

    Var reshape(Var a, Shape s) {
        Tensor<T> out = val(a).reshaped(std::move(s));
        return push(std::move(out), needs(a), [a](Tape& t, int32_t self) {
            t.add_into(a, t.nodes_[self].grad);
        });
    }

    /// out[i] = x[map[i]]; the workhorse behind window partition/reverse,
    /// cyclic shifts, head splits and patch flattening.
    Var remap(Var a, Shape out_shape, std::shared_ptr<const std::vector<int64_t>> map) {
        const Tensor<T>& x = val(a);
        Tensor<T> out(std::move(out_shape));
        check(static_cast<int64_t>(map->size()) == out.numel(), "remap: map size mismatch");
        const auto& m = *map;
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[m[i]];
        return push(std::move(out), needs(a), [a, map](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            Tensor<T>& ga = t.acc(a.id);
            const auto& m = *map;
            for (int64_t i = 0; i < g.numel(); ++i) ga[m[i]] += g[i];
        });
    }

    // ---- normalization & softmax ----

    Var softmax_last(Var a) {
        const Tensor<T>& x = val(a);
        int64_t F = x.shape.back();
        int64_t rows = x.numel() / F;
        Tensor<T> out = x;
        for (int64_t r = 0; r < rows; ++r) {
            T* p = out.data.data() + r * F;
            T mx = p[0];
            for (int64_t f = 1; f < F; ++f) mx = std::max(mx, p[f]);
            T sum = 0;
            for (int64_t f = 0; f < F; ++f) {
                p[f] = std::exp(p[f] - mx);
                sum += p[f];
            }
            for (int64_t f = 0; f < F; ++f) p[f] /= sum;
        }
        return push(std::move(out), needs(a), [a, F](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            const Tensor<T>& y = t.nodes_[self].value;
            Tensor<T>& ga = t.acc(a.id);
            int64_t rows = g.numel() / F;
            for (int64_t r = 0; r < rows; ++r) {
                const T* gp = g.data.data() + r * F;
                const T* yp = y.data.data() + r * F;
                T dot = 0;
                for (int64_t f = 0; f < F; ++f) dot += gp[f] * yp[f];
                T* gap = ga.data.data() + r * F;
                for (int64_t f = 0; f < F; ++f) gap[f] += yp[f] * (gp[f] - dot);
            }
        });
    }

    /// Row-wise L2 normalization over the last dim (cosine attention).
    Var l2norm_last(Var a, T eps = T(1e-12)) {
        const Tensor<T>& x = val(a);
        int64_t F = x.shape.back();
        int64_t rows = x.numel() / F;
        Tensor<T> out = x;
        for (int64_t r = 0; r < rows; ++r) {
            T* p = out.data.data() + r * F;
            T ss = 0;
            for (int64_t f = 0; f < F; ++f) ss += p[f] * p[f];
            T n = std::sqrt(ss + eps);
            for (int64_t f = 0; f < F; ++f) p[f] /= n;
        }
        return push(std::move(out), needs(a), [a, F, eps](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            const Tensor<T>& x = t.val(a);
            Tensor<T>& ga = t.acc(a.id);
            int64_t rows = g.numel() / F;
            for (int64_t r = 0; r < rows; ++r) {
                const T* gp = g.data.data() + r * F;
                const T* xp = x.data.data() + r * F;
                T ss = 0, dot = 0;
                for (int64_t f = 0; f < F; ++f) {
                    ss += xp[f] * xp[f];
                    dot += gp[f] * xp[f];
                }
                T n = std::sqrt(ss + eps);
                T n3 = n * n * n;
                T* gap = ga.data.data() + r * F;
                for (int64_t f = 0; f < F; ++f) gap[f] += gp[f] / n - xp[f] * dot / n3;
            }
        });
    }

    /// LayerNorm over the last dim with affine (gamma, beta): [F].
    Var layernorm(Var a, Var gamma, Var beta, T eps = T(1e-5)) {
        const Tensor<T>& x = val(a);
        int64_t F = x.shape.back();
        check(val(gamma).numel() == F && val(beta).numel() == F, "layernorm: affine dim mismatch");
        int64_t rows = x.numel() / F;
        Tensor<T> out(x.shape);
        auto stats = std::make_shared<std::vector<T>>(rows * 2);  // mean, inv_std per row
        const Tensor<T>& gm = val(gamma);
        const Tensor<T>& bt = val(beta);
        for (int64_t r = 0; r < rows; ++r) {
            const T* xp = x.data.data() + r * F;
            T mean = 0;
            for (int64_t f = 0; f < F; ++f) mean += xp[f];
            mean /= T(F);
            T var = 0;
            for (int64_t f = 0; f < F; ++f) var += (xp[f] - mean) * (xp[f] - mean);
            var /= T(F);
            T inv_std = T(1) / std::sqrt(var + eps);
            (*stats)[2 * r] = mean;
            (*stats)[2 * r + 1] = inv_std;
            T* op = out.data.data() + r * F;
            for (int64_t f = 0; f < F; ++f) op[f] = (xp[f] - mean) * inv_std * gm[f] + bt[f];
        }
        return push(std::move(out), needs(a) || needs(gamma) || needs(beta),
                    [a, gamma, beta, F, stats](Tape& t, int32_t self) {
                        const Tensor<T>& g = t.nodes_[self].grad;
                        const Tensor<T>& x = t.val(a);
                        const Tensor<T>& gm = t.val(gamma);
                        int64_t rows = g.numel() / F;
                        for (int64_t r = 0; r < rows; ++r) {
                            const T* gp = g.data.data() + r * F;
                            const T* xp = x.data.data() + r * F;
                            T mean = (*stats)[2 * r], inv_std = (*stats)[2 * r + 1];
                            if (t.needs(gamma)) {
                                Tensor<T>& gg = t.acc(gamma.id);
                                for (int64_t f = 0; f < F; ++f)
                                    gg[f] += gp[f] * (xp[f] - mean) * inv_std;
                            }
                            if (t.needs(beta)) {
                                Tensor<T>& gb = t.acc(beta.id);
                                for (int64_t f = 0; f < F; ++f) gb[f] += gp[f];
                            }
                            if (t.needs(a)) {
                                T mg = 0, mgx = 0;
                                for (int64_t f = 0; f < F; ++f) {
                                    T gi = gp[f] * gm[f];
                                    T xh = (xp[f] - mean) * inv_std;
                                    mg += gi;
                                    mgx += gi * xh;
                                }
                                mg /= T(F);
                                mgx /= T(F);
                                Tensor<T>& ga = t.acc(a.id);
                                T* gap = ga.data.data() + r * F;
                                for (int64_t f = 0; f < F; ++f) {
                                    T gi = gp[f] * gm[f];
                                    T xh = (xp[f] - mean) * inv_std;
                                    gap[f] += inv_std * (gi - mg - xh * mgx);
                                }
                            }
                        }
                    });
    }

    /// GroupNorm over [B,C,H,W] with per-channel affine.
    Var groupnorm(Var a, Var gamma, Var beta, int64_t groups, T eps = T(1e-5)) {
        const Tensor<T>& x = val(a);
        check(x.rank() == 4, "groupnorm: expects NCHW");
        int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        check(C % groups == 0, "groupnorm: channels not divisible by groups");
        int64_t cpg = C / groups;
        int64_t gsz = cpg * HW;
        Tensor<T> out(x.shape);
        auto stats = std::make_shared<std::vector<T>>(B * groups * 2);
        const Tensor<T>& gm = val(gamma);
        const Tensor<T>& bt = val(beta);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t gr = 0; gr < groups; ++gr) {
                const T* xp = x.data.data() + (b * C + gr * cpg) * HW;
                T mean = 0;
                for (int64_t i = 0; i < gsz; ++i) mean += xp[i];
                mean /= T(gsz);
                T var = 0;
                for (int64_t i = 0; i < gsz; ++i) var += (xp[i] - mean) * (xp[i] - mean);
                var /= T(gsz);
                T inv_std = T(1) / std::sqrt(var + eps);
                (*stats)[(b * groups + gr) * 2] = mean;
                (*stats)[(b * groups + gr) * 2 + 1] = inv_std;
                T* op = out.data.data() + (b * C + gr * cpg) * HW;
                for (int64_t c = 0; c < cpg; ++c) {
                    T gma = gm[gr * cpg + c], bta = bt[gr * cpg + c];
                    for (int64_t i = 0; i < HW; ++i)
                        op[c * HW + i] = (xp[c * HW + i] - mean) * inv_std * gma + bta;
                }
            }
        return push(
            std::move(out), needs(a) || needs(gamma) || needs(beta),
            [a, gamma, beta, groups, B, C, HW, stats](Tape& t, int32_t self) {
                int64_t cpg = C / groups;
                int64_t gsz = cpg * HW;
                const Tensor<T>& g = t.nodes_[self].grad;
                const Tensor<T>& x = t.val(a);
                const Tensor<T>& gm = t.val(gamma);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t gr = 0; gr < groups; ++gr) {
                        const T* gp = g.data.data() + (b * C + gr * cpg) * HW;
                        const T* xp = x.data.data() + (b * C + gr * cpg) * HW;
                        T mean = (*stats)[(b * groups + gr) * 2];
                        T inv_std = (*stats)[(b * groups + gr) * 2 + 1];
                        if (t.needs(gamma) || t.needs(beta)) {
                            for (int64_t c = 0; c < cpg; ++c) {
                                T sg = 0, sgx = 0;
                                for (int64_t i = 0; i < HW; ++i) {
                                    sg += gp[c * HW + i];
                                    sgx += gp[c * HW + i] * (xp[c * HW + i] - mean) * inv_std;
                                }
                                if (t.needs(beta)) t.acc(beta.id)[gr * cpg + c] += sg;
                                if (t.needs(gamma)) t.acc(gamma.id)[gr * cpg + c] += sgx;
                            }
                        }
                        if (t.needs(a)) {
                            T mg = 0, mgx = 0;
                            for (int64_t c = 0; c < cpg; ++c) {
                                T gma = gm[gr * cpg + c];
                                for (int64_t i = 0; i < HW; ++i) {
                                    T gi = gp[c * HW + i] * gma;
                                    T xh = (xp[c * HW + i] - mean) * inv_std;
                                    mg += gi;
                                    mgx += gi * xh;
                                }
                            }
                            mg /= T(gsz);
                            mgx /= T(gsz);
                            Tensor<T>& ga = t.acc(a.id);
                            T* gap = ga.data.data() + (b * C + gr * cpg) * HW;
                            for (int64_t c = 0; c < cpg; ++c) {
                                T gma = gm[gr * cpg + c];
                                for (int64_t i = 0; i < HW; ++i) {
                                    T gi = gp[c * HW + i] * gma;
                                    T xh = (xp[c * HW + i] - mean) * inv_std;
                                    gap[c * HW + i] += inv_std * (gi - mg - xh * mgx);
                                }
                            }
                        }
                    }
            });
    }

    // ---- convolution / resampling ----

    /// x: [B,Cin,H,W], w: [Cout,Cin,kh,kw], bias: [Cout] (bias.id < 0 => none).
    /// im2col in bounded chunks of output pixels; Eigen gemm per chunk.
    Var conv2d(Var a, Var w, Var bias, int64_t stride, int64_t pad) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& wt = val(w);
        check(x.rank() == 4 && wt.rank() == 4, "conv2d: bad ranks");
        int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
        int64_t Cout = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
        check(wt.dim(1) == Cin, "conv2d: channel mismatch");
        int64_t Ho = (H + 2 * pad - kh) / stride + 1;
        int64_t Wo = (W + 2 * pad - kw) / stride + 1;
        int64_t K = Cin * kh * kw;
        Tensor<T> out({B, Cout, Ho, Wo});
        const int64_t chunk = std::max<int64_t>(int64_t(1), (int64_t(1) << 22) / K);
        std::vector<T> col(static_cast<size_t>(std::min(chunk, Ho * Wo) * K));
        const bool has_bias = bias.id >= 0;
        const T* bp = has_bias ? val(bias).data.data() : nullptr;
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t p0 = 0; p0 < Ho * Wo; p0 += chunk) {
                int64_t P = std::min(chunk, Ho * Wo - p0);
                im2col(x.data.data() + b * Cin * H * W, col.data(), Cin, H, W, kh, kw, stride,
                       pad, Wo, p0, P);
                // out_chunk [P, Cout] stored transposed into NCHW via gemm to temp
                CMap Col(col.data(), P, K);
                CMap Wm(wt.data.data(), Cout, K);
                EigenMat y = Col * Wm.transpose();  // [P, Cout]
                T* op = out.data.data() + b * Cout * Ho * Wo;
                for (int64_t c = 0; c < Cout; ++c) {
                    T bb = has_bias ? bp[c] : T(0);
                    for (int64_t p = 0; p < P; ++p) op[c * Ho * Wo + p0 + p] = y(p, c) + bb;
                }
            }
        }
        return push(
            std::move(out), needs(a) || needs(w) || (has_bias && needs(bias)),
            [a, w, bias, stride, pad, B, Cin, H, W, Cout, kh, kw, Ho, Wo, K,
             has_bias](Tape& t, int32_t self) {
                const Tensor<T>& g = t.nodes_[self].grad;
                const Tensor<T>& x = t.val(a);
                const Tensor<T>& wt = t.val(w);
                const int64_t chunk = std::max<int64_t>(int64_t(1), (int64_t(1) << 22) / K);
                std::vector<T> col(static_cast<size_t>(std::min(chunk, Ho * Wo) * K));
                EigenMat gchunk(std::min(chunk, Ho * Wo), Cout);
                for (int64_t b = 0; b < B; ++b) {
                    for (int64_t p0 = 0; p0 < Ho * Wo; p0 += chunk) {
                        int64_t P = std::min(chunk, Ho * Wo - p0);
                        const T* gp = g.data.data() + b * Cout * Ho * Wo;
                        for (int64_t c = 0; c < Cout; ++c)
                            for (int64_t p = 0; p < P; ++p) gchunk(p, c) = gp[c * Ho * Wo + p0 + p];
                        auto G = gchunk.topRows(P);
                        if (t.needs(w) || t.needs(a)) {
                            if (t.needs(w)) {
                                im2col(x.data.data() + b * Cin * H * W, col.data(), Cin, H, W, kh,
                                       kw, stride, pad, Wo, p0, P);
                                CMap Col(col.data(), P, K);
                                Map GW(t.acc(w.id).data.data(), Cout, K);
                                GW.noalias() += G.transpose() * Col;
                            }
                            if (t.needs(a)) {
                                CMap Wm(wt.data.data(), Cout, K);
                                EigenMat gcol = G * Wm;  // [P, K]
                                col2im(gcol.data(), t.acc(a.id).data.data() + b * Cin * H * W, Cin,
                                       H, W, kh, kw, stride, pad, Wo, p0, P);
                            }
                        }
                        if (has_bias && t.needs(bias)) {
                            Tensor<T>& gb = t.acc(bias.id);
                            for (int64_t c = 0; c < Cout; ++c) gb[c] += G.col(c).sum();
                        }
                    }
                }
            });
    }

    /// Bilinear resize of [B,C,H,W] to (Ho,Wo); half-pixel centers, clamped.
    Var bilinear(Var a, int64_t Ho, int64_t Wo) {
        const Tensor<T>& x = val(a);
        check(x.rank() == 4, "bilinear: expects NCHW");
        int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        auto plan = std::make_shared<BilinearPlan>(make_plan(H, Ho), make_plan(W, Wo));
        Tensor<T> out({B, C, Ho, Wo});
        const auto& py = plan->first;
        const auto& px = plan->second;
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const T* xp = x.data.data() + bc * H * W;
            T* op = out.data.data() + bc * Ho * Wo;
            for (int64_t y = 0; y < Ho; ++y) {
                auto [y0, y1, wy] = py[y];
                for (int64_t xo = 0; xo < Wo; ++xo) {
                    auto [x0, x1, wx] = px[xo];
                    T v0 = xp[y0 * W + x0] * (T(1) - T(wx)) + xp[y0 * W + x1] * T(wx);
                    T v1 = xp[y1 * W + x0] * (T(1) - T(wx)) + xp[y1 * W + x1] * T(wx);
                    op[y * Wo + xo] = v0 * (T(1) - T(wy)) + v1 * T(wy);
                }
            }
        }
        return push(std::move(out), needs(a),
                    [a, plan, B, C, H, W, Ho, Wo](Tape& t, int32_t self) {
                        const Tensor<T>& g = t.nodes_[self].grad;
                        Tensor<T>& ga = t.acc(a.id);
                        const auto& py = plan->first;
                        const auto& px = plan->second;
                        for (int64_t bc = 0; bc < B * C; ++bc) {
                            T* gap = ga.data.data() + bc * H * W;
                            const T* gp = g.data.data() + bc * Ho * Wo;
                            for (int64_t y = 0; y < Ho; ++y) {
                                auto [y0, y1, wy] = py[y];
                                for (int64_t xo = 0; xo < Wo; ++xo) {
                                    auto [x0, x1, wx] = px[xo];
                                    T gv = gp[y * Wo + xo];
                                    gap[y0 * W + x0] += gv * T((1 - wy) * (1 - wx));
                                    gap[y0 * W + x1] += gv * T((1 - wy) * wx);
                                    gap[y1 * W + x0] += gv * T(wy * (1 - wx));
                                    gap[y1 * W + x1] += gv * T(wy * wx);
                                }
                            }
                        }
                    });
    }

    Var concat_ch(Var a, Var b) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& y = val(b);
        check(x.rank() == 4 && y.rank() == 4 && x.dim(0) == y.dim(0) && x.dim(2) == y.dim(2) &&
                  x.dim(3) == y.dim(3),
              "concat_ch: incompatible shapes");
        int64_t B = x.dim(0), Ca = x.dim(1), Cb = y.dim(1), HW = x.dim(2) * x.dim(3);
        Tensor<T> out({B, Ca + Cb, x.dim(2), x.dim(3)});
        for (int64_t b2 = 0; b2 < B; ++b2) {
            std::copy_n(x.data.data() + b2 * Ca * HW, Ca * HW,
                        out.data.data() + b2 * (Ca + Cb) * HW);
            std::copy_n(y.data.data() + b2 * Cb * HW, Cb * HW,
                        out.data.data() + b2 * (Ca + Cb) * HW + Ca * HW);
        }
        return push(std::move(out), needs(a) || needs(b),
                    [a, b, B, Ca, Cb, HW](Tape& t, int32_t self) {
                        const Tensor<T>& g = t.nodes_[self].grad;
                        for (int64_t b2 = 0; b2 < B; ++b2) {
                            const T* gp = g.data.data() + b2 * (Ca + Cb) * HW;
                            if (t.needs(a)) {
                                T* ga = t.acc(a.id).data.data() + b2 * Ca * HW;
                                for (int64_t i = 0; i < Ca * HW; ++i) ga[i] += gp[i];
                            }
                            if (t.needs(b)) {
                                T* gb = t.acc(b.id).data.data() + b2 * Cb * HW;
                                for (int64_t i = 0; i < Cb * HW; ++i) gb[i] += gp[Ca * HW + i];
                            }
                        }
                    });
    }

    /// Global average pool [B,C,H,W] -> [B,C].
    Var gap(Var a) {
        const Tensor<T>& x = val(a);
        check(x.rank() == 4, "gap: expects NCHW");
        int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        Tensor<T> out({B, C});
        for (int64_t bc = 0; bc < B * C; ++bc) {
            T s = 0;
            const T* p = x.data.data() + bc * HW;
            for (int64_t i = 0; i < HW; ++i) s += p[i];
            out[bc] = s / T(HW);
        }
        return push(std::move(out), needs(a), [a, B, C, HW](Tape& t, int32_t self) {
            const Tensor<T>& g = t.nodes_[self].grad;
            Tensor<T>& ga = t.acc(a.id);
            for (int64_t bc = 0; bc < B * C; ++bc) {
                T gv = g[bc] / T(HW);
                T* p = ga.data.data() + bc * HW;
                for (int64_t i = 0; i < HW; ++i) p[i] += gv;
            }
        });
    }

    /// x: [B,C,H,W] * gate: [B,C] broadcast over pixels.
    Var mul_channel(Var a, Var gate) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& gt = val(gate);
        int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        check(gt.shape == Shape({B, C}), "mul_channel: gate shape");
        Tensor<T> out = x;
        for (int64_t bc = 0; bc < B * C; ++bc) {
            T gv = gt[bc];
            T* p = out.data.data() + bc * HW;
            for (int64_t i = 0; i < HW; ++i) p[i] *= gv;
        }
        return push(std::move(out), needs(a) || needs(gate),
                    [a, gate, B, C, HW](Tape& t, int32_t self) {
                        const Tensor<T>& g = t.nodes_[self].grad;
                        const Tensor<T>& x = t.val(a);
                        const Tensor<T>& gt = t.val(gate);
                        for (int64_t bc = 0; bc < B * C; ++bc) {
                            const T* gp = g.data.data() + bc * HW;
                            if (t.needs(a)) {
                                T* gap = t.acc(a.id).data.data() + bc * HW;
                                T gv = gt[bc];
                                for (int64_t i = 0; i < HW; ++i) gap[i] += gp[i] * gv;
                            }
                            if (t.needs(gate)) {
                                const T* xp = x.data.data() + bc * HW;
                                T s = 0;
                                for (int64_t i = 0; i < HW; ++i) s += gp[i] * xp[i];
                                t.acc(gate.id)[bc] += s;
                            }
                        }
                    });
    }

    /// x: [B,C,H,W] * gate: [B,1,H,W] broadcast over channels.
    Var mul_spatial(Var a, Var gate) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& gt = val(gate);
        int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        check(gt.shape == Shape({B, 1, x.dim(2), x.dim(3)}), "mul_spatial: gate shape");
        Tensor<T> out = x;
        for (int64_t b = 0; b < B; ++b) {
            const T* gv = gt.data.data() + b * HW;
            for (int64_t c = 0; c < C; ++c) {
                T* p = out.data.data() + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) p[i] *= gv[i];
            }
        }
        return push(std::move(out), needs(a) || needs(gate),
                    [a, gate, B, C, HW](Tape& t, int32_t self) {
                        const Tensor<T>& g = t.nodes_[self].grad;
                        const Tensor<T>& x = t.val(a);
                        const Tensor<T>& gt = t.val(gate);
                        for (int64_t b = 0; b < B; ++b) {
                            const T* gv = gt.data.data() + b * HW;
                            for (int64_t c = 0; c < C; ++c) {
                                const T* gp = g.data.data() + (b * C + c) * HW;
                                if (t.needs(a)) {
                                    T* gap = t.acc(a.id).data.data() + (b * C + c) * HW;
                                    for (int64_t i = 0; i < HW; ++i) gap[i] += gp[i] * gv[i];
                                }
                                if (t.needs(gate)) {
                                    const T* xp = x.data.data() + (b * C + c) * HW;
                                    T* ggp = t.acc(gate.id).data.data() + b * HW;
                                    for (int64_t i = 0; i < HW; ++i) ggp[i] += gp[i] * xp[i];
                                }
                            }
                        }
                    });
    }

    // ---- attention specials ----

    /// logits: [Nw*H, M2, M2] scaled per head by 1/tau_h,
    /// tau_h = max(exp(log_tau_h), tau_min); log_tau: [H].
    Var scale_per_head(Var a, Var log_tau, int64_t heads, T tau_min) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& lt = val(log_tau);
        check(lt.numel() == heads && x.dim(0) % heads == 0, "scale_per_head: bad shapes");
        int64_t BH = x.dim(0), inner = x.numel() / BH;
        Tensor<T> out = x;
        for (int64_t bh = 0; bh < BH; ++bh) {
            T tau = std::max(std::exp(lt[bh % heads]), tau_min);
            T* p = out.data.data() + bh * inner;
            for (int64_t i = 0; i < inner; ++i) p[i] /= tau;
        }
        return push(std::move(out), needs(a) || needs(log_tau),
                    [a, log_tau, heads, tau_min, BH, inner](Tape& t, int32_t self) {
                        const Tensor<T>& g = t.nodes_[self].grad;
                        const Tensor<T>& x = t.val(a);
                        const Tensor<T>& lt = t.val(log_tau);
                        for (int64_t bh = 0; bh < BH; ++bh) {
                            int64_t h = bh % heads;
                            T e = std::exp(lt[h]);
                            T tau = std::max(e, tau_min);
                            const T* gp = g.data.data() + bh * inner;
                            if (t.needs(a)) {
                                T* gap = t.acc(a.id).data.data() + bh * inner;
                                for (int64_t i = 0; i < inner; ++i) gap[i] += gp[i] / tau;
                            }
                            if (t.needs(log_tau) && e > tau_min) {
                                // d(x/tau)/dlog_tau = -x/tau (tau = exp(log_tau))
                                const T* xp = x.data.data() + bh * inner;
                                T s = 0;
                                for (int64_t i = 0; i < inner; ++i) s += gp[i] * xp[i];
                                t.acc(log_tau.id)[h] -= s / tau;
                            }
                        }
                    });
    }

    /// logits: [Nw*H, M2, M2] += table[index[i*M2+j], h] with h = row % H.
    Var add_rel_bias(Var a, Var table, int64_t heads,
                     std::shared_ptr<const std::vector<int64_t>> index) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& tb = val(table);
        int64_t BH = x.dim(0), M2 = x.dim(1);
        check(x.dim(2) == M2 && tb.rank() == 2 && tb.dim(1) == heads, "add_rel_bias: bad shapes");
        check(static_cast<int64_t>(index->size()) == M2 * M2, "add_rel_bias: index size");
        Tensor<T> out = x;
        const auto& idx = *index;
        for (int64_t bh = 0; bh < BH; ++bh) {
            int64_t h = bh % heads;
            T* p = out.data.data() + bh * M2 * M2;
            for (int64_t ij = 0; ij < M2 * M2; ++ij) p[ij] += tb[idx[ij] * heads + h];
        }
        return push(std::move(out), needs(a) || needs(table),
                    [a, table, heads, index, BH, M2](Tape& t, int32_t self) {
                        const Tensor<T>& g = t.nodes_[self].grad;
                        if (t.needs(a)) t.add_into(a, g);
                        if (t.needs(table)) {
                            Tensor<T>& gt = t.acc(table.id);
                            const auto& idx = *index;
                            for (int64_t bh = 0; bh < BH; ++bh) {
                                int64_t h = bh % heads;
                                const T* gp = g.data.data() + bh * M2 * M2;
                                for (int64_t ij = 0; ij < M2 * M2; ++ij)
                                    gt[idx[ij] * heads + h] += gp[ij];
                            }
                        }
                    });
    }

    /// Constant additive attention mask for shifted windows.
    /// mask: [nW, M2, M2]; window of row bh is (bh / heads) % nW.
    Var add_attn_mask(Var a, std::shared_ptr<const Tensor<T>> mask, int64_t heads) {
        const Tensor<T>& x = val(a);
        int64_t BH = x.dim(0), M2 = x.dim(1);
        int64_t nW = mask->dim(0);
        check(mask->dim(1) == M2 && mask->dim(2) == M2, "add_attn_mask: bad mask");
        Tensor<T> out = x;
        for (int64_t bh = 0; bh < BH; ++bh) {
            int64_t w = (bh / heads) % nW;
            T* p = out.data.data() + bh * M2 * M2;
            const T* mp = mask->data.data() + w * M2 * M2;
            for (int64_t ij = 0; ij < M2 * M2; ++ij) p[ij] += mp[ij];
        }
        return push(std::move(out), needs(a), [a](Tape& t, int32_t self) {
            t.add_into(a, t.nodes_[self].grad);
        });
    }

    // ---- reductions / losses ----

    Var mean(Var a) {
        const Tensor<T>& x = val(a);
        T s = 0;
        for (T v : x.data) s += v;
        int64_t n = x.numel();
        return push(Tensor<T>::scalar(s / T(n)), needs(a), [a, n](Tape& t, int32_t self) {
            T gv = t.nodes_[self].grad[0] / T(n);
            Tensor<T>& ga = t.acc(a.id);
            for (auto& v : ga.data) v += gv;
        });
    }

    Var mean_of_squares(Var a) {
        const Tensor<T>& x = val(a);
        T s = 0;
        for (T v : x.data) s += v * v;
        int64_t n = x.numel();
        return push(Tensor<T>::scalar(s / T(n)), needs(a), [a, n](Tape& t, int32_t self) {
            T gv = t.nodes_[self].grad[0];
            const Tensor<T>& x = t.val(a);
            Tensor<T>& ga = t.acc(a.id);
            for (int64_t i = 0; i < x.numel(); ++i) ga[i] += gv * T(2) * x[i] / T(n);
        });
    }

    /// Fixed-weight scalarization (gradient-check harness).
    Var dot_const(Var a, std::shared_ptr<const Tensor<T>> wts) {
        const Tensor<T>& x = val(a);
        check(wts->numel() == x.numel(), "dot_const: size mismatch");
        T s = 0;
        for (int64_t i = 0; i < x.numel(); ++i) s += x[i] * (*wts)[i];
        return push(Tensor<T>::scalar(s), needs(a), [a, wts](Tape& t, int32_t self) {
            T gv = t.nodes_[self].grad[0];
            Tensor<T>& ga = t.acc(a.id);
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gv * (*wts)[i];
        });
    }

    /// Numerically stable mean BCE-with-logits against a {0,1} constant target.
    Var bce_with_logits_mean(Var a, std::shared_ptr<const Tensor<T>> target) {
        const Tensor<T>& z = val(a);
        check(target->shape == z.shape, "bce: shape mismatch");
        int64_t n = z.numel();
        T s = 0;
        for (int64_t i = 0; i < n; ++i) {
            T zi = z[i], ti = (*target)[i];
            s += std::max(zi, T(0)) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
        }
        return push(Tensor<T>::scalar(s / T(n)), needs(a), [a, target, n](Tape& t, int32_t self) {
            T gv = t.nodes_[self].grad[0] / T(n);
            const Tensor<T>& z = t.val(a);
            Tensor<T>& ga = t.acc(a.id);
            for (int64_t i = 0; i < n; ++i) {
                T p = T(1) / (T(1) + std::exp(-z[i]));
                ga[i] += gv * (p - (*target)[i]);
            }
        });
    }

    /// Smoothed dice loss over the whole batch: 1 - (2*sum(pt)+eps)/(sum(p)+sum(t)+eps).
    Var dice_loss(Var a, std::shared_ptr<const Tensor<T>> target, T eps = T(1)) {
        const Tensor<T>& z = val(a);
        check(target->shape == z.shape, "dice: shape mismatch");
        int64_t n = z.numel();
        T sp = 0, st = 0, spt = 0;
        for (int64_t i = 0; i < n; ++i) {
            T p = T(1) / (T(1) + std::exp(-z[i]));
            T ti = (*target)[i];
            sp += p;
            st += ti;
            spt += p * ti;
        }
        T denom = sp + st + eps;
        T loss = T(1) - (T(2) * spt + eps) / denom;
        auto sums = std::make_shared<std::array<T, 3>>(std::array<T, 3>{spt, denom, eps});
        return push(Tensor<T>::scalar(loss), needs(a), [a, target, sums, n](Tape& t, int32_t self) {
            T gv = t.nodes_[self].grad[0];
            T spt = (*sums)[0], denom = (*sums)[1], eps = (*sums)[2];
            const Tensor<T>& z = t.val(a);
            Tensor<T>& ga = t.acc(a.id);
            T num = T(2) * spt + eps;
            for (int64_t i = 0; i < n; ++i) {
                T p = T(1) / (T(1) + std::exp(-z[i]));
                T ti = (*target)[i];
                // dL/dp = -(2*t*denom - num) / denom^2
                T dLdp = -(T(2) * ti * denom - num) / (denom * denom);
                ga[i] += gv * dLdp * p * (T(1) - p);
            }
        });
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // empty until touched by backward
        bool requires_grad = false;
        std::function<void(Tape&, int32_t)> back;
    };
    using BilinearTap = std::tuple<int64_t, int64_t, double>;
    using BilinearPlan = std::pair<std::vector<BilinearTap>, std::vector<BilinearTap>>;

    std::vector<Node> nodes_;

    bool needs(Var v) const { return nodes_[v.id].requires_grad; }

    Tensor<T>& acc(int32_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
        return n.grad;
    }
    Tensor<T>& acc(Var v) { return acc(v.id); }

    void add_into(Var v, const Tensor<T>& g) {
        Tensor<T>& ga = acc(v.id);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }

    Var push(Tensor<T> value, bool requires_grad, std::function<void(Tape&, int32_t)> back) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int32_t>(nodes_.size() - 1)};
    }

    static std::vector<BilinearTap> make_plan(int64_t in, int64_t out) {
        std::vector<BilinearTap> plan(out);
        double s = static_cast<double>(in) / static_cast<double>(out);
        for (int64_t i = 0; i < out; ++i) {
            double src = (static_cast<double>(i) + 0.5) * s - 0.5;
            if (src < 0) src = 0;
            if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
            int64_t lo = static_cast<int64_t>(std::floor(src));
            int64_t hi = std::min(lo + 1, in - 1);
            plan[i] = {lo, hi, src - static_cast<double>(lo)};
        }
        return plan;
    }

    /// col: [P, Cin*kh*kw] row-major, output pixels [p0, p0+P).
    static void im2col(const T* x, T* col, int64_t Cin, int64_t H, int64_t W, int64_t kh,
                       int64_t kw, int64_t stride, int64_t pad, int64_t Wo, int64_t p0,
                       int64_t P) {
        int64_t K = Cin * kh * kw;
        for (int64_t p = 0; p < P; ++p) {
            int64_t oy = (p0 + p) / Wo, ox = (p0 + p) % Wo;
            int64_t iy0 = oy * stride - pad, ix0 = ox * stride - pad;
            T* cp = col + p * K;
            for (int64_t c = 0; c < Cin; ++c) {
                const T* xc = x + c * H * W;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    int64_t iy = iy0 + ky;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        int64_t ix = ix0 + kx;
                        *cp++ = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? xc[iy * W + ix] : T(0);
                    }
                }
            }
        }
    }

    static void col2im(const T* col, T* gx, int64_t Cin, int64_t H, int64_t W, int64_t kh,
                       int64_t kw, int64_t stride, int64_t pad, int64_t Wo, int64_t p0,
                       int64_t P) {
        int64_t K = Cin * kh * kw;
        for (int64_t p = 0; p < P; ++p) {
            int64_t oy = (p0 + p) / Wo, ox = (p0 + p) % Wo;
            int64_t iy0 = oy * stride - pad, ix0 = ox * stride - pad;
            const T* cp = col + p * K;
            for (int64_t c = 0; c < Cin; ++c) {
                T* xc = gx + c * H * W;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    int64_t iy = iy0 + ky;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        int64_t ix = ix0 + kx;
                        if (iy >= 0 && iy < H && ix >= 0 && ix < W) xc[iy * W + ix] += *cp;
                        ++cp;
                    }
                }
            }
        }
    }
};

template <typename T>
using Var = typename Tape<T>::Var;

}  // namespace fcbswin
