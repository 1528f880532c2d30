#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "tsda/tensor.hpp"

namespace tsda {

// Reverse-mode tape over Tensor<T>. A tape lives for one forward/backward
// round: ops append nodes in topological order, backward() walks them in
// reverse. Node ids are indices into the tape.
template <typename T>
class Tape {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapM = Eigen::Map<Mat>;
    using CMapM = Eigen::Map<const Mat>;

    int leaf(Tensor<T> v, bool requires_grad = false) {
        return push(std::move(v), requires_grad, {});
    }

    const Tensor<T>& val(int id) const { return nodes_[id].value; }
    Tensor<T>& val(int id) { return nodes_[id].value; }

    const Tensor<T>& grad(int id) const { return nodes_[id].grad; }
    bool requires_grad(int id) const { return nodes_[id].rg; }
    T scalar(int id) const { return nodes_[id].value[0]; }

    void backward(int root) {
        require(nodes_[root].value.numel() == 1, "backward root must be a scalar");
        seed(root, Tensor<T>::scalar(T(1)));
        for (int i = root; i >= 0; --i) {
            auto& n = nodes_[i];
            if (n.touched && n.back) n.back(*this);
        }
    }

    // ---- elementwise ----

    int add(int a, int b) {
        require(val(a).same_shape(val(b)), "add: shape mismatch");
        Tensor<T> out = val(a);
        const auto& vb = val(b);
        for (long i = 0; i < out.numel(); ++i) out[i] += vb[i];
        return unary_binary(std::move(out), a, b, [](Tape& t, int self, int a, int b) {
            const auto& g = t.grad(self);
            t.add_to(a, g);
            t.add_to(b, g);
        });
    }

    int sub(int a, int b) {
        require(val(a).same_shape(val(b)), "sub: shape mismatch");
        Tensor<T> out = val(a);
        const auto& vb = val(b);
        for (long i = 0; i < out.numel(); ++i) out[i] -= vb[i];
        return unary_binary(std::move(out), a, b, [](Tape& t, int self, int a, int b) {
            const auto& g = t.grad(self);
            t.add_to(a, g);
            Tensor<T> gn = g;
            for (long i = 0; i < gn.numel(); ++i) gn[i] = -gn[i];
            t.add_to(b, gn);
        });
    }

    int mul(int a, int b) {
        require(val(a).same_shape(val(b)), "mul: shape mismatch");
        Tensor<T> out = val(a);
        const auto& vb = val(b);
        for (long i = 0; i < out.numel(); ++i) out[i] *= vb[i];
        return unary_binary(std::move(out), a, b, [](Tape& t, int self, int a, int b) {
            const auto& g = t.grad(self);
            Tensor<T> ga = g, gb = g;
            const auto& va = t.val(a);
            const auto& vb2 = t.val(b);
            for (long i = 0; i < g.numel(); ++i) {
                ga[i] *= vb2[i];
                gb[i] *= va[i];
            }
            t.add_to(a, ga);
            t.add_to(b, gb);
        });
    }

    int scale(int a, T c) {
        Tensor<T> out = val(a);
        for (long i = 0; i < out.numel(); ++i) out[i] *= c;
        return unary(std::move(out), a, [c](Tape& t, int self, int a) {
            Tensor<T> g = t.grad(self);
            for (long i = 0; i < g.numel(); ++i) g[i] *= c;
            t.add_to(a, g);
        });
    }

    int neg(int a) { return scale(a, T(-1)); }

    int add_scalar(int a, T c) {
        Tensor<T> out = val(a);
        for (long i = 0; i < out.numel(); ++i) out[i] += c;
        return unary(std::move(out), a, [](Tape& t, int self, int a) {
            t.add_to(a, t.grad(self));
        });
    }

    int relu(int a) {
        Tensor<T> out = val(a);
        for (long i = 0; i < out.numel(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
        return unary(std::move(out), a, [](Tape& t, int self, int a) {
            Tensor<T> g = t.grad(self);
            const auto& x = t.val(a);
            for (long i = 0; i < g.numel(); ++i)
                if (x[i] <= T(0)) g[i] = T(0);
            t.add_to(a, g);
        });
    }

    int sigmoid(int a) {
        Tensor<T> out = val(a);
        for (long i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
        return unary(std::move(out), a, [](Tape& t, int self, int a) {
            Tensor<T> g = t.grad(self);
            const auto& y = t.val(self);
            for (long i = 0; i < g.numel(); ++i) g[i] *= y[i] * (T(1) - y[i]);
            t.add_to(a, g);
        });
    }

    int exp_(int a) {
        Tensor<T> out = val(a);
        for (long i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
        return unary(std::move(out), a, [](Tape& t, int self, int a) {
            Tensor<T> g = t.grad(self);
            const auto& y = t.val(self);
            for (long i = 0; i < g.numel(); ++i) g[i] *= y[i];
            t.add_to(a, g);
        });
    }

    // log(max(x, lo)); the clamp zeroes the gradient below lo
    int log_clamped(int a, T lo) {
        Tensor<T> out = val(a);
        for (long i = 0; i < out.numel(); ++i) out[i] = std::log(out[i] > lo ? out[i] : lo);
        return unary(std::move(out), a, [lo](Tape& t, int self, int a) {
            Tensor<T> g = t.grad(self);
            const auto& x = t.val(a);
            for (long i = 0; i < g.numel(); ++i) g[i] = x[i] > lo ? g[i] / x[i] : T(0);
            t.add_to(a, g);
        });
    }

    // ---- linear algebra ----

    int matmul(int a, int b, bool ta = false, bool tb = false) {
        const auto& va = val(a);
        const auto& vb = val(b);
        require(va.rank() == 2 && vb.rank() == 2, "matmul: rank-2 inputs required");
        long m = ta ? va.dim(1) : va.dim(0);
        long ka = ta ? va.dim(0) : va.dim(1);
        long kb = tb ? vb.dim(1) : vb.dim(0);
        long n = tb ? vb.dim(0) : vb.dim(1);
        require(ka == kb, "matmul: inner dimensions differ");
        Tensor<T> out(Shape{m, n});
        CMapM A(va.data(), va.dim(0), va.dim(1));
        CMapM B(vb.data(), vb.dim(0), vb.dim(1));
        MapM O(out.data(), m, n);
        if (!ta && !tb) O.noalias() = A * B;
        else if (ta && !tb) O.noalias() = A.transpose() * B;
        else if (!ta && tb) O.noalias() = A * B.transpose();
        else O.noalias() = A.transpose() * B.transpose();
        return unary_binary(std::move(out), a, b, [ta, tb, m, n](Tape& t, int self, int a, int b) {
            const auto& g = t.grad(self);
            const auto& va2 = t.val(a);
            const auto& vb2 = t.val(b);
            CMapM G(g.data(), m, n);
            CMapM A(va2.data(), va2.dim(0), va2.dim(1));
            CMapM B(vb2.data(), vb2.dim(0), vb2.dim(1));
            if (t.wants_grad(a)) {
                Tensor<T> ga(va2.shape());
                MapM GA(ga.data(), va2.dim(0), va2.dim(1));
                if (!ta && !tb) GA.noalias() = G * B.transpose();
                else if (!ta && tb) GA.noalias() = G * B;
                else if (ta && !tb) GA.noalias() = B * G.transpose();
                else GA.noalias() = B.transpose() * G.transpose();
                t.add_to(a, ga);
            }
            if (t.wants_grad(b)) {
                Tensor<T> gb(vb2.shape());
                MapM GB(gb.data(), vb2.dim(0), vb2.dim(1));
                if (!ta && !tb) GB.noalias() = A.transpose() * G;
                else if (!ta && tb) GB.noalias() = G.transpose() * A;
                else if (ta && !tb) GB.noalias() = A * G;
                else GB.noalias() = G.transpose() * A.transpose();
                t.add_to(b, gb);
            }
        });
    }

    // X: (B,D), v: (D) broadcast over rows
    int add_rowvec(int x, int v) {
        const auto& vx = val(x);
        const auto& vv = val(v);
        require(vx.rank() == 2 && vv.rank() == 1 && vx.dim(1) == vv.dim(0),
                "add_rowvec: shape mismatch");
        Tensor<T> out = vx;
        for (long i = 0; i < vx.dim(0); ++i)
            for (long j = 0; j < vx.dim(1); ++j) out.at(i, j) += vv[j];
        return unary_binary(std::move(out), x, v, [](Tape& t, int self, int x, int v) {
            const auto& g = t.grad(self);
            t.add_to(x, g);
            if (t.wants_grad(v)) {
                Tensor<T> gv(t.val(v).shape());
                for (long i = 0; i < g.dim(0); ++i)
                    for (long j = 0; j < g.dim(1); ++j) gv[j] += g.at(i, j);
                t.add_to(v, gv);
            }
        });
    }

    // Z: (N,D) -> Z - column mean
    int center_cols(int z) {
        const auto& vz = val(z);
        require(vz.rank() == 2, "center_cols: rank-2 input required");
        long n = vz.dim(0), d = vz.dim(1);
        require(n > 0, "center_cols: empty input");
        Tensor<T> out = vz;
        for (long j = 0; j < d; ++j) {
            T m = T(0);
            for (long i = 0; i < n; ++i) m += vz.at(i, j);
            m /= T(n);
            for (long i = 0; i < n; ++i) out.at(i, j) -= m;
        }
        return unary(std::move(out), z, [n, d](Tape& t, int self, int z) {
            const auto& g = t.grad(self);
            Tensor<T> gz = g;
            for (long j = 0; j < d; ++j) {
                T m = T(0);
                for (long i = 0; i < n; ++i) m += g.at(i, j);
                m /= T(n);
                for (long i = 0; i < n; ++i) gz.at(i, j) -= m;
            }
            t.add_to(z, gz);
        });
    }

    // (N,D) x (M,D) -> (N,M) of squared euclidean distances
    int pairwise_sqdist(int a, int b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1),
                "pairwise_sqdist: feature dimensions differ");
        long n = va.dim(0), m = vb.dim(0), d = va.dim(1);
        Tensor<T> out(Shape{n, m});
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < m; ++j) {
                T s = T(0);
                for (long k = 0; k < d; ++k) {
                    T diff = va.at(i, k) - vb.at(j, k);
                    s += diff * diff;
                }
                out.at(i, j) = s;
            }
        return unary_binary(std::move(out), a, b, [n, m, d](Tape& t, int self, int a, int b) {
            const auto& g = t.grad(self);
            const auto& va2 = t.val(a);
            const auto& vb2 = t.val(b);
            if (t.wants_grad(a)) {
                Tensor<T> ga(va2.shape());
                for (long i = 0; i < n; ++i)
                    for (long j = 0; j < m; ++j) {
                        T gij = T(2) * g.at(i, j);
                        for (long k = 0; k < d; ++k)
                            ga.at(i, k) += gij * (va2.at(i, k) - vb2.at(j, k));
                    }
                t.add_to(a, ga);
            }
            if (t.wants_grad(b)) {
                Tensor<T> gb(vb2.shape());
                for (long i = 0; i < n; ++i)
                    for (long j = 0; j < m; ++j) {
                        T gij = T(2) * g.at(i, j);
                        for (long k = 0; k < d; ++k)
                            gb.at(j, k) += gij * (vb2.at(j, k) - va2.at(i, k));
                    }
                t.add_to(b, gb);
            }
        });
    }

    // sum of w (constant) elementwise-times x, as a scalar
    int weighted_sum(int x, Tensor<T> w) {
        const auto& vx = val(x);
        require(vx.same_shape(w), "weighted_sum: weight shape mismatch");
        T s = T(0);
        for (long i = 0; i < vx.numel(); ++i) s += vx[i] * w[i];
        auto wp = std::make_shared<Tensor<T>>(std::move(w));
        return unary(Tensor<T>::scalar(s), x, [wp](Tape& t, int self, int x) {
            T g0 = t.grad(self)[0];
            Tensor<T> gx = *wp;
            for (long i = 0; i < gx.numel(); ++i) gx[i] *= g0;
            t.add_to(x, gx);
        });
    }

    int sum_all(int a) {
        const auto& v = val(a);
        T s = T(0);
        for (long i = 0; i < v.numel(); ++i) s += v[i];
        return unary(Tensor<T>::scalar(s), a, [](Tape& t, int self, int a) {
            T g0 = t.grad(self)[0];
            t.add_to(a, Tensor<T>::full(t.val(a).shape(), g0));
        });
    }

    int mean_all(int a) {
        long n = val(a).numel();
        require(n > 0, "mean_all: empty input");
        return scale(sum_all(a), T(1) / T(n));
    }

    int softmax_rows(int a) {
        const auto& v = val(a);
        require(v.rank() == 2, "softmax_rows: rank-2 input required");
        long b = v.dim(0), k = v.dim(1);
        Tensor<T> out(v.shape());
        for (long i = 0; i < b; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (long j = 0; j < k; ++j) mx = std::max(mx, v.at(i, j));
            T s = T(0);
            for (long j = 0; j < k; ++j) {
                out.at(i, j) = std::exp(v.at(i, j) - mx);
                s += out.at(i, j);
            }
            for (long j = 0; j < k; ++j) out.at(i, j) /= s;
        }
        return unary(std::move(out), a, [b, k](Tape& t, int self, int a) {
            const auto& g = t.grad(self);
            const auto& p = t.val(self);
            Tensor<T> ga(p.shape());
            for (long i = 0; i < b; ++i) {
                T dot = T(0);
                for (long j = 0; j < k; ++j) dot += g.at(i, j) * p.at(i, j);
                for (long j = 0; j < k; ++j) ga.at(i, j) = p.at(i, j) * (g.at(i, j) - dot);
            }
            t.add_to(a, ga);
        });
    }

    // P: (B,K), idx[i] in [0,K): out[i] = P[i, idx[i]]
    int pick(int p, std::vector<int> idx) {
        const auto& vp = val(p);
        require(vp.rank() == 2, "pick: rank-2 input required");
        require(static_cast<long>(idx.size()) == vp.dim(0), "pick: index count mismatch");
        Tensor<T> out(Shape{vp.dim(0)});
        for (long i = 0; i < vp.dim(0); ++i) {
            require(idx[i] >= 0 && idx[i] < vp.dim(1), "pick: index out of range");
            out[i] = vp.at(i, idx[i]);
        }
        auto ip = std::make_shared<std::vector<int>>(std::move(idx));
        return unary(std::move(out), p, [ip](Tape& t, int self, int p) {
            const auto& g = t.grad(self);
            Tensor<T> gp(t.val(p).shape());
            for (long i = 0; i < g.numel(); ++i) gp.at(i, (*ip)[i]) += g[i];
            t.add_to(p, gp);
        });
    }

    // Third central-moment-style tensor of already-centered rows:
    // M[a,b,c] = (1/N) sum_i z_ia z_ib z_ic
    int moment3(int z) {
        const auto& vz = val(z);
        require(vz.rank() == 2, "moment3: rank-2 input required");
        long n = vz.dim(0), d = vz.dim(1);
        require(n > 0, "moment3: empty input");
        Tensor<T> out(Shape{d, d, d});
        for (long i = 0; i < n; ++i)
            for (long a = 0; a < d; ++a) {
                T za = vz.at(i, a);
                for (long b = 0; b < d; ++b) {
                    T zab = za * vz.at(i, b);
                    for (long c = 0; c < d; ++c) out.at(a, b, c) += zab * vz.at(i, c);
                }
            }
        for (long i = 0; i < out.numel(); ++i) out[i] /= T(n);
        return unary(std::move(out), z, [n, d](Tape& t, int self, int z) {
            const auto& g = t.grad(self);
            const auto& vz2 = t.val(z);
            Tensor<T> gz(vz2.shape());
            for (long i = 0; i < n; ++i)
                for (long a = 0; a < d; ++a)
                    for (long b = 0; b < d; ++b) {
                        T zab = vz2.at(i, a) * vz2.at(i, b);
                        for (long c = 0; c < d; ++c) {
                            T gv = g.at(a, b, c) / T(n);
                            gz.at(i, c) += gv * zab;
                            gz.at(i, a) += gv * vz2.at(i, b) * vz2.at(i, c);
                            gz.at(i, b) += gv * vz2.at(i, a) * vz2.at(i, c);
                        }
                    }
            t.add_to(z, gz);
        });
    }

    // ---- convolutional / structural ----

    // x: (B,C,T), w: (O,C,K), bias: (O) or -1. Output (B,O,To).
    int conv1d(int x, int w, int bias, long stride, long dilation, long pad_l, long pad_r) {
        const auto& vx = val(x);
        const auto& vw = val(w);
        require(vx.rank() == 3 && vw.rank() == 3, "conv1d: bad ranks");
        require(vx.dim(1) == vw.dim(1), "conv1d: channel mismatch");
        require(stride >= 1 && dilation >= 1, "conv1d: stride/dilation must be >= 1");
        long B = vx.dim(0), C = vx.dim(1), Tlen = vx.dim(2);
        long O = vw.dim(0), K = vw.dim(2);
        long span = (K - 1) * dilation + 1;
        long Tp = Tlen + pad_l + pad_r;
        require(Tp >= span, "conv1d: input shorter than kernel span");
        long To = (Tp - span) / stride + 1;
        Tensor<T> out(Shape{B, O, To});
        Tensor<T> col(Shape{C * K, To});
        CMapM W(vw.data(), O, C * K);
        for (long b = 0; b < B; ++b) {
            im2col(vx, b, col, K, stride, dilation, pad_l);
            CMapM Col(col.data(), C * K, To);
            MapM Ob(out.data() + b * O * To, O, To);
            Ob.noalias() = W * Col;
        }
        if (bias >= 0) {
            const auto& vb = val(bias);
            require(vb.rank() == 1 && vb.dim(0) == O, "conv1d: bias shape mismatch");
            for (long b = 0; b < B; ++b)
                for (long o = 0; o < O; ++o)
                    for (long t = 0; t < To; ++t) out.at(b, o, t) += vb[o];
        }
        std::vector<int> parents{x, w};
        if (bias >= 0) parents.push_back(bias);
        auto back = [x, w, bias, stride, dilation, pad_l, B, C, Tlen, O, K, To](Tape& t) {
            const auto& g = t.grad(t.current_);
            const auto& vx2 = t.val(x);
            const auto& vw2 = t.val(w);
            Tensor<T> col(Shape{C * K, To});
            Tensor<T> gx(vx2.shape());
            Tensor<T> gw(vw2.shape());
            MapM GW(gw.data(), O, C * K);
            CMapM W(vw2.data(), O, C * K);
            Tensor<T> gcol(Shape{C * K, To});
            for (long b = 0; b < B; ++b) {
                CMapM Gb(g.data() + b * O * To, O, To);
                if (t.wants_grad(w)) {
                    im2col(vx2, b, col, K, stride, dilation, pad_l);
                    CMapM Col(col.data(), C * K, To);
                    GW.noalias() += Gb * Col.transpose();
                }
                if (t.wants_grad(x)) {
                    MapM GCol(gcol.data(), C * K, To);
                    GCol.noalias() = W.transpose() * Gb;
                    col2im(gcol, b, gx, K, stride, dilation, pad_l);
                }
            }
            if (t.wants_grad(x)) t.add_to(x, gx);
            if (t.wants_grad(w)) t.add_to(w, gw);
            if (bias >= 0 && t.wants_grad(bias)) {
                Tensor<T> gb(Shape{O});
                for (long b = 0; b < B; ++b)
                    for (long o = 0; o < O; ++o)
                        for (long tt = 0; tt < To; ++tt) gb[o] += g.at(b, o, tt);
                t.add_to(bias, gb);
            }
        };
        return push_with(std::move(out), parents, std::move(back));
    }

    // x: (B,C,T); per-channel batch normalization over (B,T).
    // In training mode batch statistics are used and running stats updated in
    // place (torch convention: biased variance normalizes, unbiased feeds the
    // running estimate). In eval mode the running stats are used.
    int batchnorm1d(int x, int gamma, int beta, Tensor<T>* run_mean, Tensor<T>* run_var,
                    bool training, T momentum, T eps) {
        const auto& vx = val(x);
        require(vx.rank() == 3, "batchnorm1d: rank-3 input required");
        long B = vx.dim(0), C = vx.dim(1), Tlen = vx.dim(2);
        long N = B * Tlen;
        Tensor<T> mean(Shape{C}), var(Shape{C});
        if (training) {
            require(N > 0, "batchnorm1d: empty batch in training mode");
            for (long c = 0; c < C; ++c) {
                T m = T(0);
                for (long b = 0; b < B; ++b)
                    for (long t = 0; t < Tlen; ++t) m += vx.at(b, c, t);
                m /= T(N);
                T v = T(0);
                for (long b = 0; b < B; ++b)
                    for (long t = 0; t < Tlen; ++t) {
                        T d = vx.at(b, c, t) - m;
                        v += d * d;
                    }
                v /= T(N);
                mean[c] = m;
                var[c] = v;
                T unbiased = N > 1 ? v * T(N) / T(N - 1) : v;
                (*run_mean)[c] = (T(1) - momentum) * (*run_mean)[c] + momentum * m;
                (*run_var)[c] = (T(1) - momentum) * (*run_var)[c] + momentum * unbiased;
            }
        } else {
            mean = *run_mean;
            var = *run_var;
        }
        const auto& vg = val(gamma);
        const auto& vb = val(beta);
        Tensor<T> out(vx.shape());
        Tensor<T> xhat(vx.shape());
        for (long c = 0; c < C; ++c) {
            T inv = T(1) / std::sqrt(var[c] + eps);
            for (long b = 0; b < B; ++b)
                for (long t = 0; t < Tlen; ++t) {
                    T h = (vx.at(b, c, t) - mean[c]) * inv;
                    xhat.at(b, c, t) = h;
                    out.at(b, c, t) = vg[c] * h + vb[c];
                }
        }
        auto xh = std::make_shared<Tensor<T>>(std::move(xhat));
        auto vr = std::make_shared<Tensor<T>>(std::move(var));
        std::vector<int> parents{x, gamma, beta};
        auto back = [x, gamma, beta, xh, vr, training, eps, B, C, Tlen, N](Tape& t) {
            const auto& g = t.grad(t.current_);
            const auto& vgm = t.val(gamma);
            if (t.wants_grad(gamma) || t.wants_grad(beta)) {
                Tensor<T> gg(Shape{C}), gb(Shape{C});
                for (long c = 0; c < C; ++c)
                    for (long b = 0; b < B; ++b)
                        for (long tt = 0; tt < Tlen; ++tt) {
                            gg[c] += g.at(b, c, tt) * xh->at(b, c, tt);
                            gb[c] += g.at(b, c, tt);
                        }
                if (t.wants_grad(gamma)) t.add_to(gamma, gg);
                if (t.wants_grad(beta)) t.add_to(beta, gb);
            }
            if (!t.wants_grad(x)) return;
            Tensor<T> gx(t.val(x).shape());
            for (long c = 0; c < C; ++c) {
                T inv = T(1) / std::sqrt((*vr)[c] + eps);
                if (training) {
                    T sum_g = T(0), sum_gx = T(0);
                    for (long b = 0; b < B; ++b)
                        for (long tt = 0; tt < Tlen; ++tt) {
                            T gh = g.at(b, c, tt) * vgm[c];
                            sum_g += gh;
                            sum_gx += gh * xh->at(b, c, tt);
                        }
                    for (long b = 0; b < B; ++b)
                        for (long tt = 0; tt < Tlen; ++tt) {
                            T gh = g.at(b, c, tt) * vgm[c];
                            gx.at(b, c, tt) =
                                inv * (gh - sum_g / T(N) - xh->at(b, c, tt) * sum_gx / T(N));
                        }
                } else {
                    for (long b = 0; b < B; ++b)
                        for (long tt = 0; tt < Tlen; ++tt)
                            gx.at(b, c, tt) = g.at(b, c, tt) * vgm[c] * inv;
                }
            }
            t.add_to(x, gx);
        };
        return push_with(std::move(out), parents, std::move(back));
    }

    // x: (B,C,T) -> (B,C,To), To = (T-k)/s + 1
    int maxpool1d(int x, long k, long s) {
        const auto& vx = val(x);
        require(vx.rank() == 3, "maxpool1d: rank-3 input required");
        require(k >= 1 && s >= 1, "maxpool1d: bad kernel/stride");
        long B = vx.dim(0), C = vx.dim(1), Tlen = vx.dim(2);
        require(Tlen >= k, "maxpool1d: input shorter than kernel");
        long To = (Tlen - k) / s + 1;
        Tensor<T> out(Shape{B, C, To});
        auto arg = std::make_shared<std::vector<long>>(static_cast<std::size_t>(B * C * To));
        for (long b = 0; b < B; ++b)
            for (long c = 0; c < C; ++c)
                for (long t = 0; t < To; ++t) {
                    long base = t * s;
                    long best = base;
                    T bv = vx.at(b, c, base);
                    for (long j = 1; j < k; ++j) {
                        T v = vx.at(b, c, base + j);
                        if (v > bv) {
                            bv = v;
                            best = base + j;
                        }
                    }
                    out.at(b, c, t) = bv;
                    (*arg)[static_cast<std::size_t>((b * C + c) * To + t)] = best;
                }
        return unary(std::move(out), x, [arg, B, C, To](Tape& t, int self, int x) {
            const auto& g = t.grad(self);
            Tensor<T> gx(t.val(x).shape());
            for (long b = 0; b < B; ++b)
                for (long c = 0; c < C; ++c)
                    for (long tt = 0; tt < To; ++tt)
                        gx.at(b, c, (*arg)[static_cast<std::size_t>((b * C + c) * To + tt)]) +=
                            g.at(b, c, tt);
            t.add_to(x, gx);
        });
    }

    // (B,C,T) -> (B,C) mean over time
    int avgpool_time(int x) {
        const auto& vx = val(x);
        require(vx.rank() == 3, "avgpool_time: rank-3 input required");
        long B = vx.dim(0), C = vx.dim(1), Tlen = vx.dim(2);
        require(Tlen > 0, "avgpool_time: empty time axis");
        Tensor<T> out(Shape{B, C});
        for (long b = 0; b < B; ++b)
            for (long c = 0; c < C; ++c) {
                T s = T(0);
                for (long t = 0; t < Tlen; ++t) s += vx.at(b, c, t);
                out.at(b, c) = s / T(Tlen);
            }
        return unary(std::move(out), x, [B, C, Tlen](Tape& t, int self, int x) {
            const auto& g = t.grad(self);
            Tensor<T> gx(t.val(x).shape());
            for (long b = 0; b < B; ++b)
                for (long c = 0; c < C; ++c) {
                    T gv = g.at(b, c) / T(Tlen);
                    for (long tt = 0; tt < Tlen; ++tt) gx.at(b, c, tt) = gv;
                }
            t.add_to(x, gx);
        });
    }

    // identity forward, gradient multiplied by s on the way back
    // (s = -lambda gives the gradient reversal layer)
    int scale_grad(int x, T s) {
        Tensor<T> out = val(x);
        return unary(std::move(out), x, [s](Tape& t, int self, int x) {
            Tensor<T> g = t.grad(self);
            for (long i = 0; i < g.numel(); ++i) g[i] *= s;
            t.add_to(x, g);
        });
    }

    int detach(int x) { return leaf(val(x), false); }

    // F: (B,D), P: (B,K) -> (B, D*K), row b = vec(F_b outer P_b)
    int outer_flatten(int f, int p) {
        const auto& vf = val(f);
        const auto& vp = val(p);
        require(vf.rank() == 2 && vp.rank() == 2 && vf.dim(0) == vp.dim(0),
                "outer_flatten: batch mismatch");
        long B = vf.dim(0), D = vf.dim(1), K = vp.dim(1);
        Tensor<T> out(Shape{B, D * K});
        for (long b = 0; b < B; ++b)
            for (long d = 0; d < D; ++d)
                for (long k = 0; k < K; ++k) out.at(b, d * K + k) = vf.at(b, d) * vp.at(b, k);
        return unary_binary(std::move(out), f, p, [B, D, K](Tape& t, int self, int f, int p) {
            const auto& g = t.grad(self);
            const auto& vf2 = t.val(f);
            const auto& vp2 = t.val(p);
            if (t.wants_grad(f)) {
                Tensor<T> gf(vf2.shape());
                for (long b = 0; b < B; ++b)
                    for (long d = 0; d < D; ++d) {
                        T s = T(0);
                        for (long k = 0; k < K; ++k) s += g.at(b, d * K + k) * vp2.at(b, k);
                        gf.at(b, d) = s;
                    }
                t.add_to(f, gf);
            }
            if (t.wants_grad(p)) {
                Tensor<T> gp(vp2.shape());
                for (long b = 0; b < B; ++b)
                    for (long k = 0; k < K; ++k) {
                        T s = T(0);
                        for (long d = 0; d < D; ++d) s += g.at(b, d * K + k) * vf2.at(b, d);
                        gp.at(b, k) = s;
                    }
                t.add_to(p, gp);
            }
        });
    }

    int reshape(int x, Shape s) {
        Tensor<T> out = val(x).reshaped(s);
        return unary(std::move(out), x, [](Tape& t, int self, int x) {
            t.add_to(x, t.grad(self).reshaped(t.val(x).shape()));
        });
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool rg = false;
        bool touched = false;
        std::function<void(Tape&)> back;
    };

    std::deque<Node> nodes_;  // deque: node references stay valid as ops append
    int current_ = -1;  // node whose backward fn is executing

    bool wants_grad(int id) const { return nodes_[id].rg; }

    void seed(int id, Tensor<T> g) {
        nodes_[id].grad = std::move(g);
        nodes_[id].touched = true;
    }

    void add_to(int id, const Tensor<T>& g) {
        auto& n = nodes_[id];
        if (!n.rg) return;
        if (!n.touched) {
            n.grad = g;
            n.touched = true;
        } else {
            for (long i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
        }
    }

    int push(Tensor<T> v, bool rg, std::function<void(Tape&)> back) {
        nodes_.push_back(Node{std::move(v), {}, rg, false, std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    int push_with(Tensor<T> v, const std::vector<int>& parents, std::function<void(Tape&)> back) {
        bool rg = false;
        for (int p : parents) rg = rg || nodes_[p].rg;
        int id = push(std::move(v), rg, {});
        if (rg) {
            nodes_[id].back = [id, fn = std::move(back)](Tape& t) {
                t.current_ = id;
                fn(t);
            };
        }
        return id;
    }

    template <typename F>
    int unary(Tensor<T> v, int a, F fn) {
        return push_with(std::move(v), {a}, [a, fn](Tape& t) { fn(t, t.current_, a); });
    }

    template <typename F>
    int unary_binary(Tensor<T> v, int a, int b, F fn) {
        return push_with(std::move(v), {a, b}, [a, b, fn](Tape& t) { fn(t, t.current_, a, b); });
    }

    static void im2col(const Tensor<T>& x, long b, Tensor<T>& col, long K, long stride,
                       long dilation, long pad_l) {
        long C = x.dim(1), Tlen = x.dim(2), To = col.dim(1);
        for (long c = 0; c < C; ++c)
            for (long k = 0; k < K; ++k) {
                long row = c * K + k;
                for (long t = 0; t < To; ++t) {
                    long src = t * stride + k * dilation - pad_l;
                    col.at(row, t) = (src >= 0 && src < Tlen) ? x.at(b, c, src) : T(0);
                }
            }
    }

    static void col2im(const Tensor<T>& gcol, long b, Tensor<T>& gx, long K, long stride,
                       long dilation, long pad_l) {
        long C = gx.dim(1), Tlen = gx.dim(2), To = gcol.dim(1);
        for (long c = 0; c < C; ++c)
            for (long k = 0; k < K; ++k) {
                long row = c * K + k;
                for (long t = 0; t < To; ++t) {
                    long dst = t * stride + k * dilation - pad_l;
                    if (dst >= 0 && dst < Tlen) gx.at(b, c, dst) += gcol.at(row, t);
                }
            }
    }
};

}  // namespace tsda
