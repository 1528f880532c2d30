#pragma once

#include <algorithm>
#include <vector>

#include "tsda/backbones.hpp"
#include "tsda/nn.hpp"

namespace tsda {

// RBF kernel bank: k(a,b) = exp(-||a-b||^2 / bandwidth). An optional linear
// kernel k(a,b) = <a,b> can be appended.
template <typename T>
struct KernelBank {
    std::vector<T> bandwidths;
    bool include_linear = false;

    void validate() const {
        require(!bandwidths.empty() || include_linear, "kernel bank is empty");
        for (T b : bandwidths)
            require(std::isfinite(static_cast<double>(b)) && b > T(0),
                    "kernel bandwidths must be finite and positive");
    }
};

// Median heuristic: bandwidths {m/4, m/2, m, 2m, 4m} around the median
// pairwise squared distance of the joint batch. Computed outside the tape,
// so the bank acts as a constant w.r.t. gradients.
template <typename T>
KernelBank<T> median_bank(const Tensor<T>& zs, const Tensor<T>& zt) {
    long ns = zs.dim(0), nt = zt.dim(0), d = zs.dim(1);
    require(zt.dim(1) == d, "median_bank: feature dims differ");
    std::vector<T> dists;
    auto row = [&](long i) { return i < ns ? zs.data() + i * d : zt.data() + (i - ns) * d; };
    long n = ns + nt;
    for (long i = 0; i < n; ++i)
        for (long j = i + 1; j < n; ++j) {
            const T* a = row(i);
            const T* b = row(j);
            T s = T(0);
            for (long k = 0; k < d; ++k) {
                T diff = a[k] - b[k];
                s += diff * diff;
            }
            dists.push_back(s);
        }
    T med = T(1);
    if (!dists.empty()) {
        std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
        med = dists[dists.size() / 2];
        if (!(med > T(0))) med = T(1);
    }
    return KernelBank<T>{{med / T(4), med / T(2), med, med * T(2), med * T(4)}, false};
}

namespace detail {

// sum over the bank of w-weighted kernel sums between rows of a and b
template <typename T>
int kernel_weighted(Tape<T>& tp, int a, int b, const Tensor<T>& w, const KernelBank<T>& bank) {
    int acc = -1;
    int d2 = -1;
    if (!bank.bandwidths.empty()) d2 = tp.pairwise_sqdist(a, b);
    for (T bw : bank.bandwidths) {
        int k = tp.exp_(tp.scale(d2, T(-1) / bw));
        int term = tp.weighted_sum(k, w);
        acc = acc < 0 ? term : tp.add(acc, term);
    }
    if (bank.include_linear) {
        int gram = tp.matmul(a, b, false, true);
        int term = tp.weighted_sum(gram, w);
        acc = acc < 0 ? term : tp.add(acc, term);
    }
    return acc;
}

template <typename T>
Tensor<T> outer(const std::vector<T>& u, const std::vector<T>& v) {
    Tensor<T> w(Shape{static_cast<long>(u.size()), static_cast<long>(v.size())});
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j)
            w.at(static_cast<long>(i), static_cast<long>(j)) = u[i] * v[j];
    return w;
}

}  // namespace detail

// Biased (V-statistic) MMD^2 summed over the kernel bank:
// mean k(s,s') + mean k(t,t') - 2 mean k(s,t).
template <typename T>
int mmd(Tape<T>& tp, int zs, int zt, const KernelBank<T>& bank) {
    bank.validate();
    const auto& vs = tp.val(zs);
    const auto& vt = tp.val(zt);
    require(vs.rank() == 2 && vt.rank() == 2, "mmd: rank-2 inputs required");
    require(vs.dim(1) == vt.dim(1), "mmd: feature dims differ");
    long ns = vs.dim(0), nt = vt.dim(0);
    require(ns >= 1 && nt >= 1, "mmd: empty batch");
    T wss = T(1) / static_cast<T>(ns * ns);
    T wtt = T(1) / static_cast<T>(nt * nt);
    T wst = T(-2) / static_cast<T>(ns * nt);
    int ss = detail::kernel_weighted(tp, zs, zs, Tensor<T>::full(Shape{ns, ns}, wss), bank);
    int tt = detail::kernel_weighted(tp, zt, zt, Tensor<T>::full(Shape{nt, nt}, wtt), bank);
    int st = detail::kernel_weighted(tp, zs, zt, Tensor<T>::full(Shape{ns, nt}, wst), bank);
    return tp.add(tp.add(ss, tt), st);
}

// ||Cov(Zs) - Cov(Zt)||_F^2 / (4 D^2), sample covariance (n-1).
template <typename T>
int coral(Tape<T>& tp, int zs, int zt) {
    const auto& vs = tp.val(zs);
    const auto& vt = tp.val(zt);
    require(vs.rank() == 2 && vt.rank() == 2 && vs.dim(1) == vt.dim(1),
            "coral: shape mismatch");
    long ns = vs.dim(0), nt = vt.dim(0), d = vs.dim(1);
    require(ns >= 2 && nt >= 2, "coral: batches of size >= 2 required");
    int cs = tp.scale(tp.matmul(tp.center_cols(zs), tp.center_cols(zs), true, false),
                      T(1) / static_cast<T>(ns - 1));
    int ct = tp.scale(tp.matmul(tp.center_cols(zt), tp.center_cols(zt), true, false),
                      T(1) / static_cast<T>(nt - 1));
    int diff = tp.sub(cs, ct);
    return tp.scale(tp.sum_all(tp.mul(diff, diff)), T(1) / static_cast<T>(4 * d * d));
}

// Squared distance between order-p moment tensors of centered features,
// scaled by 1/D^p. p in {2,3}.
template <typename T>
int homm(Tape<T>& tp, int zs, int zt, int order = 3) {
    require(order == 2 || order == 3, "homm: order must be 2 or 3");
    const auto& vs = tp.val(zs);
    const auto& vt = tp.val(zt);
    require(vs.rank() == 2 && vt.rank() == 2 && vs.dim(1) == vt.dim(1),
            "homm: shape mismatch");
    long ns = vs.dim(0), nt = vt.dim(0), d = vs.dim(1);
    require(ns >= 1 && nt >= 1, "homm: empty batch");
    require(d <= 64, "homm: explicit moment tensors are supported up to D=64");
    int cs = tp.center_cols(zs);
    int ct = tp.center_cols(zt);
    int ms, mt;
    if (order == 2) {
        ms = tp.scale(tp.matmul(cs, cs, true, false), T(1) / static_cast<T>(ns));
        mt = tp.scale(tp.matmul(ct, ct, true, false), T(1) / static_cast<T>(nt));
    } else {
        ms = tp.moment3(cs);
        mt = tp.moment3(ct);
    }
    int diff = tp.sub(ms, mt);
    T denom = T(1);
    for (int i = 0; i < order; ++i) denom *= static_cast<T>(d);
    return tp.scale(tp.sum_all(tp.mul(diff, diff)), T(1) / denom);
}

// Class-conditional MMD. Source weights come from the labels, target weights
// from per-class predicted probabilities (constants w.r.t. the tape). Classes
// with zero mass on either side are skipped; the result is the mean over
// contributing classes. When no class contributes the value is 0 and
// *vacuous is set.
template <typename T>
int lmmd(Tape<T>& tp, int zs, const std::vector<int>& ys, int zt, const Tensor<T>& pt_in,
         const KernelBank<T>& bank, bool* vacuous = nullptr) {
    bank.validate();
    // pt_in may alias tape storage, which reallocates as ops append: keep a copy
    Tensor<T> pt = pt_in;
    const auto& vs = tp.val(zs);
    const auto& vt = tp.val(zt);
    require(vs.rank() == 2 && vt.rank() == 2 && vs.dim(1) == vt.dim(1),
            "lmmd: shape mismatch");
    long ns = vs.dim(0), nt = vt.dim(0);
    require(static_cast<long>(ys.size()) == ns, "lmmd: label count mismatch");
    require(pt.rank() == 2 && pt.dim(0) == nt, "lmmd: probability shape mismatch");
    long k = pt.dim(1);
    for (long i = 0; i < nt; ++i) {
        T row = T(0);
        for (long j = 0; j < k; ++j) row += pt.at(i, j);
        require(std::abs(static_cast<double>(row) - 1.0) < 1e-3, "lmmd: pt rows must sum to 1");
    }

    if (vacuous) *vacuous = false;
    int acc = -1;
    int contributing = 0;
    for (long cls = 0; cls < k; ++cls) {
        std::vector<T> ws(ns, T(0)), wt(nt, T(0));
        T ssum = T(0), tsum = T(0);
        for (long i = 0; i < ns; ++i)
            if (ys[i] == cls) {
                ws[i] = T(1);
                ssum += T(1);
            }
        for (long i = 0; i < nt; ++i) {
            wt[i] = pt.at(i, cls);
            tsum += wt[i];
        }
        if (ssum <= T(0) || tsum <= T(0)) continue;
        for (auto& v : ws) v /= ssum;
        for (auto& v : wt) v /= tsum;
        ++contributing;
        int ss = detail::kernel_weighted(tp, zs, zs, detail::outer(ws, ws), bank);
        int tt = detail::kernel_weighted(tp, zt, zt, detail::outer(wt, wt), bank);
        std::vector<T> wst(ws);
        for (auto& v : wst) v *= T(-2);
        int st = detail::kernel_weighted(tp, zs, zt, detail::outer(wst, wt), bank);
        int term = tp.add(tp.add(ss, tt), st);
        acc = acc < 0 ? term : tp.add(acc, term);
    }
    if (contributing == 0) {
        if (vacuous) *vacuous = true;
        return tp.leaf(Tensor<T>::scalar(T(0)));
    }
    return tp.scale(acc, T(1) / static_cast<T>(contributing));
}

// -mean_b sum_k p log p, with 0 log 0 := 0.
template <typename T>
int conditional_entropy(Tape<T>& tp, int probs) {
    const auto& p = tp.val(probs);
    require(p.rank() == 2, "conditional_entropy: rank-2 input required");
    long b = p.dim(0), k = p.dim(1);
    require(b >= 1, "conditional_entropy: empty batch");
    for (long i = 0; i < b; ++i) {
        T row = T(0);
        for (long j = 0; j < k; ++j) {
            require(p.at(i, j) >= T(0), "conditional_entropy: negative probability");
            row += p.at(i, j);
        }
        require(std::abs(static_cast<double>(row) - 1.0) < 1e-4,
                "conditional_entropy: rows must sum to 1");
    }
    int plogp = tp.mul(probs, tp.log_clamped(probs, T(1e-12)));
    return tp.scale(tp.sum_all(plogp), T(-1) / static_cast<T>(b));
}

// -mean_i log p_i[y_i], probabilities clamped at 1e-7.
template <typename T>
int cross_entropy(Tape<T>& tp, int probs, const std::vector<int>& labels) {
    const auto& p = tp.val(probs);
    require(p.rank() == 2, "cross_entropy: rank-2 input required");
    require(static_cast<long>(labels.size()) == p.dim(0), "cross_entropy: label count mismatch");
    require(!labels.empty(), "cross_entropy: empty batch");
    for (int y : labels)
        require(y >= 0 && y < p.dim(1), "cross_entropy: label out of range");
    int picked = tp.pick(probs, labels);
    return tp.neg(tp.mean_all(tp.log_clamped(picked, T(1e-7))));
}

// Binary cross-entropy over discriminator outputs: source labeled 1, target
// labeled 0, averaged over the combined batch. Inputs must lie in (0,1).
template <typename T>
int domain_discriminator_loss(Tape<T>& tp, int d_src, int d_tgt) {
    const auto& s = tp.val(d_src);
    const auto& t = tp.val(d_tgt);
    long ns = s.numel(), nt = t.numel();
    require(ns >= 1 && nt >= 1, "domain_discriminator_loss: empty batch");
    for (long i = 0; i < ns; ++i)
        require(s[i] > T(0) && s[i] < T(1), "domain_discriminator_loss: outputs must be in (0,1)");
    for (long i = 0; i < nt; ++i)
        require(t[i] > T(0) && t[i] < T(1), "domain_discriminator_loss: outputs must be in (0,1)");
    int ls = tp.sum_all(tp.log_clamped(d_src, T(1e-12)));
    int lt = tp.sum_all(tp.log_clamped(tp.add_scalar(tp.neg(d_tgt), T(1)), T(1e-12)));
    return tp.scale(tp.add(ls, lt), T(-1) / static_cast<T>(ns + nt));
}

// Identity forward; upstream gradient scaled by -lambda on the way back.
template <typename T>
int gradient_reversal(Tape<T>& tp, int x, T lambda) {
    require(lambda >= T(0), "gradient_reversal: lambda must be >= 0");
    return tp.scale_grad(x, -lambda);
}

namespace detail {

// mean_b KL(p_const || q) with q = probs node on the tape
template <typename T>
int kl_const_vs(Tape<T>& tp, const Tensor<T>& p, int q_probs) {
    long b = p.dim(0);
    T const_term = T(0);
    for (long i = 0; i < p.numel(); ++i)
        if (p[i] > T(0)) const_term += p[i] * std::log(p[i]);
    int logq = tp.log_clamped(q_probs, T(1e-12));
    int cross = tp.weighted_sum(logq, p);
    return tp.scale(tp.add_scalar(tp.neg(cross), const_term), T(1) / static_cast<T>(b));
}

template <typename T>
void normalize_rows_inplace(Tensor<T>& d) {
    long b = d.dim(0);
    long stride = d.numel() / std::max<long>(b, 1);
    for (long i = 0; i < b; ++i) {
        T s = T(0);
        for (long j = 0; j < stride; ++j) s += d[i * stride + j] * d[i * stride + j];
        T inv = T(1) / (std::sqrt(s) + T(1e-12));
        for (long j = 0; j < stride; ++j) d[i * stride + j] *= inv;
    }
}

}  // namespace detail

// Virtual adversarial loss: KL(p(x) || p(x + r_adv)) with r_adv the
// eps-scaled dominant perturbation found by power iteration. The clean
// prediction acts as a constant target.
template <typename T>
int vat_loss(TapeCtx<T>& ctx, Network<T>& net, const Tensor<T>& x, T eps, T xi, int power_iters,
             Rng& rng) {
    require(power_iters >= 1, "vat_loss: power_iters must be >= 1");
    require(eps >= T(0) && xi > T(0), "vat_loss: eps must be >= 0 and xi > 0");

    Tensor<T> p0;
    {
        Tape<T> tp;
        TapeCtx<T> c0{tp, ctx.training};
        int xin = tp.leaf(x);
        p0 = tp.val(net.forward(c0, xin).probs);
    }

    Tensor<T> d(x.shape());
    for (long i = 0; i < d.numel(); ++i) d[i] = static_cast<T>(rng.normal());
    detail::normalize_rows_inplace(d);

    for (int it = 0; it < power_iters; ++it) {
        Tape<T> tp;
        TapeCtx<T> c{tp, ctx.training};
        Tensor<T> r0 = d;
        for (long i = 0; i < r0.numel(); ++i) r0[i] *= xi;
        int r = tp.leaf(r0, true);
        int xp = tp.add(tp.leaf(x), r);
        int q = net.forward(c, xp).probs;
        int kl = detail::kl_const_vs(tp, p0, q);
        tp.backward(kl);
        d = tp.grad(r);
        if (d.numel() == 0) d = Tensor<T>(x.shape());
        detail::normalize_rows_inplace(d);
    }

    auto& tp = ctx.tape;
    Tensor<T> radv = d;
    for (long i = 0; i < radv.numel(); ++i) radv[i] *= eps;
    int xp = tp.add(tp.leaf(x), tp.leaf(radv));
    int q = net.forward(ctx, xp).probs;
    return detail::kl_const_vs(tp, p0, q);
}

}  // namespace tsda
