#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tsda/autograd.hpp"
#include "tsda/rng.hpp"

namespace tsda {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
};

// Per-step context: one tape, one leaf per parameter (cached, so repeated
// forwards through the same module accumulate gradients on backward).
template <typename T>
struct TapeCtx {
    explicit TapeCtx(Tape<T>& t, bool train = false) : tape(t), training(train) {}

    Tape<T>& tape;
    bool training = false;

    int var(Param<T>& p) {
        auto it = ids_.find(&p);
        if (it != ids_.end()) return it->second;
        int id = tape.leaf(p.value, true);
        ids_.emplace(&p, id);
        return id;
    }

    // Zero tensor if the parameter never entered the graph or was unreached.
    Tensor<T> grad_of(const Param<T>& p) const {
        auto it = ids_.find(&p);
        if (it == ids_.end()) return Tensor<T>(p.value.shape());
        const auto& g = tape.grad(it->second);
        if (g.numel() == 0) return Tensor<T>(p.value.shape());
        return g;
    }

private:
    std::unordered_map<const Param<T>*, int> ids_;
};

namespace init {

// torch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
template <typename T>
void uniform_fan_in(Tensor<T>& t, long fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(std::max<long>(fan_in, 1)));
    for (long i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace init

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::string name, long in, long out, Rng& rng)
        : weight{name + ".weight", Tensor<T>(Shape{in, out})},
          bias{name + ".bias", Tensor<T>(Shape{out})} {
        init::uniform_fan_in(weight.value, in, rng);
        init::uniform_fan_in(bias.value, in, rng);
    }

    int forward(TapeCtx<T>& ctx, int x) {
        return ctx.tape.add_rowvec(ctx.tape.matmul(x, ctx.var(weight)), ctx.var(bias));
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    Param<T> weight, bias;
};

template <typename T>
class Conv1d {
public:
    Conv1d() = default;
    Conv1d(std::string name, long in_ch, long out_ch, long kernel, long stride, long dilation,
           long pad_l, long pad_r, Rng& rng)
        : weight{name + ".weight", Tensor<T>(Shape{out_ch, in_ch, kernel})},
          bias{name + ".bias", Tensor<T>(Shape{out_ch})},
          stride_(stride), dilation_(dilation), pad_l_(pad_l), pad_r_(pad_r) {
        init::uniform_fan_in(weight.value, in_ch * kernel, rng);
        init::uniform_fan_in(bias.value, in_ch * kernel, rng);
    }

    int forward(TapeCtx<T>& ctx, int x) {
        return ctx.tape.conv1d(x, ctx.var(weight), ctx.var(bias), stride_, dilation_, pad_l_,
                               pad_r_);
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    Param<T> weight, bias;

private:
    long stride_ = 1, dilation_ = 1, pad_l_ = 0, pad_r_ = 0;
};

template <typename T>
class BatchNorm1d {
public:
    BatchNorm1d() = default;
    BatchNorm1d(std::string name, long channels)
        : gamma{name + ".gamma", Tensor<T>::full(Shape{channels}, T(1))},
          beta{name + ".beta", Tensor<T>(Shape{channels})},
          running_mean(Tensor<T>(Shape{channels})),
          running_var(Tensor<T>::full(Shape{channels}, T(1))),
          name_(std::move(name)) {}

    int forward(TapeCtx<T>& ctx, int x) {
        return ctx.tape.batchnorm1d(x, ctx.var(gamma), ctx.var(beta), &running_mean, &running_var,
                                    ctx.training, momentum, eps);
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
        out.emplace_back(name_ + ".running_mean", &running_mean);
        out.emplace_back(name_ + ".running_var", &running_var);
    }

    Param<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

private:
    std::string name_;
};

// Two-layer MLP with ReLU, used for domain discriminators and the deep
// kernel embedding.
template <typename T>
class Mlp2 {
public:
    Mlp2() = default;
    Mlp2(std::string name, long in, long hidden, long out, Rng& rng)
        : l1(name + ".l1", in, hidden, rng), l2(name + ".l2", hidden, out, rng) {}

    int forward(TapeCtx<T>& ctx, int x) {
        return l2.forward(ctx, ctx.tape.relu(l1.forward(ctx, x)));
    }

    void collect(std::vector<Param<T>*>& out) {
        l1.collect(out);
        l2.collect(out);
    }

    Linear<T> l1, l2;
};

template <typename T>
struct AdamConfig {
    T lr = T(1e-3);
    T beta1 = T(0.5);
    T beta2 = T(0.99);
    T eps = T(1e-8);
    T weight_decay = T(1e-4);
};

// Adam with L2-in-gradient weight decay.
template <typename T>
class Adam {
public:
    Adam(std::vector<Param<T>*> params, AdamConfig<T> cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (auto* p : params_) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }

    void step(const TapeCtx<T>& ctx) {
        ++t_;
        T bc1 = T(1) - std::pow(cfg_.beta1, T(t_));
        T bc2 = T(1) - std::pow(cfg_.beta2, T(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i]->value;
            Tensor<T> g = ctx.grad_of(*params_[i]);
            for (long j = 0; j < p.numel(); ++j) {
                T gj = g[j] + cfg_.weight_decay * p[j];
                m_[i][j] = cfg_.beta1 * m_[i][j] + (T(1) - cfg_.beta1) * gj;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (T(1) - cfg_.beta2) * gj * gj;
                T mhat = m_[i][j] / bc1;
                T vhat = v_[i][j] / bc2;
                p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    std::vector<Param<T>*> params_;
    AdamConfig<T> cfg_;
    std::vector<Tensor<T>> m_, v_;
    long t_ = 0;
};

}  // namespace tsda
