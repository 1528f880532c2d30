#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsda/data.hpp"
#include "tsda/losses.hpp"
#include "tsda/metrics.hpp"

namespace tsda {

struct HParamRange {
    std::string name;
    double lo = 0.0;
    double hi = 0.0;  // sampled log-uniformly over [lo, hi]
};

// Registry row: identity, taxonomy, and the tunable-weight schema.
struct AlgorithmInfo {
    std::string id;
    std::string category;      // discrepancy | adversarial | bound
    std::string distribution;  // marginal | joint | none
    std::vector<HParamRange> schema;
};

inline const std::vector<AlgorithmInfo>& list_algorithms() {
    static const HParamRange kLr{"learning_rate", 1e-3, 1e0};
    static const HParamRange kCls{"cls_weight", 1e-1, 1e1};
    auto loss = [](const char* name) { return HParamRange{name, 1e-2, 1e1}; };
    static const std::vector<AlgorithmInfo> registry = {
        {"source_only", "bound", "none", {kLr}},
        {"target_only", "bound", "none", {kLr}},
        {"ddc", "discrepancy", "marginal", {kLr, loss("mmd_weight"), kCls}},
        {"deep_coral", "discrepancy", "marginal", {kLr, loss("coral_weight"), kCls}},
        {"homm", "discrepancy", "marginal", {kLr, loss("homm_weight"), kCls}},
        {"mmda",
         "discrepancy",
         "joint",
         {kLr, loss("mmd_weight"), loss("coral_weight"), loss("entropy_weight"), kCls}},
        {"dsan", "discrepancy", "joint", {kLr, loss("lmmd_weight"), loss("cls_weight")}},
        {"dann", "adversarial", "marginal", {kLr, loss("adversarial_weight"), kCls}},
        {"cdan",
         "adversarial",
         "joint",
         {kLr, loss("adversarial_weight"), loss("entropy_weight"), kCls}},
        {"dirt_t",
         "adversarial",
         "joint",
         {kLr, loss("adversarial_weight"), loss("entropy_weight"), loss("vat_weight"),
          loss("teacher_weight"), loss("disc_steps"), kCls}},
        {"codats", "adversarial", "marginal", {kLr, loss("adversarial_weight"), kCls}},
        {"advskm", "adversarial", "marginal", {kLr, loss("mmd_weight"), kCls}},
    };
    return registry;
}

inline const AlgorithmInfo& algorithm_info(const std::string& id) {
    for (const auto& a : list_algorithms())
        if (a.id == id) return a;
    throw ArgumentError("unknown algorithm id: " + id);
}

struct HParams {
    double learning_rate = 1e-3;
    std::map<std::string, double> weights;
    std::uint64_t seed = 1;

    double weight(const std::string& name, double fallback = 1.0) const {
        auto it = weights.find(name);
        return it == weights.end() ? fallback : it->second;
    }
};

inline void to_json(nlohmann::json& j, const HParams& h) {
    j = {{"learning_rate", h.learning_rate}, {"seed", h.seed}, {"weights", h.weights}};
}
inline void from_json(const nlohmann::json& j, HParams& h) {
    h.learning_rate = j.at("learning_rate").get<double>();
    h.seed = j.value("seed", std::uint64_t{1});
    h.weights = j.value("weights", std::map<std::string, double>{});
}

struct TrainConfig {
    long epochs = 40;
    long batch_size = 32;
    double weight_decay = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.99;
    bool report_last_epoch = true;  // metrics come from the final epoch, no early stopping

    void validate() const {
        require(epochs >= 1 && batch_size >= 2, "train config: bad epochs/batch size");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"weight_decay", c.weight_decay},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"report_last_epoch", c.report_last_epoch}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.value("epochs", 40L);
    c.batch_size = j.value("batch_size", 32L);
    c.weight_decay = j.value("weight_decay", 1e-4);
    c.beta1 = j.value("beta1", 0.5);
    c.beta2 = j.value("beta2", 0.99);
    c.report_last_epoch = j.value("report_last_epoch", true);
}

struct EpochLog {
    long epoch = 0;
    std::map<std::string, double> losses;  // per-term means over the epoch
    double wall_seconds = 0.0;             // excluded from determinism checks
};

struct CandidateModel {
    Network<float> net;
    std::string algorithm;
    HParams hparams;
    std::vector<EpochLog> log;
    bool failed = false;
    std::string failure_reason;
};

namespace detail {

// Endless per-domain index stream; reshuffles whenever exhausted so the
// smaller domain cycles.
class IndexStream {
public:
    IndexStream(long n, Rng rng) : n_(n), rng_(rng) { refill(); }

    std::vector<long> next(long count) {
        std::vector<long> out;
        out.reserve(static_cast<std::size_t>(count));
        for (long i = 0; i < count; ++i) {
            if (pos_ == order_.size()) refill();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void refill() {
        order_.resize(static_cast<std::size_t>(n_));
        for (long i = 0; i < n_; ++i) order_[static_cast<std::size_t>(i)] = i;
        rng_.shuffle(order_.begin(), order_.end());
        pos_ = 0;
    }
    long n_;
    Rng rng_;
    std::vector<long> order_;
    std::size_t pos_ = 0;
};

inline Tensor<float> gather_batch(const TimeSeriesDataset& ds, const std::vector<long>& idx) {
    Tensor<float> out(Shape{static_cast<long>(idx.size()), ds.channels(), ds.length()});
    long ct = ds.channels() * ds.length();
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(ds.samples().data() + idx[i] * ct, ct,
                    out.data() + static_cast<long>(i) * ct);
    return out;
}

inline std::vector<int> gather_labels(const std::vector<std::int32_t>& labels,
                                      const std::vector<long>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        out[i] = static_cast<int>(labels[static_cast<std::size_t>(idx[i])]);
    return out;
}

}  // namespace detail

// Joint adaptation: 40 epochs of L = cls_weight * L_cls^src + sum of the
// algorithm's weighted alignment terms. The target training labels are never
// read here except by target_only (the accessor is instrumented). NaN/inf
// losses mark the candidate failed instead of throwing.
inline CandidateModel adapt(const std::string& alg_id, const TimeSeriesDataset& src_train,
                            const TimeSeriesDataset& tgt_train, const BackboneSpec& backbone,
                            const HParams& hp, const TrainConfig& cfg) {
    const AlgorithmInfo& info = algorithm_info(alg_id);
    cfg.validate();
    require(src_train.num_classes() == tgt_train.num_classes(),
            "adapt: domains disagree on class count");
    require(src_train.channels() == tgt_train.channels(),
            "adapt: domains disagree on channels");
    require(backbone.input_channels == src_train.channels(),
            "adapt: backbone channels do not match the data");
    require(backbone.num_classes == src_train.num_classes(),
            "adapt: backbone classes do not match the data");
    require(src_train.size() > 0 && tgt_train.size() > 0, "adapt: empty training split");

    const bool is_source_only = alg_id == "source_only";
    const bool is_target_only = alg_id == "target_only";
    const bool is_bound = is_source_only || is_target_only;

    CandidateModel cand{Network<float>(backbone, hp.seed), alg_id, hp, {}, false, {}};
    Network<float>& net = cand.net;

    const double cls_w = hp.weight("cls_weight", 1.0);
    const float lr = static_cast<float>(hp.learning_rate);
    AdamConfig<float> acfg{lr, static_cast<float>(cfg.beta1), static_cast<float>(cfg.beta2),
                           1e-8f, static_cast<float>(cfg.weight_decay)};

    // auxiliary modules; each draws from its own stream so that disabling a
    // term never shifts another consumer
    std::optional<Mlp2<float>> disc;
    std::optional<Adam<float>> disc_opt;  // discriminator-only refinement steps
    std::optional<Mlp2<float>> kernel_net;
    std::optional<Adam<float>> kernel_opt;
    std::optional<Network<float>> teacher;
    Rng vat_rng = Rng::stream(hp.seed, "vat");

    const long d = backbone.feature_dim;
    const long k = backbone.num_classes;
    const bool grl_joint = alg_id == "dann" || alg_id == "cdan" || alg_id == "dirt_t";
    if (grl_joint || alg_id == "codats") {
        Rng dr = Rng::stream(hp.seed, "disc");
        long in = alg_id == "cdan" ? d * k : d;
        disc.emplace("disc", in, 256, 1, dr);
    }
    if (alg_id == "advskm") {
        Rng kr = Rng::stream(hp.seed, "kernel");
        kernel_net.emplace("kernel", d, 128, 64, kr);
        std::vector<Param<float>*> kp;
        kernel_net->collect(kp);
        kernel_opt.emplace(std::move(kp), acfg);
    }
    const double teacher_w = hp.weight("teacher_weight", 1.0);
    if (alg_id == "dirt_t" && teacher_w != 0.0) teacher.emplace(backbone, hp.seed);

    std::vector<Param<float>*> main_params = net.params();
    if (grl_joint) disc->collect(main_params);
    Adam<float> opt(main_params, acfg);
    if (alg_id == "codats" || alg_id == "dirt_t") {
        std::vector<Param<float>*> dp;
        disc->collect(dp);
        disc_opt.emplace(std::move(dp), acfg);
    }

    const TimeSeriesDataset& cls_domain = is_target_only ? tgt_train : src_train;
    const std::vector<std::int32_t>& cls_labels = cls_domain.labels();

    long iters = (std::max(src_train.size(), tgt_train.size()) + cfg.batch_size - 1) /
                 cfg.batch_size;
    detail::IndexStream src_stream(src_train.size(), Rng::stream(hp.seed, "data-src"));
    detail::IndexStream tgt_stream(tgt_train.size(), Rng::stream(hp.seed, "data-tgt"));

    long extra_disc_steps = 0;
    if (alg_id == "codats") extra_disc_steps = 1;
    if (alg_id == "dirt_t") {
        double raw = hp.weight("disc_steps", 1.0);
        extra_disc_steps = std::max<long>(1, static_cast<long>(std::floor(raw + 0.5))) - 1;
    }

    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        std::map<std::string, double> sums;
        for (long it = 0; it < iters; ++it) {
            auto si = src_stream.next(cfg.batch_size);
            auto ti = tgt_stream.next(cfg.batch_size);
            const auto& ci = is_target_only ? ti : si;
            Tensor<float> xs_batch = detail::gather_batch(cls_domain, ci);
            std::vector<int> ys_batch = detail::gather_labels(cls_labels, ci);
            Tensor<float> xt_batch;
            if (!is_bound) xt_batch = detail::gather_batch(tgt_train, ti);

            Tape<float> tape;
            TapeCtx<float> ctx(tape, true);
            auto s_out = net.forward(ctx, tape.leaf(xs_batch));
            int cls_loss = cross_entropy(tape, s_out.probs, ys_batch);
            std::map<std::string, double> terms{{"cls", tape.scalar(cls_loss)}};
            int total = tape.scale(cls_loss, static_cast<float>(cls_w));

            typename Network<float>::Out t_out{};
            if (!is_bound) t_out = net.forward(ctx, tape.leaf(xt_batch));

            auto add_term = [&](const char* name, int node, double w) {
                terms[name] = tape.scalar(node);
                total = tape.add(total, tape.scale(node, static_cast<float>(w)));
            };

            if (alg_id == "ddc" || alg_id == "mmda" || alg_id == "advskm") {
                int fs = s_out.features, ft = t_out.features;
                if (alg_id == "advskm") {
                    fs = kernel_net->forward(ctx, fs);
                    ft = kernel_net->forward(ctx, ft);
                }
                auto bank = median_bank(tape.val(fs), tape.val(ft));
                add_term("mmd", mmd(tape, fs, ft, bank), hp.weight("mmd_weight"));
            }
            if (alg_id == "deep_coral" || alg_id == "mmda")
                add_term("coral", coral(tape, s_out.features, t_out.features),
                         hp.weight("coral_weight"));
            if (alg_id == "homm")
                add_term("homm", homm(tape, s_out.features, t_out.features, 3),
                         hp.weight("homm_weight"));
            if (alg_id == "dsan") {
                auto bank = median_bank(tape.val(s_out.features), tape.val(t_out.features));
                add_term("lmmd",
                         lmmd(tape, s_out.features, ys_batch, t_out.features,
                              tape.val(t_out.probs), bank),
                         hp.weight("lmmd_weight"));
            }
            if (alg_id == "mmda" || alg_id == "cdan" || alg_id == "dirt_t")
                add_term("entropy", conditional_entropy(tape, t_out.probs),
                         hp.weight("entropy_weight"));
            if (grl_joint) {
                int ds_in = s_out.features, dt_in = t_out.features;
                if (alg_id == "cdan") {
                    ds_in = tape.outer_flatten(s_out.features, s_out.probs);
                    dt_in = tape.outer_flatten(t_out.features, t_out.probs);
                }
                int ps = tape.sigmoid(disc->forward(ctx, gradient_reversal(tape, ds_in, 1.0f)));
                int pt = tape.sigmoid(disc->forward(ctx, gradient_reversal(tape, dt_in, 1.0f)));
                add_term("domain", domain_discriminator_loss(tape, ps, pt),
                         hp.weight("adversarial_weight"));
            }
            if (alg_id == "codats") {
                // discriminator params stay out of the main optimizer; the
                // reversed gradient only shapes the feature extractor here
                int ps = tape.sigmoid(
                    disc->forward(ctx, gradient_reversal(tape, s_out.features, 1.0f)));
                int pt = tape.sigmoid(
                    disc->forward(ctx, gradient_reversal(tape, t_out.features, 1.0f)));
                add_term("domain", domain_discriminator_loss(tape, ps, pt),
                         hp.weight("adversarial_weight"));
            }
            if (alg_id == "dirt_t") {
                double vat_w = hp.weight("vat_weight");
                if (vat_w != 0.0)
                    add_term("vat", vat_loss(ctx, net, xt_batch, 1.0f, 1e-2f, 1, vat_rng),
                             vat_w);
                if (teacher) {
                    auto [tf, tprobs] = teacher->predict(xt_batch);
                    add_term("teacher", detail::kl_const_vs(tape, tprobs, t_out.probs),
                             teacher_w);
                }
            }

            terms["total"] = tape.scalar(total);
            bool finite = std::isfinite(terms["total"]);
            for (auto& [name, v] : terms) finite = finite && std::isfinite(v);
            if (!finite) {
                cand.failed = true;
                cand.failure_reason = "non-finite loss at epoch " + std::to_string(epoch);
                break;
            }

            tape.backward(total);
            opt.step(ctx);
            if (teacher) teacher->ema_update_from(net, 0.99f);

            // discriminator-only refinement on frozen features
            for (long extra = 0; extra < extra_disc_steps; ++extra) {
                Tape<float> dt_tape;
                TapeCtx<float> dctx(dt_tape, true);
                TapeCtx<float> feat_ctx(dt_tape, true);
                auto fs2 = net.forward(feat_ctx, dt_tape.leaf(xs_batch));
                auto ft2 = net.forward(feat_ctx, dt_tape.leaf(xt_batch));
                int in_s = dt_tape.detach(alg_id == "cdan"
                                              ? dt_tape.outer_flatten(fs2.features, fs2.probs)
                                              : fs2.features);
                int in_t = dt_tape.detach(alg_id == "cdan"
                                              ? dt_tape.outer_flatten(ft2.features, ft2.probs)
                                              : ft2.features);
                int ps = dt_tape.sigmoid(disc->forward(dctx, in_s));
                int pt = dt_tape.sigmoid(disc->forward(dctx, in_t));
                int dl = domain_discriminator_loss(dt_tape, ps, pt);
                dt_tape.backward(dl);
                disc_opt->step(dctx);
            }

            if (alg_id == "advskm") {
                // kernel network ascends the same discrepancy on frozen features
                Tape<float> kt;
                TapeCtx<float> kctx(kt, true);
                TapeCtx<float> fctx(kt, true);
                auto fs2 = net.forward(fctx, kt.leaf(xs_batch));
                auto ft2 = net.forward(fctx, kt.leaf(xt_batch));
                int es = kernel_net->forward(kctx, kt.detach(fs2.features));
                int et = kernel_net->forward(kctx, kt.detach(ft2.features));
                auto bank = median_bank(kt.val(es), kt.val(et));
                int neg_mmd = kt.neg(mmd(kt, es, et, bank));
                kt.backward(neg_mmd);
                kernel_opt->step(kctx);
            }

            for (auto& [name, v] : terms) sums[name] += v;
        }
        if (cand.failed) break;
        double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        EpochLog el{epoch, {}, wall};
        for (auto& [name, v] : sums) el.losses[name] = v / static_cast<double>(iters);
        cand.log.push_back(std::move(el));
    }

    (void)info;
    return cand;
}

// Eval-mode target-test metrics for a trained candidate.
inline MetricPair evaluate(CandidateModel& cand, const TimeSeriesDataset& test,
                           long eval_batch = 256) {
    std::vector<int> pred;
    pred.reserve(static_cast<std::size_t>(test.size()));
    for (long start = 0; start < test.size(); start += eval_batch) {
        std::vector<long> idx;
        for (long i = start; i < std::min(test.size(), start + eval_batch); ++i)
            idx.push_back(i);
        auto [f, p] = cand.net.predict(detail::gather_batch(test, idx));
        auto am = argmax_rows(p);
        pred.insert(pred.end(), am.begin(), am.end());
    }
    const auto& labels = test.labels();
    std::vector<int> truth(labels.begin(), labels.end());
    return {macro_f1(truth, pred, test.num_classes()), accuracy(truth, pred)};
}

}  // namespace tsda
