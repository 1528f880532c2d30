#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsda/algorithms.hpp"

namespace tsda {

enum class RiskKind { SRC, DEV, FST, TGT };

inline std::string to_string(RiskKind r) {
    switch (r) {
        case RiskKind::SRC: return "SRC";
        case RiskKind::DEV: return "DEV";
        case RiskKind::FST: return "FST";
        case RiskKind::TGT: return "TGT";
    }
    return "?";
}

inline RiskKind risk_from(const std::string& s) {
    if (s == "SRC") return RiskKind::SRC;
    if (s == "DEV") return RiskKind::DEV;
    if (s == "FST") return RiskKind::FST;
    if (s == "TGT") return RiskKind::TGT;
    throw ArgumentError("unknown risk kind: " + s);
}

// SRC and DEV never touch target labels; TGT and FST do (TGT the test split,
// FST a small labeled draw from the train split).
inline bool consumes_target_labels(RiskKind r) {
    return r == RiskKind::FST || r == RiskKind::TGT;
}

namespace detail {

inline Tensor<float> extract_features(CandidateModel& m, const Tensor<float>& samples,
                                      long batch = 256) {
    long n = samples.dim(0);
    Tensor<float> out(Shape{n, m.net.spec().feature_dim});
    for (long start = 0; start < n; start += batch) {
        long stop = std::min(n, start + batch);
        Tensor<float> chunk(Shape{stop - start, samples.dim(1), samples.dim(2)});
        std::copy_n(samples.data() + start * samples.dim(1) * samples.dim(2), chunk.numel(),
                    chunk.data());
        auto [f, p] = m.net.predict(chunk);
        std::copy_n(f.data(), f.numel(), out.data() + start * out.dim(1));
    }
    return out;
}

// per-sample cross-entropy of the candidate on a labeled set, 1e-7 clamp
inline std::vector<double> per_sample_ce(CandidateModel& m, const TimeSeriesDataset& ds,
                                         long batch = 256) {
    const auto& labels = ds.labels();
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(ds.size()));
    for (long start = 0; start < ds.size(); start += batch) {
        std::vector<long> idx;
        for (long i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
        auto [f, p] = m.net.predict(detail::gather_batch(ds, idx));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            int y = labels[static_cast<std::size_t>(idx[i])];
            double prob = std::max(static_cast<double>(p.at(static_cast<long>(i), y)), 1e-7);
            out.push_back(-std::log(prob));
        }
    }
    return out;
}

inline double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

// ---- SRC / TGT / FST ----

inline double src_risk(CandidateModel& m, const TimeSeriesDataset& source_test) {
    require(source_test.size() > 0, "src_risk: empty test set");
    return detail::mean(detail::per_sample_ce(m, source_test));
}

inline double tgt_risk(CandidateModel& m, const TimeSeriesDataset& target_test) {
    require(target_test.size() > 0, "tgt_risk: empty test set");
    return detail::mean(detail::per_sample_ce(m, target_test));
}

// q labeled target samples, stratified over classes, drawn once per scenario
// from the target train split and shared across candidates.
struct FewShotSet {
    Tensor<float> samples;  // (q, C, T)
    std::vector<int> labels;
    long per_class = 5;
};

inline FewShotSet draw_fewshot(const TimeSeriesDataset& target_train, long per_class,
                               std::uint64_t seed) {
    require(per_class >= 1, "fewshot: per_class must be >= 1");
    const auto& labels = target_train.labels();  // instrumented: FST consumes target labels
    long k = target_train.num_classes();
    std::vector<std::vector<long>> by_class(static_cast<std::size_t>(k));
    for (long i = 0; i < target_train.size(); ++i)
        by_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
    std::vector<long> chosen;
    for (long cls = 0; cls < k; ++cls) {
        auto& idx = by_class[static_cast<std::size_t>(cls)];
        if (idx.empty()) continue;
        Rng rng = Rng::stream(seed, "fewshot", static_cast<std::uint64_t>(cls));
        rng.shuffle(idx.begin(), idx.end());
        for (long i = 0; i < std::min<long>(per_class, static_cast<long>(idx.size())); ++i)
            chosen.push_back(idx[static_cast<std::size_t>(i)]);
    }
    require(!chosen.empty(), "fewshot: target train split has no labeled samples");
    std::sort(chosen.begin(), chosen.end());
    FewShotSet out;
    out.per_class = per_class;
    out.samples = detail::gather_batch(target_train, chosen);
    out.labels.reserve(chosen.size());
    for (long i : chosen) out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
}

inline double fst_risk(CandidateModel& m, const FewShotSet& fewshot) {
    require(!fewshot.labels.empty(), "fst_risk: empty few-shot set");
    auto [f, p] = m.net.predict(fewshot.samples);
    double s = 0;
    for (std::size_t i = 0; i < fewshot.labels.size(); ++i) {
        double prob =
            std::max(static_cast<double>(p.at(static_cast<long>(i), fewshot.labels[i])), 1e-7);
        s += -std::log(prob);
    }
    return s / static_cast<double>(fewshot.labels.size());
}

// ---- DEV ----

struct DevDiagnostics {
    double eta = 0.0;
    double mean_weight = 0.0;
    double weight_variance = 0.0;
    bool failed = false;
    std::string note;
};

inline void to_json(nlohmann::json& j, const DevDiagnostics& d) {
    j = {{"eta", d.eta},
         {"mean_weight", d.mean_weight},
         {"weight_variance", d.weight_variance},
         {"failed", d.failed}};
    if (!d.note.empty()) j["note"] = d.note;
}

// Importance-weighted source risk with the control-variate coefficient:
//   w_f = (Ns_tr/Nt_tr) * (1 - r)/r          (r clamped to [1e-6, 1-1e-6])
//   L_w = w_f * ce
//   eta = -Cov(L_w, W)/Var(W)                (0 when Var(W) < 1e-12)
//   R   = mean(L_w) + eta*mean(W) - eta
// The covariance is the cross-covariance of L_w against W; population
// normalization on both sides.
inline double dev_risk_from_ratios(std::vector<double> r_on_source_test,
                                   const std::vector<double>& ce, long ns_tr, long nt_tr,
                                   DevDiagnostics* diag = nullptr) {
    require(r_on_source_test.size() == ce.size() && !ce.empty(),
            "dev_risk: ratio/loss length mismatch");
    require(ns_tr > 0 && nt_tr > 0, "dev_risk: empty train splits");
    double ratio = static_cast<double>(ns_tr) / static_cast<double>(nt_tr);
    std::size_t n = ce.size();
    std::vector<double> w(n), lw(n);
    for (std::size_t i = 0; i < n; ++i) {
        double r = std::min(std::max(r_on_source_test[i], 1e-6), 1.0 - 1e-6);
        w[i] = ratio * (1.0 - r) / r;
        lw[i] = w[i] * ce[i];
    }
    double mw = detail::mean(w), ml = detail::mean(lw);
    double var_w = 0, cov = 0;
    for (std::size_t i = 0; i < n; ++i) {
        var_w += (w[i] - mw) * (w[i] - mw);
        cov += (lw[i] - ml) * (w[i] - mw);
    }
    var_w /= static_cast<double>(n);
    cov /= static_cast<double>(n);
    double eta = var_w < 1e-12 ? 0.0 : -cov / var_w;
    if (diag) {
        diag->eta = eta;
        diag->mean_weight = mw;
        diag->weight_variance = var_w;
    }
    return ml + eta * mw - eta;
}

struct DevConfig {
    long hidden = 64;
    long epochs = 100;  // full-batch steps
    double learning_rate = 1e-3;
    double beta1 = 0.5;
    double beta2 = 0.99;
    double weight_decay = 1e-4;
};

// Trains the two-layer domain ratio model on the candidate's own features
// (source train labeled 1, target train 0), then applies the weighting above
// to the source test set. Never reads target labels. Divergence marks the
// candidate's DEV entry failed instead of aborting anything.
inline double dev_risk(CandidateModel& m, const TimeSeriesDataset& source_train,
                       const TimeSeriesDataset& source_test,
                       const TimeSeriesDataset& target_train, std::uint64_t seed,
                       DevDiagnostics* diag = nullptr, const DevConfig& cfg = {}) {
    Tensor<float> zs = detail::extract_features(m, source_train.samples());
    Tensor<float> zt = detail::extract_features(m, target_train.samples());
    Tensor<float> zte = detail::extract_features(m, source_test.samples());

    Rng dr = Rng::stream(seed, "dev-disc");
    Mlp2<float> disc("dev_disc", m.net.spec().feature_dim, cfg.hidden, 1, dr);
    std::vector<Param<float>*> dp;
    disc.collect(dp);
    AdamConfig<float> acfg{static_cast<float>(cfg.learning_rate), static_cast<float>(cfg.beta1),
                           static_cast<float>(cfg.beta2), 1e-8f,
                           static_cast<float>(cfg.weight_decay)};
    Adam<float> opt(dp, acfg);

    bool diverged = false;
    for (long epoch = 0; epoch < cfg.epochs && !diverged; ++epoch) {
        Tape<float> tape;
        TapeCtx<float> ctx(tape, true);
        int ps = tape.sigmoid(disc.forward(ctx, tape.leaf(zs)));
        int pt = tape.sigmoid(disc.forward(ctx, tape.leaf(zt)));
        int loss = domain_discriminator_loss(tape, ps, pt);
        if (!std::isfinite(static_cast<double>(tape.scalar(loss)))) {
            diverged = true;
            break;
        }
        tape.backward(loss);
        opt.step(ctx);
    }
    if (diverged) {
        if (diag) {
            diag->failed = true;
            diag->note = "domain ratio model diverged";
        }
        return std::numeric_limits<double>::quiet_NaN();
    }

    std::vector<double> r;
    r.reserve(static_cast<std::size_t>(zte.dim(0)));
    {
        Tape<float> tape;
        TapeCtx<float> ctx(tape, false);
        int p = tape.sigmoid(disc.forward(ctx, tape.leaf(zte)));
        for (long i = 0; i < tape.val(p).numel(); ++i)
            r.push_back(static_cast<double>(tape.val(p)[i]));
    }
    auto ce = detail::per_sample_ce(m, source_test);
    double risk = dev_risk_from_ratios(std::move(r), ce, source_train.size(),
                                       target_train.size(), diag);
    if (!std::isfinite(risk)) {
        if (diag) {
            diag->failed = true;
            diag->note = "non-finite DEV risk";
        }
        return std::numeric_limits<double>::quiet_NaN();
    }
    return risk;
}

// ---- selection ----

// Argmin over non-failed candidates (NaN marks failure); ties break toward
// the lowest index.
inline long select_best(const std::vector<double>& risks) {
    long best = -1;
    for (std::size_t i = 0; i < risks.size(); ++i) {
        if (!std::isfinite(risks[i])) continue;
        if (best < 0 || risks[i] < risks[static_cast<std::size_t>(best)])
            best = static_cast<long>(i);
    }
    if (best < 0) throw SelectionError("select_best: every candidate failed");
    return best;
}

struct RiskReport {
    struct Row {
        long candidate = 0;
        std::map<std::string, double> risks;  // absent key = not computed
        bool failed = false;
        DevDiagnostics dev;
    };
    std::vector<Row> rows;
    std::map<std::string, long> selected;  // risk name -> candidate index
    std::string note;                      // e.g. the Cov(L_w, W) reading of the coefficient
};

// Scores every candidate under the requested risks and records the argmin
// per risk. Failed candidates keep their rows (NaN values) and are skipped
// by the selection.
inline RiskReport build_risk_report(std::vector<CandidateModel>& candidates,
                                    const DomainData& source, const DomainData& target,
                                    const FewShotSet* fewshot,
                                    const std::vector<RiskKind>& risks,
                                    std::uint64_t dev_seed) {
    require(!candidates.empty(), "risk report: no candidates");
    RiskReport rep;
    rep.note = "DEV eta uses the cross-covariance Cov(L_w, W)";
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        RiskReport::Row row;
        row.candidate = static_cast<long>(i);
        row.failed = candidates[i].failed;
        for (RiskKind rk : risks) {
            if (row.failed) {
                row.risks[to_string(rk)] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            switch (rk) {
                case RiskKind::SRC:
                    row.risks["SRC"] = src_risk(candidates[i], source.test);
                    break;
                case RiskKind::DEV:
                    row.risks["DEV"] = dev_risk(candidates[i], source.train, source.test,
                                                target.train, dev_seed, &row.dev);
                    break;
                case RiskKind::FST:
                    require(fewshot != nullptr, "risk report: FST without a few-shot set");
                    row.risks["FST"] = fst_risk(candidates[i], *fewshot);
                    break;
                case RiskKind::TGT:
                    row.risks["TGT"] = tgt_risk(candidates[i], target.test);
                    break;
            }
        }
        rep.rows.push_back(std::move(row));
    }
    for (RiskKind rk : risks) {
        std::vector<double> values;
        for (const auto& row : rep.rows)
            values.push_back(row.risks.count(to_string(rk))
                                 ? row.risks.at(to_string(rk))
                                 : std::numeric_limits<double>::quiet_NaN());
        rep.selected[to_string(rk)] = select_best(values);
    }
    return rep;
}

inline void to_json(nlohmann::json& j, const RiskReport::Row& r) {
    j = {{"candidate", r.candidate}, {"risks", nlohmann::json::object()}, {"failed", r.failed}};
    for (auto& [k, v] : r.risks)
        j["risks"][k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();
    j["dev"] = r.dev;
}

inline void to_json(nlohmann::json& j, const RiskReport& rep) {
    j = {{"rows", rep.rows}, {"selected", rep.selected}};
    if (!rep.note.empty()) j["note"] = rep.note;
}

}  // namespace tsda
