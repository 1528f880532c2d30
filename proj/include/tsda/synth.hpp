#pragma once

#include <json.hpp>

#include <cmath>
#include <vector>

#include "tsda/data.hpp"

namespace tsda {

// One domain of the synthetic process. The class signal is a sinusoid whose
// frequency identifies the class; amplitude scale, offset and noise are the
// nuisance parameters a domain may shift.
struct SynthDomainParams {
    double amp_scale = 1.0;
    double amp_jitter = 0.03;  // multiplicative, U(-j, j) per sample
    double offset = 0.0;
    double noise_sigma = 0.35;
};

inline void to_json(nlohmann::json& j, const SynthDomainParams& p) {
    j = {{"amp_scale", p.amp_scale},
         {"amp_jitter", p.amp_jitter},
         {"offset", p.offset},
         {"noise_sigma", p.noise_sigma}};
}
inline void from_json(const nlohmann::json& j, SynthDomainParams& p) {
    p.amp_scale = j.value("amp_scale", 1.0);
    p.amp_jitter = j.value("amp_jitter", 0.03);
    p.offset = j.value("offset", 0.0);
    p.noise_sigma = j.value("noise_sigma", 0.35);
}

// Class k of channel c oscillates at class_freqs[k] * (c+1) cycles per
// window; the per-class base amplitude grows additively with class_amp_slope,
// so a global amplitude shift changes the relative class-amplitude pattern
// even after z-score normalization while the frequency semantics stay put.
struct SynthSpec {
    long num_classes = 5;
    long channels = 3;
    long length = 64;
    long train_per_class = 60;
    long test_per_class = 25;
    std::vector<double> class_freqs;   // defaults to 3.0 + 0.2*k when empty
    double channel_freq_spread = 0.25;  // channel c runs at f * (1 + spread*c)
    double class_amp_slope = 0.7;
    SynthDomainParams source;
    SynthDomainParams target;
    bool normalize_output = true;

    std::vector<double> freqs() const {
        if (!class_freqs.empty()) return class_freqs;
        std::vector<double> f(static_cast<std::size_t>(num_classes));
        for (long k = 0; k < num_classes; ++k) f[static_cast<std::size_t>(k)] = 3.0 + 0.2 * k;
        return f;
    }

    double channel_factor(long c) const { return 1.0 + channel_freq_spread * c; }

    void validate() const {
        if (num_classes < 2) throw ArgumentError("synth: need at least two classes");
        if (channels < 1 || length < 8) throw ArgumentError("synth: degenerate shape");
        if (train_per_class < 2 || test_per_class < 1)
            throw ArgumentError("synth: need at least two train and one test sample per class");
        if (!class_freqs.empty() &&
            static_cast<long>(class_freqs.size()) != num_classes)
            throw ArgumentError("synth: class_freqs must have one entry per class");
        if (channel_freq_spread < 0)
            throw ArgumentError("synth: negative channel frequency spread");
        for (double f : freqs())
            if (!(f > 0.0) || f * channel_factor(channels - 1) >= length / 2.0)
                throw ArgumentError("synth: class frequency out of the representable band");
        if (source.noise_sigma < 0 || target.noise_sigma < 0)
            throw ArgumentError("synth: negative noise level");
    }

    // Identical source/target process.
    static SynthSpec zero_shift() { return SynthSpec{}; }

    // Calibrated marginal shift: amplitude scale doubled, noise sigma
    // doubled, constant offset added. Frozen together with the benchmark
    // margins; edit only alongside them.
    static SynthSpec shifted() {
        SynthSpec s;
        s.target.amp_scale = 2.0;
        s.target.noise_sigma = 2.0 * s.source.noise_sigma;
        s.target.offset = 0.5;
        return s;
    }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
    j = {{"num_classes", s.num_classes},
         {"channels", s.channels},
         {"length", s.length},
         {"train_per_class", s.train_per_class},
         {"test_per_class", s.test_per_class},
         {"class_amp_slope", s.class_amp_slope},
         {"channel_freq_spread", s.channel_freq_spread},
         {"source", s.source},
         {"target", s.target},
         {"normalize_output", s.normalize_output}};
    if (!s.class_freqs.empty()) j["class_freqs"] = s.class_freqs;
}
inline void from_json(const nlohmann::json& j, SynthSpec& s) {
    s.num_classes = j.value("num_classes", 5L);
    s.channels = j.value("channels", 3L);
    s.length = j.value("length", 64L);
    s.train_per_class = j.value("train_per_class", 60L);
    s.test_per_class = j.value("test_per_class", 25L);
    s.class_amp_slope = j.value("class_amp_slope", 0.7);
    s.channel_freq_spread = j.value("channel_freq_spread", 0.25);
    s.class_freqs = j.value("class_freqs", std::vector<double>{});
    if (j.contains("source")) s.source = j.at("source").get<SynthDomainParams>();
    if (j.contains("target")) s.target = j.at("target").get<SynthDomainParams>();
    s.normalize_output = j.value("normalize_output", true);
}

struct SyntheticPair {
    DomainData source;
    DomainData target;
};

namespace detail {

inline TimeSeriesDataset synth_split(const SynthSpec& spec, const SynthDomainParams& dp,
                                     long per_class, Split split, Rng rng,
                                     const std::string& name) {
    auto freqs = spec.freqs();
    long n = per_class * spec.num_classes;
    Tensor<float> samples(Shape{n, spec.channels, spec.length});
    std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
    long row = 0;
    for (long k = 0; k < spec.num_classes; ++k) {
        for (long i = 0; i < per_class; ++i, ++row) {
            labels[static_cast<std::size_t>(row)] = static_cast<std::int32_t>(k);
            double base_amp = dp.amp_scale + spec.class_amp_slope * static_cast<double>(k);
            double amp = base_amp * (1.0 + dp.amp_jitter * rng.uniform(-1.0, 1.0));
            for (long c = 0; c < spec.channels; ++c) {
                double f = freqs[static_cast<std::size_t>(k)] * spec.channel_factor(c);
                double phase = rng.uniform(0.0, 2.0 * M_PI);
                for (long t = 0; t < spec.length; ++t) {
                    double v = dp.offset +
                               amp * std::sin(2.0 * M_PI * f * t / spec.length + phase) +
                               dp.noise_sigma * rng.normal();
                    samples.at(row, c, t) = static_cast<float>(v);
                }
            }
        }
    }
    return TimeSeriesDataset(name, std::move(samples), std::move(labels), spec.num_classes,
                             split);
}

}  // namespace detail

// Two-domain synthetic pair with shared class semantics. Both domains get
// the standard preprocessing treatment (per-domain train-statistics
// normalization) unless normalize_output is off. Bit-deterministic per seed.
inline SyntheticPair make_synthetic(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    SyntheticPair out{
        {detail::synth_split(spec, spec.source, spec.train_per_class, Split::train,
                             Rng::stream(seed, "synth-src-train"), "synth"),
         detail::synth_split(spec, spec.source, spec.test_per_class, Split::test,
                             Rng::stream(seed, "synth-src-test"), "synth")},
        {detail::synth_split(spec, spec.target, spec.train_per_class, Split::train,
                             Rng::stream(seed, "synth-tgt-train"), "synth"),
         detail::synth_split(spec, spec.target, spec.test_per_class, Split::test,
                             Rng::stream(seed, "synth-tgt-test"), "synth")}};
    if (spec.normalize_output) {
        auto [src_tr, src_te] = normalize(out.source.train, out.source.test);
        out.source = {std::move(src_tr), std::move(src_te)};
        auto [tgt_tr, tgt_te] = normalize(out.target.train, out.target.test);
        out.target = {std::move(tgt_tr), std::move(tgt_te)};
    }
    return out;
}

}  // namespace tsda
