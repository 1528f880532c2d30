#pragma once

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tsda/nn.hpp"

namespace tsda {

enum class BackboneKind { cnn1d, resnet18_1d, tcn };

inline std::string to_string(BackboneKind k) {
    switch (k) {
        case BackboneKind::cnn1d: return "cnn1d";
        case BackboneKind::resnet18_1d: return "resnet18_1d";
        case BackboneKind::tcn: return "tcn";
    }
    return "?";
}

inline BackboneKind backbone_kind_from(const std::string& s) {
    if (s == "cnn1d") return BackboneKind::cnn1d;
    if (s == "resnet18_1d") return BackboneKind::resnet18_1d;
    if (s == "tcn") return BackboneKind::tcn;
    throw ArgumentError("unknown backbone kind: " + s);
}

struct BackboneSpec {
    BackboneKind kind = BackboneKind::cnn1d;
    long input_channels = 1;
    long first_kernel = 7;  // phi_k
    long first_stride = 1;  // phi_s
    long feature_dim = 128;
    long num_classes = 2;
    // widths beyond the first layer; defaults follow the feature dim
    long cnn_hidden1 = 64;
    long cnn_hidden2 = 128;
    long tcn_kernel = 3;

    void validate() const {
        require(feature_dim > 0, "backbone: feature_dim must be positive");
        require(first_kernel >= 1 && first_stride >= 1, "backbone: bad first layer");
        require(input_channels >= 1, "backbone: input_channels must be >= 1");
        require(num_classes >= 2, "backbone: num_classes must be >= 2");
    }
};

inline void to_json(nlohmann::json& j, const BackboneSpec& s) {
    j = {{"kind", to_string(s.kind)},
         {"input_channels", s.input_channels},
         {"first_kernel", s.first_kernel},
         {"first_stride", s.first_stride},
         {"feature_dim", s.feature_dim},
         {"num_classes", s.num_classes},
         {"cnn_hidden1", s.cnn_hidden1},
         {"cnn_hidden2", s.cnn_hidden2},
         {"tcn_kernel", s.tcn_kernel}};
}

inline void from_json(const nlohmann::json& j, BackboneSpec& s) {
    s.kind = backbone_kind_from(j.at("kind").get<std::string>());
    s.input_channels = j.at("input_channels").get<long>();
    s.first_kernel = j.value("first_kernel", 7L);
    s.first_stride = j.value("first_stride", 1L);
    s.feature_dim = j.value("feature_dim", 128L);
    s.num_classes = j.at("num_classes").get<long>();
    s.cnn_hidden1 = j.value("cnn_hidden1", 64L);
    s.cnn_hidden2 = j.value("cnn_hidden2", 128L);
    s.tcn_kernel = j.value("tcn_kernel", 3L);
}

// Feature extractor interface: (B,C,T) -> (B,D). prepool, when requested,
// receives the last (B,*,T') node before global temporal pooling.
template <typename T>
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual int forward(TapeCtx<T>& ctx, int x, int* prepool = nullptr) = 0;
    virtual void collect(std::vector<Param<T>*>& out) = 0;
    virtual void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) = 0;
};

// Three conv blocks (conv -> batchnorm -> relu -> maxpool), then global
// average pooling over time.
template <typename T>
class Cnn1dExtractor final : public FeatureExtractor<T> {
public:
    Cnn1dExtractor(const BackboneSpec& s, Rng rng)
        : c1_("extractor.c1", s.input_channels, s.cnn_hidden1, s.first_kernel, s.first_stride, 1,
              s.first_kernel / 2, s.first_kernel / 2, rng),
          b1_("extractor.b1", s.cnn_hidden1),
          c2_("extractor.c2", s.cnn_hidden1, s.cnn_hidden2, kMidKernel, 1, 1, kMidKernel / 2,
              kMidKernel / 2, rng),
          b2_("extractor.b2", s.cnn_hidden2),
          c3_("extractor.c3", s.cnn_hidden2, s.feature_dim, kMidKernel, 1, 1, kMidKernel / 2,
              kMidKernel / 2, rng),
          b3_("extractor.b3", s.feature_dim) {}

    int forward(TapeCtx<T>& ctx, int x, int* prepool = nullptr) override {
        auto& tp = ctx.tape;
        x = tp.maxpool1d(tp.relu(b1_.forward(ctx, c1_.forward(ctx, x))), 2, 2);
        x = tp.maxpool1d(tp.relu(b2_.forward(ctx, c2_.forward(ctx, x))), 2, 2);
        x = tp.maxpool1d(tp.relu(b3_.forward(ctx, c3_.forward(ctx, x))), 2, 2);
        if (prepool) *prepool = x;
        return tp.avgpool_time(x);
    }

    void collect(std::vector<Param<T>*>& out) override {
        c1_.collect(out); b1_.collect(out);
        c2_.collect(out); b2_.collect(out);
        c3_.collect(out); b3_.collect(out);
    }

    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
        b1_.collect_buffers(out);
        b2_.collect_buffers(out);
        b3_.collect_buffers(out);
    }

private:
    static constexpr long kMidKernel = 8;
    Conv1d<T> c1_; BatchNorm1d<T> b1_;
    Conv1d<T> c2_; BatchNorm1d<T> b2_;
    Conv1d<T> c3_; BatchNorm1d<T> b3_;
};

template <typename T>
class BasicBlock1d {
public:
    BasicBlock1d() = default;
    BasicBlock1d(const std::string& name, long in_ch, long out_ch, long stride, Rng& rng)
        : c1_(name + ".c1", in_ch, out_ch, 3, stride, 1, 1, 1, rng),
          b1_(name + ".b1", out_ch),
          c2_(name + ".c2", out_ch, out_ch, 3, 1, 1, 1, 1, rng),
          b2_(name + ".b2", out_ch),
          has_proj_(stride != 1 || in_ch != out_ch) {
        if (has_proj_) {
            proj_ = Conv1d<T>(name + ".proj", in_ch, out_ch, 1, stride, 1, 0, 0, rng);
            bproj_ = BatchNorm1d<T>(name + ".bproj", out_ch);
        }
    }

    int forward(TapeCtx<T>& ctx, int x) {
        auto& tp = ctx.tape;
        int h = tp.relu(b1_.forward(ctx, c1_.forward(ctx, x)));
        h = b2_.forward(ctx, c2_.forward(ctx, h));
        int skip = has_proj_ ? bproj_.forward(ctx, proj_.forward(ctx, x)) : x;
        return tp.relu(tp.add(h, skip));
    }

    void collect(std::vector<Param<T>*>& out) {
        c1_.collect(out); b1_.collect(out);
        c2_.collect(out); b2_.collect(out);
        if (has_proj_) { proj_.collect(out); bproj_.collect(out); }
    }

    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
        b1_.collect_buffers(out);
        b2_.collect_buffers(out);
        if (has_proj_) bproj_.collect_buffers(out);
    }

private:
    Conv1d<T> c1_; BatchNorm1d<T> b1_;
    Conv1d<T> c2_; BatchNorm1d<T> b2_;
    bool has_proj_ = false;
    Conv1d<T> proj_; BatchNorm1d<T> bproj_;
};

// 18-layer residual stack with 1-D convolutions. Stage widths scale with the
// feature dim (D/8, D/4, D/2, D) so every backbone ends at the same D.
template <typename T>
class ResNet18Extractor final : public FeatureExtractor<T> {
public:
    ResNet18Extractor(const BackboneSpec& s, Rng rng)
        : stem_("extractor.stem", s.input_channels, width(s, 8), s.first_kernel, s.first_stride, 1,
                s.first_kernel / 2, s.first_kernel / 2, rng),
          bstem_("extractor.bstem", width(s, 8)) {
        long w[4] = {width(s, 8), width(s, 4), width(s, 2), width(s, 1)};
        long in = w[0];
        for (int stage = 0; stage < 4; ++stage) {
            long stride = stage == 0 ? 1 : 2;
            std::string base = "extractor.s" + std::to_string(stage + 1);
            blocks_.emplace_back(base + ".a", in, w[stage], stride, rng);
            blocks_.emplace_back(base + ".b", w[stage], w[stage], 1, rng);
            in = w[stage];
        }
    }

    int forward(TapeCtx<T>& ctx, int x, int* prepool = nullptr) override {
        auto& tp = ctx.tape;
        x = tp.relu(bstem_.forward(ctx, stem_.forward(ctx, x)));
        x = tp.maxpool1d(x, 3, 2);
        for (auto& b : blocks_) x = b.forward(ctx, x);
        if (prepool) *prepool = x;
        return tp.avgpool_time(x);
    }

    void collect(std::vector<Param<T>*>& out) override {
        stem_.collect(out);
        bstem_.collect(out);
        for (auto& b : blocks_) b.collect(out);
    }

    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
        bstem_.collect_buffers(out);
        for (auto& b : blocks_) b.collect_buffers(out);
    }

private:
    static long width(const BackboneSpec& s, long div) {
        return std::max<long>(1, s.feature_dim / div);
    }
    Conv1d<T> stem_; BatchNorm1d<T> bstem_;
    std::vector<BasicBlock1d<T>> blocks_;
};

// Causal dilated residual blocks, dilation doubling per level. Left-only
// padding keeps every activation at time t a function of inputs <= t.
template <typename T>
class TcnExtractor final : public FeatureExtractor<T> {
public:
    TcnExtractor(const BackboneSpec& s, Rng rng) {
        long d = s.feature_dim;
        std::vector<long> chans = {std::max<long>(1, d / 2), std::max<long>(1, d * 5 / 8),
                                   std::max<long>(1, d * 3 / 4), d};
        long in = s.input_channels;
        long k = s.tcn_kernel;
        for (std::size_t i = 0; i < chans.size(); ++i) {
            long dil = 1L << i;
            std::string base = "extractor.l" + std::to_string(i);
            levels_.push_back(Level{
                Conv1d<T>(base + ".c1", in, chans[i], k, 1, dil, (k - 1) * dil, 0, rng),
                BatchNorm1d<T>(base + ".b1", chans[i]),
                Conv1d<T>(base + ".c2", chans[i], chans[i], k, 1, dil, (k - 1) * dil, 0, rng),
                BatchNorm1d<T>(base + ".b2", chans[i]),
                in != chans[i],
                in != chans[i] ? Conv1d<T>(base + ".proj", in, chans[i], 1, 1, 1, 0, 0, rng)
                               : Conv1d<T>(),
            });
            in = chans[i];
        }
    }

    int forward(TapeCtx<T>& ctx, int x, int* prepool = nullptr) override {
        auto& tp = ctx.tape;
        for (auto& l : levels_) {
            int h = tp.relu(l.b1.forward(ctx, l.c1.forward(ctx, x)));
            h = tp.relu(l.b2.forward(ctx, l.c2.forward(ctx, h)));
            int skip = l.has_proj ? l.proj.forward(ctx, x) : x;
            x = tp.relu(tp.add(h, skip));
        }
        if (prepool) *prepool = x;
        return tp.avgpool_time(x);
    }

    void collect(std::vector<Param<T>*>& out) override {
        for (auto& l : levels_) {
            l.c1.collect(out); l.b1.collect(out);
            l.c2.collect(out); l.b2.collect(out);
            if (l.has_proj) l.proj.collect(out);
        }
    }

    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
        for (auto& l : levels_) {
            l.b1.collect_buffers(out);
            l.b2.collect_buffers(out);
        }
    }

private:
    struct Level {
        Conv1d<T> c1; BatchNorm1d<T> b1;
        Conv1d<T> c2; BatchNorm1d<T> b2;
        bool has_proj;
        Conv1d<T> proj;
    };
    std::vector<Level> levels_;
};

template <typename T>
std::unique_ptr<FeatureExtractor<T>> build_extractor(const BackboneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng = Rng::stream(seed, "backbone");
    switch (spec.kind) {
        case BackboneKind::cnn1d: return std::make_unique<Cnn1dExtractor<T>>(spec, rng);
        case BackboneKind::resnet18_1d: return std::make_unique<ResNet18Extractor<T>>(spec, rng);
        case BackboneKind::tcn: return std::make_unique<TcnExtractor<T>>(spec, rng);
    }
    throw ArgumentError("unknown backbone kind");
}

// Extractor plus softmax classifier head. Owns every trainable tensor of a
// candidate model.
template <typename T>
class Network {
public:
    Network() = default;
    Network(BackboneSpec spec, std::uint64_t seed)
        : spec_(spec), extractor_(build_extractor<T>(spec, seed)) {
        Rng head_rng = Rng::stream(seed, "classifier");
        head_ = Linear<T>("head", spec.feature_dim, spec.num_classes, head_rng);
    }

    struct Out {
        int features;
        int logits;
        int probs;
    };

    Out forward(TapeCtx<T>& ctx, int x, int* prepool = nullptr) {
        const auto& shape = ctx.tape.val(x).shape();
        require(shape.size() == 3 && shape[1] == spec_.input_channels,
                "network: input shape mismatch");
        int f = extractor_->forward(ctx, x, prepool);
        int logits = head_.forward(ctx, f);
        return {f, logits, ctx.tape.softmax_rows(logits)};
    }

    // Eval-mode forward on plain tensors.
    std::pair<Tensor<T>, Tensor<T>> predict(const Tensor<T>& x) {
        Tape<T> tape;
        TapeCtx<T> ctx{tape, false};
        int xin = tape.leaf(x);
        Out o = forward(ctx, xin);
        return {tape.val(o.features), tape.val(o.probs)};
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        extractor_->collect(out);
        head_.collect(out);
        return out;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        extractor_->collect_buffers(out);
        return out;
    }

    long param_count() {
        long n = 0;
        for (auto* p : params()) n += p->value.numel();
        return n;
    }

    void copy_state_from(Network& other) {
        auto dst = params();
        auto src = other.params();
        require(dst.size() == src.size(), "copy_state_from: parameter sets differ");
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
        auto db = buffers();
        auto sb = other.buffers();
        for (std::size_t i = 0; i < db.size(); ++i) *db[i].second = *sb[i].second;
    }

    // theta_self = decay*theta_self + (1-decay)*theta_other, buffers included
    void ema_update_from(Network& other, T decay) {
        auto dst = params();
        auto src = other.params();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            auto& d = dst[i]->value;
            const auto& s = src[i]->value;
            for (long j = 0; j < d.numel(); ++j) d[j] = decay * d[j] + (T(1) - decay) * s[j];
        }
        auto db = buffers();
        auto sb = other.buffers();
        for (std::size_t i = 0; i < db.size(); ++i) {
            auto& d = *db[i].second;
            const auto& s = *sb[i].second;
            for (long j = 0; j < d.numel(); ++j) d[j] = decay * d[j] + (T(1) - decay) * s[j];
        }
    }

    const BackboneSpec& spec() const { return spec_; }
    Linear<T>& head() { return head_; }
    FeatureExtractor<T>& extractor() { return *extractor_; }

private:
    BackboneSpec spec_;
    std::unique_ptr<FeatureExtractor<T>> extractor_;
    Linear<T> head_;
};

// ---- checkpoint container ----
// Layout: magic "TSCK1\n", u32 header length, JSON header, then raw f32le
// blobs in header order.

struct CheckpointMeta {
    std::string algorithm;
    nlohmann::json hparams = nlohmann::json::object();
    nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <typename T>
void save_checkpoint(Network<T>& net, const CheckpointMeta& meta, const std::string& path) {
    std::vector<std::pair<std::string, const Tensor<T>*>> blobs;
    for (auto* p : net.params()) blobs.emplace_back(p->name, &p->value);
    for (auto& [name, t] : net.buffers()) blobs.emplace_back(name, t);

    nlohmann::json header = {{"format", "TSCK1"},
                             {"version", 1},
                             {"backbone", net.spec()},
                             {"algorithm", meta.algorithm},
                             {"hparams", meta.hparams},
                             {"metadata", meta.metadata}};
    auto& jb = header["blobs"] = nlohmann::json::array();
    for (auto& [name, t] : blobs) jb.push_back({{"name", name}, {"shape", t->shape()}});

    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint for writing: " + path);
    os.write("TSCK1\n", 6);
    std::string hs = header.dump();
    detail::write_u32(os, static_cast<std::uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (auto& [name, t] : blobs) {
        for (long i = 0; i < t->numel(); ++i) {
            float f = static_cast<float>((*t)[i]);
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
    if (!os) throw Error("checkpoint write failed: " + path);
}

template <typename T>
Network<T> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path);
    char magic[6];
    is.read(magic, 6);
    if (!is || std::memcmp(magic, "TSCK1\n", 6) != 0)
        throw Error("bad checkpoint magic: " + path);
    std::uint32_t hlen = detail::read_u32(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    nlohmann::json header = nlohmann::json::parse(hs);

    BackboneSpec spec = header.at("backbone").get<BackboneSpec>();
    Network<T> net(spec, 0);
    if (meta) {
        meta->algorithm = header.value("algorithm", "");
        meta->hparams = header.value("hparams", nlohmann::json::object());
        meta->metadata = header.value("metadata", nlohmann::json::object());
    }

    std::vector<std::pair<std::string, Tensor<T>*>> slots;
    for (auto* p : net.params()) slots.emplace_back(p->name, &p->value);
    for (auto& [name, t] : net.buffers()) slots.emplace_back(name, t);

    const auto& jb = header.at("blobs");
    require(jb.size() == slots.size(), "checkpoint: blob count mismatch");
    for (std::size_t i = 0; i < slots.size(); ++i) {
        require(jb[i].at("name").get<std::string>() == slots[i].first,
                "checkpoint: blob name mismatch at index " + std::to_string(i));
        Shape shape = jb[i].at("shape").get<Shape>();
        require(shape == slots[i].second->shape(), "checkpoint: blob shape mismatch");
        for (long e = 0; e < slots[i].second->numel(); ++e) {
            float f;
            is.read(reinterpret_cast<char*>(&f), 4);
            (*slots[i].second)[e] = static_cast<T>(f);
        }
    }
    if (!is) throw Error("checkpoint truncated: " + path);
    return net;
}

}  // namespace tsda
