#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "support/gradcheck.hpp"
#include "tsda/backbones.hpp"
#include "tsda/losses.hpp"

using namespace tsda;

namespace {

BackboneSpec tiny_spec(BackboneKind kind) {
    BackboneSpec s;
    s.kind = kind;
    s.input_channels = 2;
    s.first_kernel = 3;
    s.first_stride = 1;
    s.feature_dim = 8;
    s.num_classes = 3;
    s.cnn_hidden1 = 4;
    s.cnn_hidden2 = 6;
    return s;
}

BackboneSpec default_spec(BackboneKind kind) {
    BackboneSpec s;
    s.kind = kind;
    s.input_channels = 9;
    s.first_kernel = 7;
    s.first_stride = 1;
    s.feature_dim = 128;
    s.num_classes = 6;
    return s;
}

template <typename T>
Tensor<T> random_input(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<T> x(std::move(s));
    for (long i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.normal());
    return x;
}

const std::vector<BackboneKind> kAllKinds{BackboneKind::cnn1d, BackboneKind::resnet18_1d,
                                          BackboneKind::tcn};

}  // namespace

TEST_CASE("same seed builds identical parameters") {
    for (auto kind : kAllKinds) {
        Network<float> a(tiny_spec(kind), 99);
        Network<float> b(tiny_spec(kind), 99);
        auto pa = a.params();
        auto pb = b.params();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
        Network<float> c(tiny_spec(kind), 100);
        bool any_diff = false;
        auto pc = c.params();
        for (std::size_t i = 0; i < pa.size(); ++i)
            if (!(pa[i]->value == pc[i]->value)) any_diff = true;
        CHECK(any_diff);
    }
}

TEST_CASE("forward maps (2,9,128) to (2,D) features and simplex probs") {
    for (auto kind : kAllKinds) {
        auto spec = default_spec(kind);
        Network<float> net(spec, 1);
        auto x = random_input<float>({2, 9, 128}, 5);
        auto [features, probs] = net.predict(x);
        CHECK(features.shape() == Shape{2, 128});
        CHECK(probs.shape() == Shape{2, 6});
        CHECK(features.all_finite());
        for (long i = 0; i < 2; ++i) {
            float row = 0;
            for (long j = 0; j < 6; ++j) {
                row += probs.at(i, j);
                CHECK(probs.at(i, j) >= 0.0f);
            }
            CHECK_THAT(row, Catch::Matchers::WithinAbs(1.0, 1e-6));
        }
    }
}

TEST_CASE("empty batch produces empty outputs with correct trailing dims") {
    Network<float> net(tiny_spec(BackboneKind::cnn1d), 3);
    Tensor<float> x(Shape{0, 2, 16});
    auto [features, probs] = net.predict(x);
    CHECK(features.shape() == Shape{0, 8});
    CHECK(probs.shape() == Shape{0, 3});
}

TEST_CASE("duplicated batch rows give duplicated outputs in eval mode") {
    for (auto kind : kAllKinds) {
        Network<float> net(tiny_spec(kind), 17);
        auto x1 = random_input<float>({1, 2, 32}, 9);
        Tensor<float> x2(Shape{2, 2, 32});
        for (long i = 0; i < x1.numel(); ++i) {
            x2[i] = x1[i];
            x2[i + x1.numel()] = x1[i];
        }
        auto [f, p] = net.predict(x2);
        for (long j = 0; j < f.dim(1); ++j)
            CHECK(f.at(0, j) == f.at(1, j));
        for (long j = 0; j < p.dim(1); ++j)
            CHECK(p.at(0, j) == p.at(1, j));
    }
}

TEST_CASE("input shape mismatch rejected") {
    Network<float> net(tiny_spec(BackboneKind::cnn1d), 3);
    Tensor<float> bad(Shape{2, 5, 16});
    CHECK_THROWS_AS(net.predict(bad), ArgumentError);
}

TEST_CASE("unknown kind and invalid specs rejected") {
    CHECK_THROWS_AS(backbone_kind_from("lstm"), ArgumentError);
    BackboneSpec s = tiny_spec(BackboneKind::cnn1d);
    s.feature_dim = 0;
    CHECK_THROWS_AS(build_extractor<float>(s, 1), ArgumentError);
    s = tiny_spec(BackboneKind::cnn1d);
    s.first_stride = 0;
    CHECK_THROWS_AS(build_extractor<float>(s, 1), ArgumentError);
}

TEST_CASE("tcn causality probe") {
    auto spec = tiny_spec(BackboneKind::tcn);
    Network<float> net(spec, 23);
    const long Tlen = 32;
    auto x = random_input<float>({1, 2, Tlen}, 31);

    auto prepool_of = [&](const Tensor<float>& input) {
        Tape<float> tp;
        TapeCtx<float> ctx(tp, false);
        int pre = -1;
        net.forward(ctx, tp.leaf(input), &pre);
        return tp.val(pre);
    };

    Tensor<float> base = prepool_of(x);
    for (long t : {5L, 16L, 31L}) {
        Tensor<float> xp = x;
        for (long c = 0; c < 2; ++c) xp.at(0, c, t) += 3.5f;
        Tensor<float> perturbed = prepool_of(xp);
        REQUIRE(perturbed.shape() == base.shape());
        bool before_unchanged = true;
        bool at_or_after_changed = false;
        for (long ch = 0; ch < base.dim(1); ++ch)
            for (long u = 0; u < Tlen; ++u) {
                bool same = base.at(0, ch, u) == perturbed.at(0, ch, u);
                if (u < t && !same) before_unchanged = false;
                if (u >= t && !same) at_or_after_changed = true;
            }
        CHECK(before_unchanged);
        CHECK(at_or_after_changed);
    }
}

TEST_CASE("parameter counts strictly ordered cnn1d < tcn < resnet18_1d") {
    Network<float> cnn(default_spec(BackboneKind::cnn1d), 1);
    Network<float> tcn(default_spec(BackboneKind::tcn), 1);
    Network<float> res(default_spec(BackboneKind::resnet18_1d), 1);
    INFO("cnn=" << cnn.param_count() << " tcn=" << tcn.param_count()
                << " resnet=" << res.param_count());
    CHECK(cnn.param_count() < tcn.param_count());
    CHECK(tcn.param_count() < res.param_count());
}

TEST_CASE("backbone gradients match finite differences at tiny width") {
    std::vector<int> labels{0, 2};
    for (auto kind : kAllKinds) {
        DYNAMIC_SECTION("kind " << to_string(kind)) {
            Network<float> net(tiny_spec(kind), 77);
            auto x = random_input<float>({2, 2, 16}, 13);

            auto loss_value = [&]() {
                Tape<float> tp;
                TapeCtx<float> ctx(tp, false);
                auto out = net.forward(ctx, tp.leaf(x));
                return static_cast<double>(tp.scalar(cross_entropy(tp, out.probs, labels)));
            };

            std::vector<Tensor<float>*> inputs;
            std::vector<Tensor<float>> analytic;
            {
                Tape<float> tp;
                TapeCtx<float> ctx(tp, false);
                auto out = net.forward(ctx, tp.leaf(x));
                int loss = cross_entropy(tp, out.probs, labels);
                tp.backward(loss);
                for (auto* p : net.params()) {
                    inputs.push_back(&p->value);
                    analytic.push_back(ctx.grad_of(*p));
                }
            }
            // rtol 1e-3 with the float32 finite-difference noise floor as the
            // absolute term (the caffe GradientChecker convention); h small
            // enough that relu/maxpool kink crossings stay rare
            auto res = testsupport::check_gradients<float>(inputs, loss_value, analytic, 1e-3,
                                                           1e-3, 5e-4);
            INFO(res.detail);
            CHECK(res.ok);
        }
    }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    auto dir = std::filesystem::temp_directory_path() / "tsda_ckpt_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "net.ckpt").string();

    Network<float> net(tiny_spec(BackboneKind::resnet18_1d), 5);
    // make buffers non-trivial
    auto bufs = net.buffers();
    Rng rng(6);
    for (auto& [name, t] : bufs)
        for (long i = 0; i < t->numel(); ++i) (*t)[i] += static_cast<float>(rng.uniform());

    CheckpointMeta meta;
    meta.algorithm = "ddc";
    meta.hparams = {{"learning_rate", 0.003}, {"mmd_weight", 1.5}};
    meta.metadata = {{"final_f1", 0.82}};
    save_checkpoint(net, meta, path);

    CheckpointMeta loaded_meta;
    auto loaded = load_checkpoint<float>(path, &loaded_meta);
    CHECK(loaded_meta.algorithm == "ddc");
    CHECK(loaded_meta.hparams.at("mmd_weight").get<double>() == 1.5);

    auto pa = net.params();
    auto pb = loaded.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        CHECK(pa[i]->value == pb[i]->value);
    }
    auto ba = net.buffers();
    auto bb = loaded.buffers();
    for (std::size_t i = 0; i < ba.size(); ++i) CHECK(*ba[i].second == *bb[i].second);

    // save -> load -> save must produce identical bytes
    auto path2 = (dir / "net2.ckpt").string();
    save_checkpoint(loaded, meta, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    std::filesystem::remove_all(dir);
}
