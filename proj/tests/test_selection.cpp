#include <catch2/catch_amalgamated.hpp>

#include "tsda/risks.hpp"
#include "tsda/synth.hpp"

using namespace tsda;

namespace {

SyntheticPair tiny_pair(std::uint64_t seed = 5) {
    SynthSpec s;
    s.num_classes = 2;
    s.channels = 1;
    s.length = 16;
    s.train_per_class = 12;
    s.test_per_class = 6;
    s.class_freqs = {2.0, 4.0};
    return make_synthetic(s, seed);
}

BackboneSpec tiny_backbone() {
    BackboneSpec b;
    b.kind = BackboneKind::cnn1d;
    b.input_channels = 1;
    b.first_kernel = 3;
    b.feature_dim = 8;
    b.num_classes = 2;
    b.cnn_hidden1 = 4;
    b.cnn_hidden2 = 6;
    return b;
}

// candidate with zeroed head: uniform probabilities regardless of input
CandidateModel uniform_candidate() {
    CandidateModel c{Network<float>(tiny_backbone(), 1), "source_only", {}, {}, false, {}};
    for (long i = 0; i < c.net.head().weight.value.numel(); ++i)
        c.net.head().weight.value[i] = 0.0f;
    for (long i = 0; i < c.net.head().bias.value.numel(); ++i)
        c.net.head().bias.value[i] = 0.0f;
    return c;
}

}  // namespace

TEST_CASE("src and tgt risks") {
    auto pair = tiny_pair();

    SECTION("uniform-output model scores ln K") {
        auto cand = uniform_candidate();
        CHECK_THAT(src_risk(cand, pair.source.test),
                   Catch::Matchers::WithinAbs(std::log(2.0), 1e-6));
        CHECK_THAT(tgt_risk(cand, pair.target.test),
                   Catch::Matchers::WithinAbs(std::log(2.0), 1e-6));
    }
    SECTION("random model matches the per-sample oracle mean") {
        CandidateModel cand{Network<float>(tiny_backbone(), 7), "source_only", {}, {}, false, {}};
        auto [f, p] = cand.net.predict(pair.source.test.samples());
        double s = 0;
        const auto& y = pair.source.test.labels_raw();
        for (long i = 0; i < pair.source.test.size(); ++i)
            s -= std::log(std::max(static_cast<double>(p.at(i, y[static_cast<std::size_t>(i)])),
                                   1e-7));
        s /= static_cast<double>(pair.source.test.size());
        CHECK_THAT(src_risk(cand, pair.source.test), Catch::Matchers::WithinAbs(s, 1e-7));
    }
    SECTION("empty test set rejected") {
        auto cand = uniform_candidate();
        Tensor<float> none(Shape{0, 1, 16});
        TimeSeriesDataset empty("e", std::move(none), {}, 2, Split::test);
        CHECK_THROWS_AS(src_risk(cand, empty), ArgumentError);
    }
}

TEST_CASE("dev risk identities under the uniform ratio regime") {
    // hand evaluation of the weighting equations with r == 0.5
    std::vector<double> ce{0.4, 1.3, 0.2, 0.8, 2.1};
    std::vector<double> half(ce.size(), 0.5);
    double r_src = 0.0;
    for (double v : ce) r_src += v;
    r_src /= static_cast<double>(ce.size());

    SECTION("equal sample sizes collapse to the source risk exactly") {
        DevDiagnostics d;
        double r_dev = dev_risk_from_ratios(half, ce, 100, 100, &d);
        CHECK(std::abs(r_dev - r_src) < 1e-6);
        CHECK(d.eta == 0.0);
        CHECK(d.weight_variance < 1e-12);
        CHECK_THAT(d.mean_weight, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
    SECTION("sample ratio 2 scales the risk and preserves the ranking") {
        DevDiagnostics d;
        double r_dev = dev_risk_from_ratios(half, ce, 200, 100, &d);
        CHECK_THAT(r_dev, Catch::Matchers::WithinAbs(2.0 * r_src, 1e-12));
        CHECK(d.eta == 0.0);

        // candidate ranking identical to SRC in both regimes
        std::vector<std::vector<double>> cands{{0.5, 0.9}, {0.1, 0.2}, {1.4, 0.3}};
        std::vector<double> src_vals, dev_eq, dev_ratio;
        for (auto& c : cands) {
            double m = (c[0] + c[1]) / 2;
            src_vals.push_back(m);
            std::vector<double> h(c.size(), 0.5);
            dev_eq.push_back(dev_risk_from_ratios(h, c, 50, 50, nullptr));
            dev_ratio.push_back(dev_risk_from_ratios(h, c, 100, 50, nullptr));
        }
        CHECK(select_best(src_vals) == select_best(dev_eq));
        CHECK(select_best(src_vals) == select_best(dev_ratio));
    }
    SECTION("ratio near one minus epsilon effectively drops the sample") {
        std::vector<double> r{1.0 - 1e-6};
        std::vector<double> ce1{3.0};
        DevDiagnostics d;
        dev_risk_from_ratios(r, ce1, 300, 100, &d);
        // w = 3 * eps/(1-eps) ~ 3e-6
        CHECK(d.mean_weight < 1e-5);
    }
}

TEST_CASE("full dev risk is deterministic and reads no target labels") {
    auto pair = tiny_pair();
    CandidateModel cand{Network<float>(tiny_backbone(), 3), "ddc", {}, {}, false, {}};

    auto tgt_train_before = pair.target.train.label_reads();
    auto tgt_test_before = pair.target.test.label_reads();
    DevDiagnostics d1, d2;
    double r1 = dev_risk(cand, pair.source.train, pair.source.test, pair.target.train, 9, &d1);
    double r2 = dev_risk(cand, pair.source.train, pair.source.test, pair.target.train, 9, &d2);
    CHECK(pair.target.train.label_reads() == tgt_train_before);
    CHECK(pair.target.test.label_reads() == tgt_test_before);
    CHECK(std::isfinite(r1));
    CHECK(r1 == r2);
    CHECK(d1.eta == d2.eta);
    CHECK(!d1.failed);

    // src risk likewise touches no target labels
    (void)src_risk(cand, pair.source.test);
    CHECK(pair.target.train.label_reads() == tgt_train_before);
    CHECK(pair.target.test.label_reads() == tgt_test_before);
}

TEST_CASE("few-shot set and risk") {
    auto pair = tiny_pair();

    SECTION("stratified draw from target train only, deterministic per seed") {
        auto fs1 = draw_fewshot(pair.target.train, 5, 42);
        auto fs2 = draw_fewshot(pair.target.train, 5, 42);
        CHECK(fs1.samples == fs2.samples);
        CHECK(fs1.labels == fs2.labels);
        REQUIRE(fs1.labels.size() == 10);  // 2 classes x 5
        long c0 = std::count(fs1.labels.begin(), fs1.labels.end(), 0);
        CHECK(c0 == 5);
        auto fs3 = draw_fewshot(pair.target.train, 5, 43);
        CHECK(!(fs1.samples == fs3.samples));
    }
    SECTION("value matches the q-term oracle sum") {
        CandidateModel cand{Network<float>(tiny_backbone(), 11), "ddc", {}, {}, false, {}};
        auto fs = draw_fewshot(pair.target.train, 5, 7);
        auto [f, p] = cand.net.predict(fs.samples);
        double s = 0;
        for (std::size_t i = 0; i < fs.labels.size(); ++i)
            s -= std::log(
                std::max(static_cast<double>(p.at(static_cast<long>(i), fs.labels[i])), 1e-7));
        s /= static_cast<double>(fs.labels.size());
        CHECK_THAT(fst_risk(cand, fs), Catch::Matchers::WithinAbs(s, 1e-7));
    }
    SECTION("few-shot set equal to the full target test reproduces tgt risk") {
        CandidateModel cand{Network<float>(tiny_backbone(), 13), "ddc", {}, {}, false, {}};
        FewShotSet fs;
        fs.samples = pair.target.test.samples();
        const auto& y = pair.target.test.labels_raw();
        fs.labels.assign(y.begin(), y.end());
        CHECK_THAT(fst_risk(cand, fs),
                   Catch::Matchers::WithinAbs(tgt_risk(cand, pair.target.test), 1e-12));
    }
    SECTION("empty set rejected") {
        CandidateModel cand{Network<float>(tiny_backbone(), 13), "ddc", {}, {}, false, {}};
        CHECK_THROWS_AS(fst_risk(cand, FewShotSet{}), ArgumentError);
    }
}

TEST_CASE("select_best contract") {
    CHECK(select_best({0.3, 0.1, 0.5}) == 1);
    CHECK(select_best({0.2, 0.2}) == 0);  // documented tie-break
    CHECK(select_best({0.7}) == 0);
    double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK(select_best({nan, 0.9, 0.8}) == 2);
    CHECK_THROWS_AS(select_best({nan, nan}), SelectionError);

    SECTION("adding a constant leaves the choice unchanged") {
        std::vector<double> base{1.2, 0.4, 0.9, 0.4001};
        long pick = select_best(base);
        for (double c : {-0.3, 0.0, 2.5}) {
            std::vector<double> shifted = base;
            for (auto& v : shifted) v += c;
            CHECK(select_best(shifted) == pick);
        }
    }
}

TEST_CASE("risk report serializes to json") {
    RiskReport rep;
    rep.note = "eta uses the cross-covariance Cov(L_w, W)";
    RiskReport::Row row;
    row.candidate = 0;
    row.risks = {{"SRC", 0.5}, {"DEV", 0.6}};
    row.dev.eta = -0.1;
    rep.rows.push_back(row);
    RiskReport::Row bad;
    bad.candidate = 1;
    bad.failed = true;
    bad.risks = {{"SRC", std::numeric_limits<double>::quiet_NaN()}};
    rep.rows.push_back(bad);
    rep.selected = {{"SRC", 0}, {"DEV", 0}};

    nlohmann::json j = rep;
    CHECK(j["rows"][0]["risks"]["SRC"].get<double>() == 0.5);
    CHECK(j["rows"][1]["risks"]["SRC"].is_null());
    CHECK(j["selected"]["DEV"].get<long>() == 0);
    CHECK(j["rows"][0]["dev"]["eta"].get<double>() == -0.1);
}

TEST_CASE("few-shot draw at five per class over six classes gives q=30") {
    SynthSpec s;
    s.num_classes = 6;
    s.channels = 1;
    s.length = 24;
    s.train_per_class = 8;
    s.test_per_class = 2;
    auto pair = make_synthetic(s, 71);
    auto fs = draw_fewshot(pair.target.train, 5, 9);
    REQUIRE(fs.labels.size() == 30);
    for (int cls = 0; cls < 6; ++cls)
        CHECK(std::count(fs.labels.begin(), fs.labels.end(), cls) == 5);

    BackboneSpec b = tiny_backbone();
    b.num_classes = 6;
    CandidateModel cand{Network<float>(b, 5), "ddc", {}, {}, false, {}};
    auto [f, p] = cand.net.predict(fs.samples);
    double s30 = 0;
    for (std::size_t i = 0; i < 30; ++i)
        s30 -= std::log(
            std::max(static_cast<double>(p.at(static_cast<long>(i), fs.labels[i])), 1e-7));
    CHECK_THAT(fst_risk(cand, fs), Catch::Matchers::WithinAbs(s30 / 30.0, 1e-7));
}

TEST_CASE("risk report scores candidates and selects per risk") {
    auto pair = tiny_pair(9);
    std::vector<CandidateModel> cands;
    for (std::uint64_t seed : {3ull, 4ull, 5ull})
        cands.push_back(CandidateModel{Network<float>(tiny_backbone(), seed), "ddc", {}, {},
                                       false, {}});
    cands.push_back(CandidateModel{Network<float>(tiny_backbone(), 6), "ddc", {}, {}, true,
                                   "synthetic failure"});
    auto fs = draw_fewshot(pair.target.train, 3, 2);
    auto rep = build_risk_report(cands, pair.source, pair.target, &fs,
                                 {RiskKind::SRC, RiskKind::DEV, RiskKind::FST, RiskKind::TGT},
                                 77);
    REQUIRE(rep.rows.size() == 4);
    CHECK(rep.rows[3].failed);
    CHECK(std::isnan(rep.rows[3].risks.at("SRC")));
    for (const auto& rname : {"SRC", "DEV", "FST", "TGT"}) {
        long sel = rep.selected.at(rname);
        CHECK(sel >= 0);
        CHECK(sel < 3);  // the failed candidate is never selected
        for (long i = 0; i < 3; ++i)
            CHECK(rep.rows[sel].risks.at(rname) <= rep.rows[i].risks.at(rname));
    }
    // single-candidate degenerate case selects itself
    std::vector<CandidateModel> one;
    one.push_back(CandidateModel{Network<float>(tiny_backbone(), 8), "ddc", {}, {}, false, {}});
    auto rep1 = build_risk_report(one, pair.source, pair.target, nullptr,
                                  {RiskKind::SRC}, 1);
    CHECK(rep1.selected.at("SRC") == 0);
}
