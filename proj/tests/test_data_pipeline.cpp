#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "tsda/data.hpp"
#include "tsda/synth.hpp"

using namespace tsda;

namespace {

TimeSeriesDataset toy_dataset(long n, long k, std::uint64_t seed, long c = 2, long t = 6) {
    Rng rng(seed);
    Tensor<float> x(Shape{n, c, t});
    for (long i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
    std::vector<std::int32_t> y(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i % k);
    return TimeSeriesDataset("toy", std::move(x), std::move(y), k, Split::train);
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag)
        : path(std::filesystem::temp_directory_path() / ("tsda_" + tag)) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("segment window arithmetic") {
    Tensor<float> signal(Shape{1, 10});
    for (long t = 0; t < 10; ++t) signal.at(0, t) = static_cast<float>(t);

    SECTION("T_raw=10 L=4 S=2 gives 4 windows at offsets 0,2,4,6") {
        // enumeration oracle: count start offsets directly
        std::vector<long> starts;
        for (long s = 0; s + 4 <= 10; s += 2) starts.push_back(s);
        REQUIRE(starts == std::vector<long>{0, 2, 4, 6});

        auto w = segment(signal, 4, 2);
        REQUIRE(w.shape() == Shape{4, 1, 4});
        for (std::size_t i = 0; i < starts.size(); ++i)
            for (long t = 0; t < 4; ++t)
                CHECK(w.at(static_cast<long>(i), 0, t) == signal.at(0, starts[i] + t));
    }
    SECTION("window equal to signal length gives exactly one window") {
        auto w = segment(signal, 10, 3);
        REQUIRE(w.shape() == Shape{1, 1, 10});
        for (long t = 0; t < 10; ++t) CHECK(w.at(0, 0, t) == signal.at(0, t));
    }
    SECTION("L equal to T_raw with large stride still gives one window") {
        Tensor<float> s128(Shape{2, 128});
        auto w = segment(s128, 128, 64);
        CHECK(w.dim(0) == 1);
    }
    SECTION("window larger than signal rejected") {
        CHECK_THROWS_AS(segment(signal, 11, 1), SegmentationError);
    }
    SECTION("non-positive stride rejected") {
        CHECK_THROWS_AS(segment(signal, 4, 0), ArgumentError);
    }
    SECTION("coverage: stride equal to window reconstructs a prefix") {
        Tensor<float> sig(Shape{2, 11});
        Rng rng(3);
        for (long i = 0; i < sig.numel(); ++i) sig[i] = static_cast<float>(rng.normal());
        auto w = segment(sig, 3, 3);
        REQUIRE(w.dim(0) == 3);
        for (long i = 0; i < w.dim(0); ++i)
            for (long c = 0; c < 2; ++c)
                for (long t = 0; t < 3; ++t) CHECK(w.at(i, c, t) == sig.at(c, i * 3 + t));
    }
}

TEST_CASE("stratified split counts and coverage") {
    SECTION("100 samples 50/50 split 70/30 per class") {
        auto ds = toy_dataset(100, 2, 1);
        auto [train, test] = stratified_split(ds, 0.7, 11);
        CHECK(train.size() == 70);
        CHECK(test.size() == 30);
        long c0 = 0, c1 = 0;
        for (auto y : train.labels_raw()) (y == 0 ? c0 : c1)++;
        CHECK(c0 == 35);
        CHECK(c1 == 35);
    }
    SECTION("single populated class degenerates to a plain split") {
        Rng rng(5);
        Tensor<float> x(Shape{10, 1, 4});
        for (long i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
        TimeSeriesDataset ds("one", std::move(x), std::vector<std::int32_t>(10, 0), 2,
                             Split::train);
        auto [train, test] = stratified_split(ds, 0.7, 3);
        CHECK(train.size() == 7);
        CHECK(test.size() == 3);
    }
    SECTION("determinism: same seed gives the identical partition") {
        auto ds = toy_dataset(37, 3, 2);
        auto [tr1, te1] = stratified_split(ds, 0.7, 42);
        auto [tr2, te2] = stratified_split(ds, 0.7, 42);
        CHECK(tr1.samples() == tr2.samples());
        CHECK(te1.samples() == te2.samples());
        CHECK(tr1.labels_raw() == tr2.labels_raw());
    }
    SECTION("class with one sample is rejected") {
        Rng rng(6);
        Tensor<float> x(Shape{5, 1, 4});
        for (long i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
        std::vector<std::int32_t> y{0, 0, 0, 0, 1};
        TimeSeriesDataset ds("deg", std::move(x), std::move(y), 2, Split::train);
        CHECK_THROWS_AS(stratified_split(ds, 0.7, 1), SplitError);
    }
    SECTION("partition property: disjoint and union equals input, any seed") {
        for (std::uint64_t seed : {1ull, 7ull, 99ull, 12345ull}) {
            auto ds = toy_dataset(41, 4, seed);
            auto [train, test] = stratified_split(ds, 0.7, seed * 3 + 1);
            CHECK(train.size() + test.size() == ds.size());
            // reconstruct multiset of rows via exact matching
            std::vector<bool> used(static_cast<std::size_t>(ds.size()), false);
            auto claim = [&](const TimeSeriesDataset& part) {
                long ct = ds.channels() * ds.length();
                for (long i = 0; i < part.size(); ++i) {
                    bool found = false;
                    for (long j = 0; j < ds.size() && !found; ++j) {
                        if (used[static_cast<std::size_t>(j)]) continue;
                        if (part.labels_raw()[static_cast<std::size_t>(i)] !=
                            ds.labels_raw()[static_cast<std::size_t>(j)])
                            continue;
                        if (std::equal(part.samples().data() + i * ct,
                                       part.samples().data() + (i + 1) * ct,
                                       ds.samples().data() + j * ct)) {
                            used[static_cast<std::size_t>(j)] = true;
                            found = true;
                        }
                    }
                    CHECK(found);
                }
            };
            claim(train);
            claim(test);
            CHECK(std::count(used.begin(), used.end(), true) == ds.size());
        }
    }
    SECTION("every class present lands in the test set") {
        auto ds = toy_dataset(23, 5, 9);
        auto [train, test] = stratified_split(ds, 0.7, 17);
        std::vector<bool> seen(5, false);
        for (auto y : test.labels_raw()) seen[static_cast<std::size_t>(y)] = true;
        for (bool s : seen) CHECK(s);
    }
}

TEST_CASE("normalization semantics") {
    SECTION("hand case {1,2,3} maps to +-1.2247 with population std") {
        Tensor<float> xtr(Shape{3, 1, 1});
        xtr.at(0, 0, 0) = 1;
        xtr.at(1, 0, 0) = 2;
        xtr.at(2, 0, 0) = 3;
        Tensor<float> xte(Shape{1, 1, 1});
        xte.at(0, 0, 0) = 2;  // equals the train mean
        TimeSeriesDataset train("h", std::move(xtr), {0, 1, 0}, 2, Split::train);
        TimeSeriesDataset test("h", std::move(xte), {1}, 2, Split::test);
        auto [ntr, nte] = normalize(train, test);
        double expected = 1.0 / std::sqrt(2.0 / 3.0);
        CHECK_THAT(ntr.samples().at(0, 0, 0), Catch::Matchers::WithinAbs(-expected, 1e-4));
        CHECK_THAT(ntr.samples().at(1, 0, 0), Catch::Matchers::WithinAbs(0.0, 1e-6));
        CHECK_THAT(ntr.samples().at(2, 0, 0), Catch::Matchers::WithinAbs(expected, 1e-4));
        CHECK_THAT(nte.samples().at(0, 0, 0), Catch::Matchers::WithinAbs(0.0, 1e-6));
    }
    SECTION("constant channel collapses to zero via the epsilon guard") {
        Tensor<float> xtr = Tensor<float>::full(Shape{4, 1, 3}, 2.5f);
        Tensor<float> xte = Tensor<float>::full(Shape{2, 1, 3}, 2.5f);
        TimeSeriesDataset train("c", std::move(xtr), {0, 1, 0, 1}, 2, Split::train);
        TimeSeriesDataset test("c", std::move(xte), {0, 1}, 2, Split::test);
        auto [ntr, nte] = normalize(train, test);
        for (long i = 0; i < ntr.samples().numel(); ++i) CHECK(ntr.samples()[i] == 0.0f);
        for (long i = 0; i < nte.samples().numel(); ++i) CHECK(nte.samples()[i] == 0.0f);
    }
    SECTION("train statistics hit zero mean unit std; renormalizing is idempotent") {
        auto train = toy_dataset(50, 2, 21, 3, 8);
        auto test = toy_dataset(20, 2, 22, 3, 8);
        auto [ntr, nte] = normalize(train, test);
        for (long c = 0; c < 3; ++c) {
            double m = 0, v = 0;
            long n = ntr.size() * ntr.length();
            for (long i = 0; i < ntr.size(); ++i)
                for (long t = 0; t < 8; ++t) m += ntr.samples().at(i, c, t);
            m /= n;
            for (long i = 0; i < ntr.size(); ++i)
                for (long t = 0; t < 8; ++t) {
                    double d = ntr.samples().at(i, c, t) - m;
                    v += d * d;
                }
            v /= n;
            CHECK(std::abs(m) < 1e-5);
            CHECK(std::abs(std::sqrt(v) - 1.0) < 1e-4);
        }
        auto [ntr2, nte2] = normalize(ntr, nte);
        for (long i = 0; i < ntr.samples().numel(); ++i)
            CHECK(std::abs(ntr2.samples()[i] - ntr.samples()[i]) < 1e-5);
    }
}

TEST_CASE("dataset directory round-trip and load validation") {
    TempDir dir("data_roundtrip");

    auto ds0 = toy_dataset(24, 6, 31, 9, 128);
    auto [tr0, te0] = stratified_split(ds0, 0.7, 5);
    auto ds1 = toy_dataset(30, 6, 32, 9, 128);
    auto [tr1, te1] = stratified_split(ds1, 0.7, 5);
    std::map<long, DomainData> domains;
    domains.emplace(2, DomainData{tr0, te0});
    domains.emplace(11, DomainData{tr1, te1});

    SECTION("save then load yields element-wise identical tensors") {
        save_dataset((dir.path / "toy").string(), "toy", domains);
        auto loaded = load_dataset((dir.path / "toy" / "manifest.json").string());
        REQUIRE(loaded.size() == 2);
        CHECK(loaded.at(2).train.samples() == tr0.samples());
        CHECK(loaded.at(2).test.samples() == te0.samples());
        CHECK(loaded.at(11).train.labels_raw() == tr1.labels_raw());
        CHECK(loaded.at(2).train.channels() == 9);
        CHECK(loaded.at(2).train.num_classes() == 6);
        CHECK(loaded.at(2).train.length() == 128);
    }
    SECTION("empty domain list loads as an empty map") {
        save_dataset((dir.path / "empty").string(), "empty", {});
        auto loaded = load_dataset((dir.path / "empty" / "manifest.json").string());
        CHECK(loaded.empty());
    }
    SECTION("labels containing K are a distinct load error") {
        save_dataset((dir.path / "bad").string(), "bad", domains);
        // corrupt one label file: overwrite with an out-of-range id
        auto lp = dir.path / "bad" / "domain_2" / "train" / "labels.i32le";
        auto labels = io::read_labels(lp.string());
        labels[0] = 6;  // == K
        io::write_labels(lp.string(), labels);
        try {
            load_dataset((dir.path / "bad" / "manifest.json").string());
            FAIL("expected LoadError");
        } catch (const LoadError& e) {
            CHECK(e.kind == LoadErrorKind::BadLabel);
        }
    }
    SECTION("count mismatch between manifest and payload is a shape error") {
        save_dataset((dir.path / "mismatch").string(), "mismatch", domains);
        auto mp = dir.path / "mismatch" / "manifest.json";
        auto m = read_manifest(mp.string());
        m.domains[0].train.count += 1;
        std::ofstream os(mp.string());
        os << nlohmann::json(m).dump(2);
        os.close();
        try {
            load_dataset(mp.string());
            FAIL("expected LoadError");
        } catch (const LoadError& e) {
            CHECK(e.kind == LoadErrorKind::ShapeMismatch);
        }
    }
    SECTION("missing file is its own load error") {
        save_dataset((dir.path / "gone").string(), "gone", domains);
        std::filesystem::remove(dir.path / "gone" / "domain_11" / "test" / "samples.f32le");
        try {
            load_dataset((dir.path / "gone" / "manifest.json").string());
            FAIL("expected LoadError");
        } catch (const LoadError& e) {
            CHECK(e.kind == LoadErrorKind::MissingFile);
        }
    }
}

TEST_CASE("label access instrumentation") {
    auto ds = toy_dataset(10, 2, 41);
    CHECK(ds.label_reads() == 0);
    (void)ds.labels();
    (void)ds.labels();
    CHECK(ds.label_reads() == 2);
    (void)ds.labels_raw();
    CHECK(ds.label_reads() == 2);
    TimeSeriesDataset copy = ds;  // copies share the counter
    (void)copy.labels();
    CHECK(ds.label_reads() == 3);
}

TEST_CASE("synthetic generator determinism and validation") {
    SECTION("same seed twice gives bit-identical tensors") {
        auto a = make_synthetic(SynthSpec::shifted(), 7);
        auto b = make_synthetic(SynthSpec::shifted(), 7);
        CHECK(a.source.train.samples() == b.source.train.samples());
        CHECK(a.source.test.samples() == b.source.test.samples());
        CHECK(a.target.train.samples() == b.target.train.samples());
        CHECK(a.target.test.samples() == b.target.test.samples());
        CHECK(a.source.train.labels_raw() == b.source.train.labels_raw());
        auto c = make_synthetic(SynthSpec::shifted(), 8);
        CHECK(!(a.source.train.samples() == c.source.train.samples()));
    }
    SECTION("degenerate specs rejected") {
        SynthSpec s;
        s.num_classes = 1;
        CHECK_THROWS_AS(make_synthetic(s, 1), ArgumentError);
        s = SynthSpec{};
        s.class_freqs = {1.0, 2.0};  // wrong arity for 5 classes
        CHECK_THROWS_AS(make_synthetic(s, 1), ArgumentError);
        s = SynthSpec{};
        s.class_freqs = {2, 3, 4, 5, 30};  // 30*3 channels exceeds the band
        CHECK_THROWS_AS(make_synthetic(s, 1), ArgumentError);
    }
    SECTION("domains share shape and classes; normalization applied per domain") {
        auto pair = make_synthetic(SynthSpec::shifted(), 3);
        CHECK(pair.source.train.num_classes() == pair.target.train.num_classes());
        CHECK(pair.source.train.channels() == pair.target.train.channels());
        for (long c = 0; c < pair.target.train.channels(); ++c) {
            double m = 0;
            const auto& xs = pair.target.train.samples();
            long n = pair.target.train.size(), len = pair.target.train.length();
            for (long i = 0; i < n; ++i)
                for (long t = 0; t < len; ++t) m += xs.at(i, c, t);
            m /= static_cast<double>(n * len);
            CHECK(std::abs(m) < 1e-4);
        }
    }
}

TEST_CASE("scenario validation") {
    Scenario sc{"toy", 2, 2};
    CHECK_THROWS_AS(sc.validate(3, 3, 2, 2), ArgumentError);
    Scenario ok{"toy", 0, 1};
    CHECK_THROWS_AS(ok.validate(3, 4, 2, 2), ArgumentError);
    CHECK_NOTHROW(ok.validate(3, 3, 2, 2));
}

TEST_CASE("unsplit payloads flow through split and normalize") {
    TempDir dir("unsplit_flow");
    // build an unsplit domain payload plus manifest by hand
    auto ds = toy_dataset(30, 3, 77, 2, 12);
    io::write_samples((dir.path / "raw" / "domain_0" / "all" / "samples.f32le").string(),
                      ds.samples());
    io::write_labels((dir.path / "raw" / "domain_0" / "all" / "labels.i32le").string(),
                     ds.labels_raw());
    DatasetManifest m;
    m.name = "raw";
    m.num_domains = 1;
    m.channels = 2;
    m.classes = 3;
    m.window_length = 12;
    DomainEntry e;
    e.id = 0;
    e.unsplit = true;
    e.train = {"domain_0/all/samples.f32le", "domain_0/all/labels.i32le", 30};
    m.domains.push_back(e);
    {
        std::ofstream os((dir.path / "raw" / "manifest.json").string());
        os << nlohmann::json(m).dump(2);
    }

    auto raw = load_unsplit((dir.path / "raw" / "manifest.json").string());
    REQUIRE(raw.size() == 1);
    CHECK(raw.at(0).samples() == ds.samples());

    // load_dataset must refuse unsplit domains
    CHECK_THROWS_AS(load_dataset((dir.path / "raw" / "manifest.json").string()), ArgumentError);

    auto [train, test] = stratified_split(raw.at(0), 0.7, 5);
    auto [ntrain, ntest] = normalize(train, test);
    std::map<long, DomainData> out;
    out.emplace(0, DomainData{ntrain, ntest});
    save_dataset((dir.path / "prepared").string(), "raw", out);
    auto back = load_dataset((dir.path / "prepared" / "manifest.json").string());
    CHECK(back.at(0).train.size() + back.at(0).test.size() == 30);
}
