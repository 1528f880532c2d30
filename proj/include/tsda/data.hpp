#pragma once

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tsda/common.hpp"
#include "tsda/rng.hpp"
#include "tsda/tensor.hpp"

namespace tsda {

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

// Labeled multichannel windows for one domain and split. Label reads are
// instrumented: adaptation and selection code must go through labels(), which
// bumps a counter shared by copies of the dataset. Pipeline internals
// (splitting, serialization, validation) use labels_raw().
class TimeSeriesDataset {
public:
    TimeSeriesDataset() = default;
    TimeSeriesDataset(std::string name, Tensor<float> samples, std::vector<std::int32_t> labels,
                      long num_classes, Split split)
        : name_(std::move(name)),
          samples_(std::move(samples)),
          labels_(std::move(labels)),
          num_classes_(num_classes),
          split_(split),
          label_reads_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
        require(samples_.rank() == 3, "dataset: samples must have shape (N,C,T)");
        require(num_classes_ >= 2, "dataset: need at least two classes");
        require(static_cast<long>(labels_.size()) == samples_.dim(0),
                "dataset: label count does not match sample count");
        for (auto y : labels_)
            require(y >= 0 && y < num_classes_, "dataset: label out of range");
    }

    const std::string& name() const { return name_; }
    const Tensor<float>& samples() const { return samples_; }
    long size() const { return samples_.numel() ? samples_.dim(0) : 0; }
    long channels() const { return samples_.rank() == 3 ? samples_.dim(1) : 0; }
    long length() const { return samples_.rank() == 3 ? samples_.dim(2) : 0; }
    long num_classes() const { return num_classes_; }
    Split split() const { return split_; }

    const std::vector<std::int32_t>& labels() const {
        if (label_reads_) ++*label_reads_;
        return labels_;
    }

    const std::vector<std::int32_t>& labels_raw() const { return labels_; }

    std::uint64_t label_reads() const { return label_reads_ ? label_reads_->load() : 0; }

    TimeSeriesDataset subset(const std::vector<long>& indices, Split split) const {
        Tensor<float> out(Shape{static_cast<long>(indices.size()), channels(), length()});
        std::vector<std::int32_t> lab(indices.size());
        long ct = channels() * length();
        for (std::size_t i = 0; i < indices.size(); ++i) {
            long src = indices[i];
            require(src >= 0 && src < size(), "subset: index out of range");
            std::copy_n(samples_.data() + src * ct, ct, out.data() + static_cast<long>(i) * ct);
            lab[i] = labels_[static_cast<std::size_t>(src)];
        }
        return TimeSeriesDataset(name_, std::move(out), std::move(lab), num_classes_, split);
    }

private:
    std::string name_;
    Tensor<float> samples_;
    std::vector<std::int32_t> labels_;
    long num_classes_ = 0;
    Split split_ = Split::train;
    std::shared_ptr<std::atomic<std::uint64_t>> label_reads_;
};

struct DomainData {
    TimeSeriesDataset train;
    TimeSeriesDataset test;
};

struct Scenario {
    std::string dataset_name;
    long source_domain = 0;
    long target_domain = 1;

    void validate(long k_src, long k_tgt, long c_src, long c_tgt) const {
        require(source_domain != target_domain, "scenario: source and target must differ");
        require(k_src == k_tgt, "scenario: domains expose different class counts");
        require(c_src == c_tgt, "scenario: domains expose different channel counts");
    }
};

// ---- segmentation ----

// (C, T_raw) -> (N, C, L) sliding windows, N = floor((T_raw - L)/S) + 1,
// window i covering [i*S, i*S + L).
inline Tensor<float> segment(const Tensor<float>& signal, long window, long stride) {
    require(signal.rank() == 2, "segment: signal must have shape (C,T)");
    if (stride < 1) throw ArgumentError("segment: stride must be positive");
    long c = signal.dim(0), traw = signal.dim(1);
    if (window < 1 || window > traw)
        throw SegmentationError("segment: window must satisfy 1 <= L <= T_raw");
    long n = (traw - window) / stride + 1;
    Tensor<float> out(Shape{n, c, window});
    for (long i = 0; i < n; ++i)
        for (long ch = 0; ch < c; ++ch)
            for (long t = 0; t < window; ++t) out.at(i, ch, t) = signal.at(ch, i * stride + t);
    return out;
}

// ---- stratified split ----

// Per-class train count round(f*n_k) (half up), remainder to test; the test
// side keeps at least one sample of every class. Deterministic per seed.
inline std::pair<TimeSeriesDataset, TimeSeriesDataset> stratified_split(
    const TimeSeriesDataset& ds, double train_fraction, std::uint64_t seed) {
    require(train_fraction > 0.0 && train_fraction < 1.0, "split: fraction must be in (0,1)");
    long k = ds.num_classes();
    std::vector<std::vector<long>> by_class(static_cast<std::size_t>(k));
    const auto& labels = ds.labels_raw();
    for (long i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);

    std::vector<long> train_idx, test_idx;
    for (long cls = 0; cls < k; ++cls) {
        auto& idx = by_class[static_cast<std::size_t>(cls)];
        if (idx.empty()) continue;
        if (idx.size() == 1)
            throw SplitError("split: class " + std::to_string(cls) +
                             " has a single sample, cannot cover the test set");
        Rng rng = Rng::stream(seed, "split", static_cast<std::uint64_t>(cls));
        rng.shuffle(idx.begin(), idx.end());
        long n = static_cast<long>(idx.size());
        long train_n = static_cast<long>(std::floor(train_fraction * n + 0.5));
        train_n = std::min(train_n, n - 1);
        train_n = std::max<long>(train_n, 1);
        for (long i = 0; i < n; ++i)
            (i < train_n ? train_idx : test_idx).push_back(idx[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {ds.subset(train_idx, Split::train), ds.subset(test_idx, Split::test)};
}

// ---- normalization ----

// Per-channel z-score over all train samples and timesteps, population std
// with an epsilon guard; the test split reuses the train statistics.
inline std::pair<TimeSeriesDataset, TimeSeriesDataset> normalize(const TimeSeriesDataset& train,
                                                                 const TimeSeriesDataset& test) {
    require(train.channels() == test.channels() && train.length() == test.length(),
            "normalize: train/test shapes differ");
    require(train.size() > 0, "normalize: empty train set");
    constexpr double kEps = 1e-8;
    long c = train.channels();
    std::vector<double> mean(static_cast<std::size_t>(c), 0.0), stdev(static_cast<std::size_t>(c));
    const auto& xs = train.samples();
    long n = train.size(), len = train.length();
    for (long ch = 0; ch < c; ++ch) {
        double m = 0;
        for (long i = 0; i < n; ++i)
            for (long t = 0; t < len; ++t) m += xs.at(i, ch, t);
        m /= static_cast<double>(n * len);
        double v = 0;
        for (long i = 0; i < n; ++i)
            for (long t = 0; t < len; ++t) {
                double d = xs.at(i, ch, t) - m;
                v += d * d;
            }
        v /= static_cast<double>(n * len);
        mean[static_cast<std::size_t>(ch)] = m;
        stdev[static_cast<std::size_t>(ch)] = std::max(std::sqrt(v), kEps);
    }
    auto apply = [&](const TimeSeriesDataset& ds) {
        Tensor<float> out = ds.samples();
        for (long i = 0; i < ds.size(); ++i)
            for (long ch = 0; ch < c; ++ch)
                for (long t = 0; t < len; ++t)
                    out.at(i, ch, t) = static_cast<float>(
                        (ds.samples().at(i, ch, t) - mean[static_cast<std::size_t>(ch)]) /
                        stdev[static_cast<std::size_t>(ch)]);
        return TimeSeriesDataset(ds.name(), std::move(out),
                                 std::vector<std::int32_t>(ds.labels_raw()), ds.num_classes(),
                                 ds.split());
    };
    return {apply(train), apply(test)};
}

// ---- on-disk format ----
// <name>/manifest.json
// <name>/domain_<id>/{train,test}/samples.f32le   magic TSDA1, u32 N,C,T, payload
// <name>/domain_<id>/{train,test}/labels.i32le    u32 N, payload

namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4] = {0, 0, 0, 0};
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_samples(const std::string& path, const Tensor<float>& samples) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw LoadError(LoadErrorKind::MissingFile, "cannot write " + path);
    os.write("TSDA1", 5);
    write_u32(os, static_cast<std::uint32_t>(samples.dim(0)));
    write_u32(os, static_cast<std::uint32_t>(samples.dim(1)));
    write_u32(os, static_cast<std::uint32_t>(samples.dim(2)));
    os.write(reinterpret_cast<const char*>(samples.data()),
             static_cast<std::streamsize>(samples.numel() * sizeof(float)));
}

inline Tensor<float> read_samples(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError(LoadErrorKind::MissingFile, "missing samples file: " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::string(magic, 5) != "TSDA1")
        throw LoadError(LoadErrorKind::BadFormat, "bad samples magic in " + path);
    long n = read_u32(is), c = read_u32(is), t = read_u32(is);
    Tensor<float> out(Shape{n, c, t});
    is.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(out.numel() * sizeof(float)));
    if (!is) throw LoadError(LoadErrorKind::BadFormat, "truncated samples file: " + path);
    return out;
}

inline void write_labels(const std::string& path, const std::vector<std::int32_t>& labels) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw LoadError(LoadErrorKind::MissingFile, "cannot write " + path);
    write_u32(os, static_cast<std::uint32_t>(labels.size()));
    os.write(reinterpret_cast<const char*>(labels.data()),
             static_cast<std::streamsize>(labels.size() * sizeof(std::int32_t)));
}

inline std::vector<std::int32_t> read_labels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError(LoadErrorKind::MissingFile, "missing labels file: " + path);
    std::uint32_t n = read_u32(is);
    std::vector<std::int32_t> out(n);
    is.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(out.size() * sizeof(std::int32_t)));
    if (!is) throw LoadError(LoadErrorKind::BadFormat, "truncated labels file: " + path);
    return out;
}

}  // namespace io

struct SplitFiles {
    std::string samples;
    std::string labels;
    long count = 0;
};

struct DomainEntry {
    long id = 0;
    SplitFiles train, test;
    bool unsplit = false;  // single "all" payload awaiting preparation
};

struct DatasetManifest {
    std::string name;
    long num_domains = 0;
    long channels = 0;
    long classes = 0;
    long window_length = 0;
    std::vector<DomainEntry> domains;
};

inline void to_json(nlohmann::json& j, const SplitFiles& s) {
    j = {{"samples", s.samples}, {"labels", s.labels}, {"count", s.count}};
}
inline void from_json(const nlohmann::json& j, SplitFiles& s) {
    s.samples = j.at("samples").get<std::string>();
    s.labels = j.at("labels").get<std::string>();
    s.count = j.at("count").get<long>();
}

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
    j = {{"name", m.name},
         {"num_domains", m.num_domains},
         {"channels", m.channels},
         {"classes", m.classes},
         {"window_length", m.window_length}};
    auto& arr = j["domains"] = nlohmann::json::array();
    for (const auto& d : m.domains) {
        nlohmann::json e{{"id", d.id}};
        if (d.unsplit) {
            e["all"] = d.train;
        } else {
            e["train"] = d.train;
            e["test"] = d.test;
        }
        arr.push_back(e);
    }
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
    m.name = j.at("name").get<std::string>();
    m.num_domains = j.at("num_domains").get<long>();
    m.channels = j.at("channels").get<long>();
    m.classes = j.at("classes").get<long>();
    m.window_length = j.at("window_length").get<long>();
    m.domains.clear();
    for (const auto& e : j.at("domains")) {
        DomainEntry d;
        d.id = e.at("id").get<long>();
        if (e.contains("all")) {
            d.unsplit = true;
            d.train = e.at("all").get<SplitFiles>();
        } else {
            d.train = e.at("train").get<SplitFiles>();
            d.test = e.at("test").get<SplitFiles>();
        }
        m.domains.push_back(d);
    }
}

inline DatasetManifest read_manifest(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw LoadError(LoadErrorKind::MissingFile, "missing manifest: " + manifest_path);
    nlohmann::json j;
    try {
        is >> j;
        return j.get<DatasetManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(LoadErrorKind::BadFormat,
                        "bad manifest " + manifest_path + ": " + e.what());
    }
}

namespace detail {

inline TimeSeriesDataset load_split(const std::string& base_dir, const DatasetManifest& m,
                                    const SplitFiles& files, Split split) {
    auto sp = (std::filesystem::path(base_dir) / files.samples).string();
    auto lp = (std::filesystem::path(base_dir) / files.labels).string();
    Tensor<float> samples = io::read_samples(sp);
    auto labels = io::read_labels(lp);
    if (samples.dim(0) != files.count || samples.dim(1) != m.channels ||
        samples.dim(2) != m.window_length)
        throw LoadError(LoadErrorKind::ShapeMismatch,
                        "samples shape " + shape_str(samples.shape()) +
                            " disagrees with manifest for " + sp);
    if (static_cast<long>(labels.size()) != files.count)
        throw LoadError(LoadErrorKind::ShapeMismatch, "label count disagrees with manifest: " + lp);
    for (auto y : labels)
        if (y < 0 || y >= m.classes)
            throw LoadError(LoadErrorKind::BadLabel,
                            "label " + std::to_string(y) + " outside [0," +
                                std::to_string(m.classes) + ") in " + lp);
    return TimeSeriesDataset(m.name, std::move(samples), std::move(labels), m.classes, split);
}

}  // namespace detail

// Loads every domain of a prepared dataset. Manifest counts and payload
// shapes must agree exactly.
inline std::map<long, DomainData> load_dataset(const std::string& manifest_path) {
    DatasetManifest m = read_manifest(manifest_path);
    std::string base = std::filesystem::path(manifest_path).parent_path().string();
    std::map<long, DomainData> out;
    for (const auto& d : m.domains) {
        require(!d.unsplit, "load_dataset: domain " + std::to_string(d.id) +
                                " is unsplit; run prepare first");
        out.emplace(d.id, DomainData{detail::load_split(base, m, d.train, Split::train),
                                     detail::load_split(base, m, d.test, Split::test)});
    }
    return out;
}

// Loads domains that carry a single unsplit payload.
inline std::map<long, TimeSeriesDataset> load_unsplit(const std::string& manifest_path) {
    DatasetManifest m = read_manifest(manifest_path);
    std::string base = std::filesystem::path(manifest_path).parent_path().string();
    std::map<long, TimeSeriesDataset> out;
    for (const auto& d : m.domains) {
        require(d.unsplit, "load_unsplit: domain " + std::to_string(d.id) + " is already split");
        out.emplace(d.id, detail::load_split(base, m, d.train, Split::train));
    }
    return out;
}

inline void save_dataset(const std::string& dir, const std::string& name,
                         const std::map<long, DomainData>& domains) {
    DatasetManifest m;
    m.name = name;
    m.num_domains = static_cast<long>(domains.size());
    for (const auto& [id, dd] : domains) {
        m.channels = dd.train.channels();
        m.classes = dd.train.num_classes();
        m.window_length = dd.train.length();
        DomainEntry e;
        e.id = id;
        std::string rel = "domain_" + std::to_string(id);
        e.train = {rel + "/train/samples.f32le", rel + "/train/labels.i32le", dd.train.size()};
        e.test = {rel + "/test/samples.f32le", rel + "/test/labels.i32le", dd.test.size()};
        io::write_samples((std::filesystem::path(dir) / e.train.samples).string(),
                          dd.train.samples());
        io::write_labels((std::filesystem::path(dir) / e.train.labels).string(),
                         dd.train.labels_raw());
        io::write_samples((std::filesystem::path(dir) / e.test.samples).string(),
                          dd.test.samples());
        io::write_labels((std::filesystem::path(dir) / e.test.labels).string(),
                         dd.test.labels_raw());
        m.domains.push_back(e);
    }
    std::filesystem::create_directories(dir);
    std::ofstream os((std::filesystem::path(dir) / "manifest.json").string());
    os << nlohmann::json(m).dump(2) << "\n";
    if (!os) throw Error("cannot write manifest under " + dir);
}

}  // namespace tsda
