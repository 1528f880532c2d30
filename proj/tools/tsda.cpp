#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>

#include "tsda/config.hpp"
#include "tsda/report.hpp"
#include "tsda/sweep.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kValidationError = 2;
constexpr int kTrialFailures = 3;

tsda::BackboneSpec backbone_from_config(const tsda::Config& cfg, long channels, long classes) {
    tsda::BackboneSpec b;
    b.kind = tsda::backbone_kind_from(cfg.get("backbone", "kind", "cnn1d"));
    b.input_channels = channels;
    b.num_classes = classes;
    b.first_kernel = cfg.get_long("backbone", "first_kernel", 7);
    b.first_stride = cfg.get_long("backbone", "first_stride", 1);
    b.feature_dim = cfg.get_long("backbone", "feature_dim", 128);
    b.cnn_hidden1 = cfg.get_long("backbone", "cnn_hidden1", 64);
    b.cnn_hidden2 = cfg.get_long("backbone", "cnn_hidden2", 128);
    b.tcn_kernel = cfg.get_long("backbone", "tcn_kernel", 3);
    return b;
}

tsda::TrainConfig train_from_config(const tsda::Config& cfg) {
    tsda::TrainConfig t;
    t.epochs = cfg.get_long("train", "epochs", 40);
    t.batch_size = cfg.get_long("train", "batch_size", 32);
    t.weight_decay = cfg.get_double("train", "weight_decay", 1e-4);
    t.beta1 = cfg.get_double("train", "beta1", 0.5);
    t.beta2 = cfg.get_double("train", "beta2", 0.99);
    return t;
}

tsda::HParams hparams_from_config(const tsda::Config& cfg, std::uint64_t seed) {
    tsda::HParams hp;
    hp.seed = seed;
    for (const auto& [key, value] : cfg.section("hparams")) {
        if (key == "learning_rate")
            hp.learning_rate = std::stod(value);
        else
            hp.weights[key] = std::stod(value);
    }
    return hp;
}

std::pair<long, long> parse_scenario(const std::string& s) {
    auto sep = s.find(':');
    tsda::require(sep != std::string::npos && sep > 0 && sep + 1 < s.size(),
                  "scenario must look like <source>:<target>");
    return {std::stol(s.substr(0, sep)), std::stol(s.substr(sep + 1))};
}

int cmd_prepare(const std::string& manifest, const std::string& out, double fraction,
                std::uint64_t seed) {
    tsda::DatasetManifest m = tsda::read_manifest(manifest);
    std::map<long, tsda::DomainData> prepared;
    bool any_unsplit = false;
    for (const auto& d : m.domains) any_unsplit = any_unsplit || d.unsplit;

    if (any_unsplit) {
        auto raw = tsda::load_unsplit(manifest);
        for (auto& [id, ds] : raw) {
            auto [train, test] = tsda::stratified_split(ds, fraction, seed);
            auto [ntrain, ntest] = tsda::normalize(train, test);
            prepared.emplace(id, tsda::DomainData{std::move(ntrain), std::move(ntest)});
        }
    } else {
        auto split = tsda::load_dataset(manifest);
        for (auto& [id, dd] : split) {
            auto [ntrain, ntest] = tsda::normalize(dd.train, dd.test);
            prepared.emplace(id, tsda::DomainData{std::move(ntrain), std::move(ntest)});
        }
    }
    tsda::save_dataset(out, m.name, prepared);
    std::cout << "prepared " << prepared.size() << " domains -> " << out << "\n";
    return kOk;
}

int cmd_synth(const std::string& spec_path, const std::string& preset, const std::string& out,
              std::uint64_t seed) {
    tsda::SynthSpec spec;
    if (!spec_path.empty()) {
        std::ifstream is(spec_path);
        tsda::require(static_cast<bool>(is), "cannot open spec file: " + spec_path);
        json j;
        is >> j;
        spec = j.get<tsda::SynthSpec>();
    } else if (preset == "zero_shift") {
        spec = tsda::SynthSpec::zero_shift();
    } else if (preset == "shifted") {
        spec = tsda::SynthSpec::shifted();
    } else {
        throw tsda::ArgumentError("synth: provide --spec or --preset {zero_shift,shifted}");
    }
    auto pair = tsda::make_synthetic(spec, seed);
    std::map<long, tsda::DomainData> domains;
    domains.emplace(0, pair.source);
    domains.emplace(1, pair.target);
    tsda::save_dataset(out, "synth", domains);
    std::ofstream os((fs::path(out) / "synth_spec.json").string());
    os << json(spec).dump(2) << "\n";
    std::cout << "synthetic pair (source=0, target=1) -> " << out << "\n";
    return kOk;
}

int cmd_train(const std::string& alg, const std::string& scenario_arg,
              const std::string& config_path, std::uint64_t seed, std::string out_dir) {
    tsda::Config cfg = tsda::Config::parse_file(config_path);
    std::string manifest = cfg.require_get("dataset", "manifest");
    auto [src_id, tgt_id] = parse_scenario(scenario_arg);
    auto domains = tsda::load_dataset(manifest);
    tsda::require(domains.count(src_id) && domains.count(tgt_id),
                  "scenario references unknown domain ids");
    auto& source = domains.at(src_id);
    auto& target = domains.at(tgt_id);
    tsda::Scenario sc{tsda::read_manifest(manifest).name, src_id, tgt_id};
    sc.validate(source.train.num_classes(), target.train.num_classes(),
                source.train.channels(), target.train.channels());

    tsda::BackboneSpec backbone =
        backbone_from_config(cfg, source.train.channels(), source.train.num_classes());
    tsda::TrainConfig train_cfg = train_from_config(cfg);
    tsda::HParams hp = hparams_from_config(cfg, seed);

    if (out_dir.empty()) out_dir = cfg.get("output", "dir", "train_out");
    fs::create_directories(out_dir);

    auto cand = tsda::adapt(alg, source.train, target.train, backbone, hp, train_cfg);

    std::ofstream log((fs::path(out_dir) / "training_log.jsonl").string(), std::ios::trunc);
    for (const auto& e : cand.log) {
        json row{{"epoch", e.epoch}, {"wall_seconds", e.wall_seconds}};
        for (auto& [k, v] : e.losses) row[k] = v;
        log << row.dump() << "\n";
    }
    log.close();

    json metrics{{"algorithm", alg},
                 {"scenario", scenario_arg},
                 {"seed", seed},
                 {"status", cand.failed ? "failed" : "ok"}};
    if (cand.failed) {
        metrics["failure_reason"] = cand.failure_reason;
    } else {
        auto m = tsda::evaluate(cand, target.test);
        metrics["macro_f1"] = m.macro_f1;
        metrics["accuracy"] = m.accuracy;
        if (!cand.log.empty()) metrics["final_losses"] = cand.log.back().losses;

        tsda::CheckpointMeta meta;
        meta.algorithm = alg;
        meta.hparams = hp;
        meta.metadata = {{"epochs", train_cfg.epochs}, {"macro_f1", m.macro_f1}};
        tsda::save_checkpoint(cand.net, meta, (fs::path(out_dir) / "checkpoint.ckpt").string());
    }
    std::ofstream ms((fs::path(out_dir) / "metrics.json").string(), std::ios::trunc);
    ms << metrics.dump(2) << "\n";
    std::cout << metrics.dump(2) << "\n";
    return cand.failed ? kTrialFailures : kOk;
}

int cmd_sweep(const std::string& plan_path, bool resume) {
    std::ifstream is(plan_path);
    tsda::require(static_cast<bool>(is), "cannot open plan file: " + plan_path);
    json j;
    is >> j;
    auto plan = j.get<tsda::SweepPlan>();
    auto result = tsda::run_sweep(plan, resume);
    long failed = 0;
    for (const auto& t : result.trials)
        if (t.status != "ok") ++failed;
    std::cout << "sweep complete: " << result.trials.size() << " trials, " << failed
              << " failed -> " << plan.out_dir << "\n";
    return failed > 0 ? kTrialFailures : kOk;
}

int cmd_report(const std::string& in_dir, const std::string& out_dir,
               const std::string& gaps_path) {
    std::vector<fs::path> summaries;
    if (fs::exists(fs::path(in_dir) / "summary.json"))
        summaries.push_back(fs::path(in_dir) / "summary.json");
    if (fs::is_directory(in_dir))
        for (const auto& entry : fs::directory_iterator(in_dir))
            if (entry.is_directory() && fs::exists(entry.path() / "summary.json"))
                summaries.push_back(entry.path() / "summary.json");
    std::sort(summaries.begin(), summaries.end());

    std::map<std::string, std::vector<tsda::SweepResult>> by_alg;
    for (const auto& p : summaries) {
        std::ifstream is(p);
        json j;
        is >> j;
        auto r = j.get<tsda::SweepResult>();
        by_alg[r.plan.algorithm].push_back(std::move(r));
    }

    tsda::ReportInputs inputs;
    for (auto& [alg, results] : by_alg) inputs.tables.push_back(tsda::aggregate(results));

    if (!gaps_path.empty()) {
        std::ifstream is(gaps_path);
        tsda::require(static_cast<bool>(is), "cannot open gaps file: " + gaps_path);
        json j;
        is >> j;
        for (const auto& row : j) {
            std::optional<double> ref;
            if (row.contains("reference_gap")) ref = row.at("reference_gap").get<double>();
            inputs.gaps.push_back(tsda::domain_gap(row.at("target_only").get<double>(),
                                                   row.at("source_only").get<double>(),
                                                   row.value("dataset", std::string{}), ref));
        }
    }

    tsda::write_report(tsda::render_report(inputs), out_dir);
    std::cout << "report -> " << out_dir << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"time-series domain adaptation benchmark"};
    app.require_subcommand(1);

    std::string manifest, out, spec_path, preset, alg, scenario, config_path, plan_path, in_dir,
        gaps_path;
    double fraction = 0.7;
    std::uint64_t seed = 1;
    bool resume = false;

    auto* prepare = app.add_subcommand("prepare", "split and normalize a dataset");
    prepare->add_option("--manifest", manifest, "input manifest.json")->required();
    prepare->add_option("--out", out, "output dataset directory")->required();
    prepare->add_option("--train-fraction", fraction, "train fraction (default 0.7)");
    prepare->add_option("--seed", seed, "split seed");

    auto* synth = app.add_subcommand("synth", "generate a synthetic two-domain pair");
    synth->add_option("--spec", spec_path, "generator spec json");
    synth->add_option("--preset", preset, "zero_shift | shifted");
    synth->add_option("--out", out, "output dataset directory")->required();
    synth->add_option("--seed", seed, "generator seed");

    auto* train = app.add_subcommand("train", "train one candidate model");
    train->add_option("--alg", alg, "algorithm id")->required();
    train->add_option("--scenario", scenario, "source:target domain ids")->required();
    train->add_option("--config", config_path, "ini config file")->required();
    train->add_option("--seed", seed, "trial seed")->required();
    train->add_option("--out", out, "output directory");

    auto* sweep = app.add_subcommand("sweep", "run a hyper-parameter sweep");
    sweep->add_option("--plan", plan_path, "sweep plan json")->required();
    sweep->add_flag("--resume", resume, "continue from an interrupted trials.jsonl");

    auto* report = app.add_subcommand("report", "render benchmark tables");
    report->add_option("--in", in_dir, "directory holding sweep outputs")->required();
    report->add_option("--out", out, "report output directory")->required();
    report->add_option("--gaps", gaps_path, "domain-gap rows json");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prepare->parsed()) return cmd_prepare(manifest, out, fraction, seed);
        if (synth->parsed()) return cmd_synth(spec_path, preset, out, seed);
        if (train->parsed()) return cmd_train(alg, scenario, config_path, seed, out);
        if (sweep->parsed()) return cmd_sweep(plan_path, resume);
        if (report->parsed()) return cmd_report(in_dir, out, gaps_path);
    } catch (const tsda::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidationError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidationError;
    }
    return kOk;
}
