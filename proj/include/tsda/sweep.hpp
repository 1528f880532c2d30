#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tsda/risks.hpp"
#include "tsda/synth.hpp"

namespace tsda {

// Draws one hyper-parameter combination, log-uniformly per schema entry.
inline HParams sample_hparams(const AlgorithmInfo& info, Rng& rng) {
    require(!info.schema.empty(), "sample_hparams: empty schema");
    HParams hp;
    for (const auto& range : info.schema) {
        double v = rng.log_uniform(range.lo, range.hi);
        if (range.name == "learning_rate")
            hp.learning_rate = v;
        else
            hp.weights[range.name] = v;
    }
    return hp;
}

struct SweepPlan {
    std::string algorithm = "ddc";
    std::string dataset_manifest;  // path to manifest.json
    std::vector<Scenario> scenarios;
    long n_combos = 100;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    BackboneSpec backbone;
    TrainConfig train;
    std::vector<RiskKind> risks = {RiskKind::SRC, RiskKind::DEV, RiskKind::FST, RiskKind::TGT};
    bool oracle_eval = true;          // record target-test metrics per trial
    bool per_seed_selection = false;  // default: select on seed-averaged risk
    bool save_checkpoints = false;
    long fewshot_per_class = 5;
    std::uint64_t sampling_seed = 7;
    std::uint64_t fewshot_seed = 99;
    long workers = 1;
    std::string out_dir = "sweep_out";

    void validate() const {
        algorithm_info(algorithm);
        require(!scenarios.empty(), "sweep plan: no scenarios");
        require(n_combos >= 1 && !seeds.empty(), "sweep plan: empty grid");
        require(workers >= 1, "sweep plan: workers must be >= 1");
        require(!risks.empty(), "sweep plan: no risks selected");
        train.validate();
    }

    long trials_per_scenario() const { return n_combos * static_cast<long>(seeds.size()); }
    long total_trials() const {
        return trials_per_scenario() * static_cast<long>(scenarios.size());
    }

    HParams hparams_for(long combo, std::uint64_t seed) const {
        Rng rng = Rng::stream(sampling_seed, "hparams", static_cast<std::uint64_t>(combo));
        HParams hp = sample_hparams(algorithm_info(algorithm), rng);
        hp.seed = seed;
        return hp;
    }
};

inline void to_json(nlohmann::json& j, const Scenario& s) {
    j = {{"dataset", s.dataset_name}, {"source", s.source_domain}, {"target", s.target_domain}};
}
inline void from_json(const nlohmann::json& j, Scenario& s) {
    s.dataset_name = j.value("dataset", std::string{});
    s.source_domain = j.at("source").get<long>();
    s.target_domain = j.at("target").get<long>();
}

inline void to_json(nlohmann::json& j, const SweepPlan& p) {
    std::vector<std::string> risk_names;
    for (auto r : p.risks) risk_names.push_back(to_string(r));
    j = {{"algorithm", p.algorithm},
         {"dataset_manifest", p.dataset_manifest},
         {"scenarios", p.scenarios},
         {"n_combos", p.n_combos},
         {"seeds", p.seeds},
         {"backbone", p.backbone},
         {"train", p.train},
         {"risks", risk_names},
         {"oracle_eval", p.oracle_eval},
         {"per_seed_selection", p.per_seed_selection},
         {"save_checkpoints", p.save_checkpoints},
         {"fewshot_per_class", p.fewshot_per_class},
         {"sampling_seed", p.sampling_seed},
         {"fewshot_seed", p.fewshot_seed},
         {"workers", p.workers},
         {"out_dir", p.out_dir}};
}
inline void from_json(const nlohmann::json& j, SweepPlan& p) {
    p.algorithm = j.at("algorithm").get<std::string>();
    p.dataset_manifest = j.at("dataset_manifest").get<std::string>();
    p.scenarios = j.at("scenarios").get<std::vector<Scenario>>();
    p.n_combos = j.value("n_combos", 100L);
    p.seeds = j.value("seeds", std::vector<std::uint64_t>{1, 2, 3});
    p.backbone = j.at("backbone").get<BackboneSpec>();
    p.train = j.value("train", TrainConfig{});
    p.risks.clear();
    for (const auto& r : j.value("risks", std::vector<std::string>{"SRC", "DEV", "FST", "TGT"}))
        p.risks.push_back(risk_from(r));
    p.oracle_eval = j.value("oracle_eval", true);
    p.per_seed_selection = j.value("per_seed_selection", false);
    p.save_checkpoints = j.value("save_checkpoints", false);
    p.fewshot_per_class = j.value("fewshot_per_class", 5L);
    p.sampling_seed = j.value("sampling_seed", std::uint64_t{7});
    p.fewshot_seed = j.value("fewshot_seed", std::uint64_t{99});
    p.workers = j.value("workers", 1L);
    p.out_dir = j.value("out_dir", std::string{"sweep_out"});
}

struct TrialRow {
    std::string scenario;
    long combo = 0;
    std::uint64_t seed = 0;
    HParams hparams;
    std::map<std::string, double> risks;  // NaN serialized as null
    std::optional<double> macro_f1;
    std::optional<double> accuracy;
    std::string status = "ok";  // ok | failed
    std::string failure_reason;
    DevDiagnostics dev;
    std::string checkpoint;  // path when the plan saves checkpoints
};

inline void to_json(nlohmann::json& j, const TrialRow& r) {
    j = {{"scenario", r.scenario}, {"combo", r.combo}, {"seed", r.seed},
         {"hparams", r.hparams},  {"status", r.status}};
    auto& rk = j["risks"] = nlohmann::json::object();
    for (auto& [k, v] : r.risks) rk[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();
    j["macro_f1"] = r.macro_f1 ? nlohmann::json(*r.macro_f1) : nlohmann::json();
    j["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json();
    if (!r.failure_reason.empty()) j["failure_reason"] = r.failure_reason;
    if (!r.checkpoint.empty()) j["checkpoint"] = r.checkpoint;
    j["dev"] = r.dev;
}

inline void from_json(const nlohmann::json& j, TrialRow& r) {
    r.scenario = j.at("scenario").get<std::string>();
    r.combo = j.at("combo").get<long>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.hparams = j.at("hparams").get<HParams>();
    r.status = j.at("status").get<std::string>();
    r.failure_reason = j.value("failure_reason", std::string{});
    r.checkpoint = j.value("checkpoint", std::string{});
    r.risks.clear();
    for (auto& [k, v] : j.at("risks").items())
        r.risks[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    r.macro_f1 = j.at("macro_f1").is_null() ? std::nullopt
                                            : std::optional<double>(j.at("macro_f1").get<double>());
    r.accuracy = j.at("accuracy").is_null() ? std::nullopt
                                            : std::optional<double>(j.at("accuracy").get<double>());
}

struct RiskSelection {
    long combo = -1;
    double mean_risk = 0.0;
    std::optional<double> mean_f1;
    std::optional<double> std_f1;
    bool failed = false;  // no eligible combo
};

inline void to_json(nlohmann::json& j, const RiskSelection& s) {
    j = {{"combo", s.combo}, {"mean_risk", s.mean_risk}, {"failed", s.failed}};
    j["mean_f1"] = s.mean_f1 ? nlohmann::json(*s.mean_f1) : nlohmann::json();
    j["std_f1"] = s.std_f1 ? nlohmann::json(*s.std_f1) : nlohmann::json();
}
inline void from_json(const nlohmann::json& j, RiskSelection& s) {
    s.combo = j.at("combo").get<long>();
    s.mean_risk = j.at("mean_risk").get<double>();
    s.failed = j.value("failed", false);
    s.mean_f1 = j.at("mean_f1").is_null() ? std::nullopt
                                          : std::optional<double>(j.at("mean_f1").get<double>());
    s.std_f1 = j.at("std_f1").is_null() ? std::nullopt
                                        : std::optional<double>(j.at("std_f1").get<double>());
}

struct ScenarioSummary {
    std::string scenario;
    std::map<std::string, RiskSelection> selections;  // risk name -> choice
    long failed_trials = 0;
};

inline void to_json(nlohmann::json& j, const ScenarioSummary& s) {
    j = {{"scenario", s.scenario},
         {"selections", s.selections},
         {"failed_trials", s.failed_trials}};
}
inline void from_json(const nlohmann::json& j, ScenarioSummary& s) {
    s.scenario = j.at("scenario").get<std::string>();
    s.failed_trials = j.value("failed_trials", 0L);
    s.selections.clear();
    for (auto& [k, v] : j.at("selections").items())
        s.selections[k] = v.get<RiskSelection>();
}

struct SweepResult {
    SweepPlan plan;
    std::vector<TrialRow> trials;
    std::vector<ScenarioSummary> summaries;
};

inline void to_json(nlohmann::json& j, const SweepResult& r) {
    j = {{"plan", r.plan}, {"summaries", r.summaries}};
}
inline void from_json(const nlohmann::json& j, SweepResult& r) {
    r.plan = j.at("plan").get<SweepPlan>();
    r.summaries = j.at("summaries").get<std::vector<ScenarioSummary>>();
    r.trials.clear();
}

namespace detail {

inline std::string scenario_key(const Scenario& s) {
    return std::to_string(s.source_domain) + "->" + std::to_string(s.target_domain);
}

inline double population_std(const std::vector<double>& v, double mean) {
    if (v.empty()) return 0.0;
    double s = 0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size()));
}

// Selection over completed trial rows of one scenario.
inline ScenarioSummary summarize_scenario(const SweepPlan& plan, const Scenario& sc,
                                          const std::vector<TrialRow>& rows) {
    ScenarioSummary out;
    out.scenario = scenario_key(sc);
    for (const auto& r : rows)
        if (r.status != "ok") ++out.failed_trials;

    long s_count = static_cast<long>(plan.seeds.size());
    auto row_at = [&](long combo, long si) -> const TrialRow& {
        return rows[static_cast<std::size_t>(combo * s_count + si)];
    };

    for (RiskKind rk : plan.risks) {
        std::string rname = to_string(rk);
        RiskSelection sel;
        if (!plan.per_seed_selection) {
            // seed-averaged risk per combo; a combo with any failed seed is out
            std::vector<double> combo_risk(static_cast<std::size_t>(plan.n_combos),
                                           std::numeric_limits<double>::quiet_NaN());
            for (long c = 0; c < plan.n_combos; ++c) {
                double acc = 0;
                bool ok = true;
                for (long si = 0; si < s_count; ++si) {
                    const auto& row = row_at(c, si);
                    auto it = row.risks.find(rname);
                    if (row.status != "ok" || it == row.risks.end() ||
                        !std::isfinite(it->second)) {
                        ok = false;
                        break;
                    }
                    acc += it->second;
                }
                if (ok) combo_risk[static_cast<std::size_t>(c)] = acc / s_count;
            }
            try {
                sel.combo = select_best(combo_risk);
                sel.mean_risk = combo_risk[static_cast<std::size_t>(sel.combo)];
                std::vector<double> f1s;
                for (long si = 0; si < s_count; ++si) {
                    const auto& row = row_at(sel.combo, si);
                    if (row.macro_f1) f1s.push_back(*row.macro_f1);
                }
                if (!f1s.empty()) {
                    double m = 0;
                    for (double v : f1s) m += v;
                    m /= static_cast<double>(f1s.size());
                    sel.mean_f1 = m;
                    sel.std_f1 = population_std(f1s, m);
                }
            } catch (const SelectionError&) {
                sel.failed = true;
            }
        } else {
            // independent argmin per seed; report the mean of the winners' F1
            std::vector<double> f1s;
            double risk_acc = 0;
            long picked = -1;
            bool any_failed = false;
            for (long si = 0; si < s_count; ++si) {
                std::vector<double> per_combo(static_cast<std::size_t>(plan.n_combos),
                                              std::numeric_limits<double>::quiet_NaN());
                for (long c = 0; c < plan.n_combos; ++c) {
                    const auto& row = row_at(c, si);
                    auto it = row.risks.find(rname);
                    if (row.status == "ok" && it != row.risks.end() && std::isfinite(it->second))
                        per_combo[static_cast<std::size_t>(c)] = it->second;
                }
                try {
                    long best = select_best(per_combo);
                    picked = best;
                    risk_acc += per_combo[static_cast<std::size_t>(best)];
                    const auto& row = row_at(best, si);
                    if (row.macro_f1) f1s.push_back(*row.macro_f1);
                } catch (const SelectionError&) {
                    any_failed = true;
                }
            }
            if (any_failed || picked < 0) {
                sel.failed = true;
            } else {
                sel.combo = picked;  // last seed's winner, reported for reference
                sel.mean_risk = risk_acc / s_count;
                if (!f1s.empty()) {
                    double m = 0;
                    for (double v : f1s) m += v;
                    m /= static_cast<double>(f1s.size());
                    sel.mean_f1 = m;
                    sel.std_f1 = population_std(f1s, m);
                }
            }
        }
        out.selections[rname] = sel;
    }
    return out;
}

}  // namespace detail

// Executes one (scenario, combo, seed) trial: adapt, risks, target metrics.
inline TrialRow run_trial(const SweepPlan& plan, const Scenario& sc, const DomainData& source,
                          const DomainData& target, const FewShotSet* fewshot, long combo,
                          std::uint64_t seed) {
    TrialRow row;
    row.scenario = detail::scenario_key(sc);
    row.combo = combo;
    row.seed = seed;
    row.hparams = plan.hparams_for(combo, seed);

    CandidateModel cand =
        adapt(plan.algorithm, source.train, target.train, plan.backbone, row.hparams, plan.train);
    if (cand.failed) {
        row.status = "failed";
        row.failure_reason = cand.failure_reason;
        for (RiskKind rk : plan.risks)
            row.risks[to_string(rk)] = std::numeric_limits<double>::quiet_NaN();
        return row;
    }

    for (RiskKind rk : plan.risks) {
        switch (rk) {
            case RiskKind::SRC:
                row.risks["SRC"] = src_risk(cand, source.test);
                break;
            case RiskKind::DEV: {
                std::uint64_t dev_seed =
                    splitmix64(plan.sampling_seed ^ splitmix64(static_cast<std::uint64_t>(combo)) ^
                               splitmix64(seed + 0x9e37u));
                row.risks["DEV"] = dev_risk(cand, source.train, source.test, target.train,
                                            dev_seed, &row.dev);
                break;
            }
            case RiskKind::FST:
                require(fewshot != nullptr, "run_trial: FST requested without a few-shot set");
                row.risks["FST"] = fst_risk(cand, *fewshot);
                break;
            case RiskKind::TGT:
                row.risks["TGT"] = tgt_risk(cand, target.test);
                break;
        }
    }
    if (plan.oracle_eval) {
        MetricPair m = evaluate(cand, target.test);
        row.macro_f1 = m.macro_f1;
        row.accuracy = m.accuracy;
    }
    if (plan.save_checkpoints) {
        auto dir = std::filesystem::path(plan.out_dir) / "checkpoints";
        std::filesystem::create_directories(dir);
        auto path = dir / (row.scenario + "_c" + std::to_string(combo) + "_s" +
                           std::to_string(seed) + ".ckpt");
        CheckpointMeta meta;
        meta.algorithm = plan.algorithm;
        meta.hparams = row.hparams;
        save_checkpoint(cand.net, meta, path.string());
        row.checkpoint = path.string();
    }
    return row;
}

// Runs the full grid on preloaded domains. Rows append to
// <out_dir>/trials.jsonl in a fixed scenario-major order as they complete; a
// rerun or an interrupted-and-resumed sweep reproduces the identical file.
// summary.json lands at the end.
inline SweepResult run_sweep_on(const SweepPlan& plan, const std::map<long, DomainData>& domains,
                                bool resume = false) {
    plan.validate();
    std::filesystem::create_directories(plan.out_dir);
    auto trials_path = std::filesystem::path(plan.out_dir) / "trials.jsonl";

    for (const auto& sc : plan.scenarios) {
        require(domains.count(sc.source_domain) && domains.count(sc.target_domain),
                "sweep: scenario references unknown domain");
        const auto& s = domains.at(sc.source_domain);
        const auto& t = domains.at(sc.target_domain);
        sc.validate(s.train.num_classes(), t.train.num_classes(), s.train.channels(),
                    t.train.channels());
    }

    bool want_fst =
        std::find(plan.risks.begin(), plan.risks.end(), RiskKind::FST) != plan.risks.end();
    std::map<std::string, FewShotSet> fewshots;
    if (want_fst)
        for (const auto& sc : plan.scenarios)
            fewshots.emplace(detail::scenario_key(sc),
                             draw_fewshot(domains.at(sc.target_domain).train,
                                          plan.fewshot_per_class, plan.fewshot_seed));

    SweepResult result;
    result.plan = plan;
    long total = plan.total_trials();

    // resume: keep complete leading rows, drop a torn trailing line
    long done = 0;
    if (resume && std::filesystem::exists(trials_path)) {
        std::ifstream is(trials_path);
        std::string line;
        std::vector<std::string> good_lines;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            try {
                result.trials.push_back(nlohmann::json::parse(line).get<TrialRow>());
                good_lines.push_back(line);
            } catch (const nlohmann::json::exception&) {
                break;  // torn write at the interruption point
            }
        }
        is.close();
        done = static_cast<long>(result.trials.size());
        require(done <= total, "sweep resume: trials.jsonl has more rows than the plan");
        std::ofstream os(trials_path, std::ios::trunc);
        for (auto& l : good_lines) os << l << "\n";
    } else {
        std::ofstream os(trials_path, std::ios::trunc);
        if (!os) throw Error("sweep: cannot open " + trials_path.string());
    }

    auto trial_of = [&](long index) {
        long per_sc = plan.trials_per_scenario();
        long sc_idx = index / per_sc;
        long rem = index % per_sc;
        long combo = rem / static_cast<long>(plan.seeds.size());
        long si = rem % static_cast<long>(plan.seeds.size());
        return std::tuple<long, long, long>(sc_idx, combo, si);
    };

    std::ofstream os(trials_path, std::ios::app);
    for (long base = done; base < total; base += plan.workers) {
        long count = std::min(plan.workers, total - base);
        std::vector<TrialRow> rows(static_cast<std::size_t>(count));
        std::vector<std::thread> threads;
        for (long w = 0; w < count; ++w) {
            auto [sc_idx, combo, si] = trial_of(base + w);
            const Scenario& sc = plan.scenarios[static_cast<std::size_t>(sc_idx)];
            const FewShotSet* fs = want_fst ? &fewshots.at(detail::scenario_key(sc)) : nullptr;
            auto work = [&plan, &domains, &rows, sc, fs, combo,
                         seed = plan.seeds[static_cast<std::size_t>(si)], w]() {
                rows[static_cast<std::size_t>(w)] =
                    run_trial(plan, sc, domains.at(sc.source_domain),
                              domains.at(sc.target_domain), fs, combo, seed);
            };
            if (count == 1)
                work();
            else
                threads.emplace_back(work);
        }
        for (auto& t : threads) t.join();
        for (auto& row : rows) {
            os << nlohmann::json(row).dump() << "\n";
            os.flush();
            if (!os) throw Error("sweep: write failure on trials.jsonl");
            result.trials.push_back(std::move(row));
        }
    }
    os.close();

    for (std::size_t i = 0; i < plan.scenarios.size(); ++i) {
        long per_sc = plan.trials_per_scenario();
        std::vector<TrialRow> rows(result.trials.begin() + static_cast<long>(i) * per_sc,
                                   result.trials.begin() + static_cast<long>(i + 1) * per_sc);
        result.summaries.push_back(
            detail::summarize_scenario(plan, plan.scenarios[i], rows));
    }

    std::ofstream sum((std::filesystem::path(plan.out_dir) / "summary.json").string(),
                      std::ios::trunc);
    sum << nlohmann::json(result).dump(2) << "\n";
    if (!sum) throw Error("sweep: cannot write summary.json");
    return result;
}

inline SweepResult run_sweep(const SweepPlan& plan, bool resume = false) {
    return run_sweep_on(plan, load_dataset(plan.dataset_manifest), resume);
}

// ---- cross-scenario aggregation ----

struct BenchmarkTable {
    std::string algorithm;
    std::string dataset;
    BackboneSpec backbone;
    std::vector<std::string> scenario_names;
    struct RiskRow {
        std::string risk;
        std::vector<RiskSelection> per_scenario;
        std::optional<double> average_f1;  // mean over scenarios with a value
    };
    std::vector<RiskRow> rows;
};

inline void to_json(nlohmann::json& j, const BenchmarkTable::RiskRow& r) {
    j = {{"risk", r.risk}, {"per_scenario", r.per_scenario}};
    j["average_f1"] =
        r.average_f1 ? nlohmann::json(*r.average_f1) : nlohmann::json();
}
inline void to_json(nlohmann::json& j, const BenchmarkTable& t) {
    j = {{"algorithm", t.algorithm},
         {"dataset", t.dataset},
         {"backbone", t.backbone},
         {"scenarios", t.scenario_names},
         {"rows", t.rows}};
}

inline bool same_backbone(const BackboneSpec& a, const BackboneSpec& b) {
    return nlohmann::json(a) == nlohmann::json(b);
}

// Per risk: mean over scenarios of the selected models' macro-F1 plus the
// per-scenario mean/std columns. All inputs must share algorithm and
// backbone.
inline BenchmarkTable aggregate(const std::vector<SweepResult>& results) {
    require(!results.empty(), "aggregate: no results");
    BenchmarkTable table;
    table.algorithm = results.front().plan.algorithm;
    table.backbone = results.front().plan.backbone;
    if (!results.front().plan.scenarios.empty())
        table.dataset = results.front().plan.scenarios.front().dataset_name;
    std::vector<std::string> risk_names;
    for (auto rk : results.front().plan.risks) risk_names.push_back(to_string(rk));

    for (const auto& r : results) {
        require(r.plan.algorithm == table.algorithm, "aggregate: mixed algorithms");
        require(same_backbone(r.plan.backbone, table.backbone), "aggregate: mixed backbones");
        for (const auto& s : r.summaries) table.scenario_names.push_back(s.scenario);
    }

    for (const auto& rname : risk_names) {
        typename BenchmarkTable::RiskRow row;
        row.risk = rname;
        double acc = 0;
        long n = 0;
        for (const auto& r : results)
            for (const auto& s : r.summaries) {
                auto it = s.selections.find(rname);
                require(it != s.selections.end(), "aggregate: risk missing from a summary");
                row.per_scenario.push_back(it->second);
                if (it->second.mean_f1) {
                    acc += *it->second.mean_f1;
                    ++n;
                }
            }
        if (n) row.average_f1 = acc / n;
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace tsda
