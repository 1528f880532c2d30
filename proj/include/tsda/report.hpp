#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tsda/metrics.hpp"
#include "tsda/sweep.hpp"

namespace tsda {

struct ReportInputs {
    std::vector<BenchmarkTable> tables;  // one per algorithm, shared scenario set
    std::vector<DomainGapRow> gaps;
};

struct RenderedReport {
    std::string markdown;
    std::string summary_csv;
    std::string detailed_csv;
};

namespace detail {

inline std::string pct(double ratio) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", ratio * 100.0);
    return buf;
}

inline std::string pct2(double percent) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", percent);
    return buf;
}

}  // namespace detail

// Deterministic markdown + CSV rendering. Values print on the percent scale;
// inputs stay on the ratio scale.
inline RenderedReport render_report(const ReportInputs& in) {
    RenderedReport out;
    std::string& md = out.markdown;
    std::string& csv = out.summary_csv;
    std::string& det = out.detailed_csv;

    std::vector<std::string> risk_names;
    if (!in.tables.empty())
        for (const auto& r : in.tables.front().rows) risk_names.push_back(r.risk);

    md += "# Benchmark report\n\n## Macro-F1 by model-selection risk\n\n";
    md += "| Dataset | Risk |";
    csv += "dataset,risk";
    for (const auto& t : in.tables) {
        md += " " + t.algorithm + " |";
        csv += "," + t.algorithm;
    }
    md += " Avg/Risk |\n|---|---|";
    csv += ",avg_risk\n";
    for (std::size_t i = 0; i < in.tables.size() + 1; ++i) md += "---|";
    md += "\n";

    std::string dataset = in.tables.empty() ? "" : in.tables.front().dataset;
    for (const auto& rname : risk_names) {
        md += "| " + dataset + " | " + rname + " |";
        csv += dataset + "," + rname;
        double acc = 0;
        long n = 0;
        for (const auto& t : in.tables) {
            const BenchmarkTable::RiskRow* row = nullptr;
            for (const auto& r : t.rows)
                if (r.risk == rname) row = &r;
            require(row != nullptr, "render_report: tables disagree on risks");
            if (row->average_f1) {
                md += " " + detail::pct(*row->average_f1) + " |";
                csv += "," + detail::pct(*row->average_f1);
                acc += *row->average_f1;
                ++n;
            } else {
                md += " - |";
                csv += ",";
            }
        }
        if (n) {
            md += " " + detail::pct(acc / n) + " |\n";
            csv += "," + detail::pct(acc / n) + "\n";
        } else {
            md += " - |\n";
            csv += ",\n";
        }
    }

    det += "algorithm,risk,scenario,mean_f1,std_f1\n";
    for (const auto& t : in.tables) {
        if (t.scenario_names.empty()) continue;
        md += "\n## " + t.algorithm + " per-scenario macro-F1 (mean ± std)\n\n| Risk |";
        for (const auto& s : t.scenario_names) md += " " + s + " |";
        md += "\n|---|";
        for (std::size_t i = 0; i < t.scenario_names.size(); ++i) md += "---|";
        md += "\n";
        for (const auto& r : t.rows) {
            md += "| " + r.risk + " |";
            for (std::size_t i = 0; i < r.per_scenario.size(); ++i) {
                const auto& sel = r.per_scenario[i];
                if (sel.mean_f1) {
                    md += " " + detail::pct(*sel.mean_f1) + " ± " +
                          detail::pct(sel.std_f1.value_or(0.0)) + " |";
                    det += t.algorithm + "," + r.risk + "," + t.scenario_names[i] + "," +
                           detail::pct(*sel.mean_f1) + "," +
                           detail::pct(sel.std_f1.value_or(0.0)) + "\n";
                } else {
                    md += " - |";
                    det += t.algorithm + "," + r.risk + "," + t.scenario_names[i] + ",,\n";
                }
            }
            md += "\n";
        }
    }

    if (!in.gaps.empty()) {
        md += "\n## Domain gap (target-only vs source-only bounds)\n\n";
        md += "| Dataset | Target-only | Source-only | Gap |\n|---|---|---|---|\n";
        std::vector<std::string> footnotes;
        for (const auto& g : in.gaps) {
            md += "| " + g.dataset + " | " + detail::pct2(g.target_only) + " | " +
                  detail::pct2(g.source_only) + " | " + detail::pct2(g.gap) + " |\n";
            if (gap_inconsistent(g))
                footnotes.push_back(g.dataset + ": published gap " +
                                    detail::pct2(*g.reference_gap) +
                                    " disagrees with the recomputed difference " +
                                    detail::pct2(g.gap) + "; the recomputed value is shown.");
        }
        if (!footnotes.empty()) {
            md += "\nNotes:\n";
            for (const auto& f : footnotes) md += "- " + f + "\n";
        }
    }
    return out;
}

inline void write_report(const RenderedReport& r, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    auto put = [&](const char* name, const std::string& content) {
        std::ofstream os((std::filesystem::path(out_dir) / name).string(),
                         std::ios::binary | std::ios::trunc);
        os << content;
        if (!os) throw Error(std::string("report: cannot write ") + name);
    };
    put("report.md", r.markdown);
    put("summary.csv", r.summary_csv);
    put("detailed.csv", r.detailed_csv);
}

}  // namespace tsda
