#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hifgo/config.hpp"
#include "hifgo/trainer.hpp"
#include "hifgo/version.hpp"

namespace hifgo {

/// Shortest round-trip decimal formatting, byte-stable across runs.
inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

inline json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = m.data();
    return j;
}

inline json adapter_to_json(const LoraAdapter& ad) {
    json j;
    j["rank"] = ad.rank;
    j["scale"] = ad.scale;
    json layers = json::array();
    for (std::size_t l = 0; l < ad.layer_count(); ++l) {
        json layer;
        layer["b"] = matrix_to_json(ad.b[l]);
        layer["a"] = matrix_to_json(ad.a[l]);
        layers.push_back(std::move(layer));
    }
    j["layers"] = std::move(layers);
    return j;
}

/// Metric summary; metrics that are undefined for the run (bwt at n = 1,
/// avg for multi-task runs with absent rows) serialize as null.
inline json metrics_to_json(const PerfMatrix& pm) {
    json j;
    j["n"] = pm.n;
    auto guarded = [&](auto fn) -> json {
        try {
            return fn();
        } catch (const InputError&) {
            return nullptr;
        }
    };
    j["last"] = guarded([&] { return json(last(pm)); });
    j["avg"] = guarded([&] { return json(avg(pm)); });
    j["avg_all"] = guarded([&] { return json(avg_all(pm)); });
    j["bwt"] = guarded([&] { return json(bwt(pm)); });
    j["imd"] = guarded([&] { return json(imd(pm)); });
    return j;
}

inline json perf_to_json(const PerfMatrix& pm) {
    json rows = json::array();
    for (int t = 0; t < pm.n; ++t) {
        json row = json::array();
        for (int j = 0; j < pm.n; ++j) row.push_back(pm.at(t, j));  // NaN -> null
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string trace_to_csv(const std::vector<TraceRow>& trace) {
    std::string out = "task,stage,step,ce,orth,norm,total\n";
    for (const auto& r : trace) {
        out += std::to_string(r.task) + "," + std::to_string(r.stage) + "," +
               std::to_string(r.step) + "," + format_double(r.ce) + "," +
               format_double(r.orth) + "," + format_double(r.norm) + "," +
               format_double(r.total) + "\n";
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    const auto parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

constexpr std::size_t kTraceSidecarThreshold = 10000;

/// Full run report, schema version 1. Loss traces above the sidecar
/// threshold are written next to the report as CSV to keep the JSON
/// reviewable. Wall time lives in its own block; determinism comparisons
/// erase it.
inline json make_run_report(const std::string& command, const json& config_echo,
                            const RunArtifacts& art,
                            const std::string& report_path) {
    json j;
    j["schema_version"] = 1;
    j["library_version"] = std::string(kVersion);
    j["command"] = command;
    j["config"] = config_echo;
    j["metrics"] = metrics_to_json(art.perf);
    j["perf_matrix"] = perf_to_json(art.perf);
    j["trace_columns"] = {"task", "stage", "step", "ce", "orth", "norm", "total"};
    if (art.trace.size() > kTraceSidecarThreshold) {
        const std::string sidecar = report_path + ".trace.csv";
        write_text_file(sidecar, trace_to_csv(art.trace));
        j["trace"] = {{"sidecar_csv", sidecar}};
    } else {
        json rows = json::array();
        for (const auto& r : art.trace) {
            rows.push_back({r.task, r.stage, r.step, r.ce, r.orth, r.norm, r.total});
        }
        j["trace"] = std::move(rows);
    }
    json snaps = json::array();
    for (const auto& s : art.snapshot_norms) {
        snaps.push_back(
            {{"task", s.task}, {"source", s.source}, {"layer_norms", s.layer_norms}});
    }
    j["snapshot_norms"] = std::move(snaps);
    j["accounting"] = {{"sets_per_step", art.accounting.sets_per_step},
                       {"stage2_steps", art.accounting.stage2_steps},
                       {"set_evals_total", art.accounting.set_evals_total},
                       {"stage1_steps_total", art.accounting.stage1_steps_total},
                       {"stage2_steps_total", art.accounting.stage2_steps_total}};
    json stack = json::array();
    for (const auto& entry : art.stack.entries) {
        json layers = json::array();
        for (const auto& m : entry) layers.push_back(matrix_to_json(m));
        stack.push_back(std::move(layers));
    }
    json artifacts;
    artifacts["delta_stack"] = std::move(stack);
    json s1 = json::array(), s2 = json::array();
    for (const auto& ad : art.stage1_adapters) s1.push_back(adapter_to_json(ad));
    for (const auto& ad : art.stage2_adapters) s2.push_back(adapter_to_json(ad));
    artifacts["stage1_adapters"] = std::move(s1);
    artifacts["stage2_adapters"] = std::move(s2);
    j["artifacts"] = std::move(artifacts);
    j["timing"] = {{"wall_ms", art.wall_ms}};
    return j;
}

inline json load_report_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report file: " + path);
    json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("malformed report " + path + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("schema_version") || !j.contains("metrics") ||
        !j.contains("perf_matrix") || !j.contains("config")) {
        throw ParseError("malformed report " + path + ": missing required blocks");
    }
    return j;
}

/// Report bytes with the timing block removed; equal inputs must produce
/// equal strings.
inline std::string deterministic_dump(json report) {
    report.erase("timing");
    return report.dump(2);
}

}  // namespace hifgo
