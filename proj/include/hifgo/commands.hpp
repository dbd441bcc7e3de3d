#pragma once

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hifgo/report.hpp"

namespace hifgo {

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> trace_csv;  // run: also export the loss trace
    int jobs = 1;
};

namespace detail {

/// Relative output paths resolve under HIFGO_OUT_DIR when that is set.
inline std::string resolve_output(const std::string& path) {
    const char* dir = std::getenv("HIFGO_OUT_DIR");
    if (dir && *dir && std::filesystem::path(path).is_relative()) {
        return (std::filesystem::path(dir) / path).string();
    }
    return path;
}

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string fmt2_or_dash(const json& v) {
    return v.is_null() ? std::string("-") : fmt2(v.get<double>());
}

template <typename Fn>
int guard(Fn&& fn) {
    try {
        fn();
        return 0;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {  // config, parse, input, dimension
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

struct PreparedRun {
    RunConfig cfg;
    TaskStream stream;
    Experiment exp;
    Strategy strat;
    OptimConfig optim;
    SubsetPlan plan;
};

inline PreparedRun prepare_run(const std::string& config_path,
                               const CliOverrides& overrides) {
    PreparedRun r;
    r.cfg = parse_run_config(load_config_file(config_path));
    if (overrides.seed) r.cfg.seed = *overrides.seed;
    if (overrides.out) r.cfg.output = *overrides.out;
    r.stream = build_stream(r.cfg);
    r.exp = build_experiment(r.cfg, r.stream);
    r.strat = build_strategy(r.cfg.strategy);
    r.optim = build_optim(r.cfg.optim);
    r.plan = build_plan(r.cfg);
    return r;
}

inline std::string metrics_summary_line(const json& metrics) {
    return "last=" + fmt2_or_dash(metrics["last"]) +
           " avg=" + fmt2_or_dash(metrics["avg"]) +
           " bwt=" + fmt2_or_dash(metrics["bwt"]);
}

}  // namespace detail

/// `run <config>`: executes the configured strategy on the configured
/// stream and writes a schema-v1 report.
inline int cmd_run(const std::string& config_path, const CliOverrides& overrides = {},
                   std::ostream& out = std::cout) {
    return detail::guard([&] {
        detail::PreparedRun r = detail::prepare_run(config_path, overrides);
        const std::string path = detail::resolve_output(r.cfg.output);
        const RunArtifacts art =
            run_continual(r.exp, r.stream, r.strat, r.optim, r.plan, r.cfg.seed);
        const json report =
            make_run_report("run", run_config_to_json(r.cfg), art, path);
        write_text_file(path, report.dump(2) + "\n");
        out << "wrote " << path << "  "
            << detail::metrics_summary_line(report["metrics"]) << "\n";
    });
}

/// `compare <config> --strategies a,b,...`: runs each strategy on the
/// identical stream and seed, writes one report per strategy, prints a
/// side-by-side table.
inline int cmd_compare(const std::string& config_path,
                       const std::vector<std::string>& strategies,
                       const CliOverrides& overrides = {},
                       std::ostream& out = std::cout) {
    return detail::guard([&] {
        if (strategies.size() < 2) {
            throw ConfigError("compare needs at least two strategies");
        }
        for (const auto& name : strategies) parse_strategy_name(name);

        detail::PreparedRun base = detail::prepare_run(config_path, overrides);
        const std::filesystem::path out_path =
            detail::resolve_output(base.cfg.output);
        const std::filesystem::path dir =
            overrides.out ? std::filesystem::path(detail::resolve_output(*overrides.out))
                          : out_path.parent_path();
        const std::string stem =
            out_path.stem().string().empty() ? "compare" : out_path.stem().string();

        struct Row {
            std::string name;
            json metrics;
            json perf;
        };
        std::vector<Row> rows;
        for (const auto& name : strategies) {
            RunConfig cfg = base.cfg;
            cfg.strategy.name = name;
            cfg.output = (dir / (stem + "_" + name + ".json")).string();
            const Strategy strat = build_strategy(cfg.strategy);
            const RunArtifacts art = run_continual(base.exp, base.stream, strat,
                                                   base.optim, base.plan, cfg.seed);
            const json report =
                make_run_report("compare", run_config_to_json(cfg), art, cfg.output);
            write_text_file(cfg.output, report.dump(2) + "\n");
            rows.push_back({name, report["metrics"], report["perf_matrix"]});
        }

        const int n = rows.front().metrics["n"].get<int>();
        std::string header = "| strategy | Last | Avg | BWT |";
        std::string rule = "|---|---|---|---|";
        for (int j = 1; j <= n; ++j) {
            header += " Imd T" + std::to_string(j) + " |";
            rule += "---|";
        }
        for (int j = 1; j <= n; ++j) {
            header += " Last T" + std::to_string(j) + " |";
            rule += "---|";
        }
        out << header << "\n" << rule << "\n";
        for (const auto& row : rows) {
            std::string line = "| " + row.name + " | " +
                               detail::fmt2_or_dash(row.metrics["last"]) + " | " +
                               detail::fmt2_or_dash(row.metrics["avg"]) + " | " +
                               detail::fmt2_or_dash(row.metrics["bwt"]) + " |";
            const json& imd_row = row.metrics["imd"];
            for (int j = 0; j < n; ++j) {
                line += " " +
                        (imd_row.is_null() ? std::string("-")
                                           : detail::fmt2(imd_row[j].get<double>())) +
                        " |";
            }
            for (int j = 0; j < n; ++j) {
                const json& cell = row.perf[n - 1][j];
                line += " " + detail::fmt2_or_dash(cell) + " |";
            }
            out << line << "\n";
        }
    });
}

struct SweepRow {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double last = 0.0;
    double avg = 0.0;
    double bwt = 0.0;
    double mean_imd = 0.0;
};

/// Grid execution behind `sweep`. Each point trains with a seed derived
/// from (config seed, grid index); the stream and subset plan stay fixed so
/// points differ only in regularization strength and training randomness.
inline std::vector<SweepRow> run_sweep(const detail::PreparedRun& base,
                                       const std::vector<double>& lambda1s,
                                       const std::vector<double>& lambda2s, int jobs) {
    const std::size_t total = lambda1s.size() * lambda2s.size();
    std::vector<SweepRow> rows(total);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next.fetch_add(1); k < total; k = next.fetch_add(1)) {
            const double l1 = lambda1s[k / lambda2s.size()];
            const double l2 = lambda2s[k % lambda2s.size()];
            Strategy strat = base.strat;
            strat.reg.lambda1 = l1;
            strat.reg.lambda2 = l2;
            // grid point k trains on rng stream k; point 0 therefore matches
            // a plain `run` of the same config exactly
            const RunArtifacts art = run_continual(base.exp, base.stream, strat,
                                                   base.optim, base.plan,
                                                   base.cfg.seed, k);
            SweepRow row;
            row.lambda1 = l1;
            row.lambda2 = l2;
            row.last = last(art.perf);
            row.avg = avg(art.perf);
            row.bwt = art.perf.n >= 2 ? bwt(art.perf)
                                      : std::numeric_limits<double>::quiet_NaN();
            double mi = 0.0;
            for (double v : imd(art.perf)) mi += v;
            row.mean_imd = mi / art.perf.n;
            rows[k] = row;
        }
    };
    const int nthreads = std::max(1, std::min<int>(jobs, static_cast<int>(total)));
    std::vector<std::thread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::string out = "lambda1,lambda2,last,avg,bwt,mean_imd\n";
    for (const auto& r : rows) {
        out += format_double(r.lambda1) + "," + format_double(r.lambda2) + "," +
               format_double(r.last) + "," + format_double(r.avg) + "," +
               format_double(r.bwt) + "," + format_double(r.mean_imd) + "\n";
    }
    return out;
}

/// `sweep <config> --lambda1 ... --lambda2 ...`: one run per grid point,
/// aggregate CSV plus a monotonicity summary along the lambda2 axis.
inline int cmd_sweep(const std::string& config_path,
                     const std::vector<double>& lambda1s,
                     const std::vector<double>& lambda2s,
                     const CliOverrides& overrides = {},
                     std::ostream& out = std::cout) {
    return detail::guard([&] {
        if (lambda1s.empty() || lambda2s.empty()) {
            throw ConfigError("sweep needs non-empty lambda1 and lambda2 lists");
        }
        for (double v : lambda1s) {
            if (v < 0.0) throw ConfigError("sweep lambda1 values must be non-negative");
        }
        for (double v : lambda2s) {
            if (v < 0.0) throw ConfigError("sweep lambda2 values must be non-negative");
        }
        detail::PreparedRun base = detail::prepare_run(config_path, {overrides.seed, {}, 1});

        std::string csv_path = detail::resolve_output(
            overrides.out ? *overrides.out
                          : std::filesystem::path(base.cfg.output)
                                .replace_extension(".csv")
                                .string());
        const auto rows = run_sweep(base, lambda1s, lambda2s, overrides.jobs);
        write_text_file(csv_path, sweep_to_csv(rows));
        out << "wrote " << csv_path << "\n";

        for (std::size_t i = 0; i < lambda1s.size(); ++i) {
            bool bwt_nondec = true, imd_noninc = true;
            for (std::size_t j = 1; j < lambda2s.size(); ++j) {
                const auto& prev = rows[i * lambda2s.size() + j - 1];
                const auto& cur = rows[i * lambda2s.size() + j];
                if (!(cur.bwt >= prev.bwt - 1e-9) && !std::isnan(cur.bwt)) {
                    bwt_nondec = false;
                }
                if (!(cur.mean_imd <= prev.mean_imd + 1e-9)) imd_noninc = false;
            }
            out << "lambda1=" << format_double(lambda1s[i])
                << ": bwt non-decreasing in lambda2: " << (bwt_nondec ? "yes" : "no")
                << "; mean imd non-increasing: " << (imd_noninc ? "yes" : "no") << "\n";
        }
    });
}

struct ToyResult {
    double identity_population = 0.0;
    double identity_empirical = 0.0;
    double seqft_dist_to_theta_b = 0.0;
    double seqft_loss_a_excess = 0.0;
    double seqft_loss_b_excess = 0.0;
    double hifgo_loss_a_excess = 0.0;
    double hifgo_loss_b_excess = 0.0;
};

namespace detail {

inline double population_excess(const Matrix& w, const Matrix& theta,
                                const Matrix& hessian) {
    const Matrix d = w - theta;
    std::vector<double> flat(d.data());
    const auto hd = matvec(hessian, flat);
    double acc = 0.0;
    for (std::size_t i = 0; i < flat.size(); ++i) acc += flat[i] * hd[i];
    return 0.5 * acc;
}

}  // namespace detail

/// The 2-D quadratic demonstration behind `toy`: two isotropic regression
/// tasks with optima (1,0) and (0,1), trained with plain sequential
/// finetuning and with the proxy gradient-orthogonality constraint, both
/// full batch. Emits plot-ready per-step trajectories and a summary with
/// the g = H_A v identity check.
inline ToyResult run_toy(const std::string& out_dir, std::uint64_t seed = 7) {
    const Matrix h = Matrix::identity(2);
    const TaskStream pair =
        gen_quadratic_pair({1.0, 0.0}, {0.0, 1.0}, h, h, 500, 0.01, seed);
    const Matrix theta_a = *pair.tasks[0].theta_star;
    const Matrix theta_b = *pair.tasks[1].theta_star;

    Experiment exp;
    exp.spec = ModelSpec::linear_regression(2, 1);
    exp.base = zero_base(exp.spec.layers);
    exp.lora.rank = 1;
    exp.lora.scale = 1.0;

    OptimConfig optim;
    optim.method = OptimMethod::sgd;
    optim.lr = 0.1;
    optim.epochs_stage1 = 160;  // full-batch steps
    optim.epochs_stage2 = 240;
    optim.batch_size = pair.tasks[0].train.size();

    SubsetPlan plan;
    plan.rho = 1.0;
    plan.seed = seed;

    Strategy seq;
    seq.kind = StrategyKind::seq_ft;

    Strategy hifgo;
    hifgo.kind = StrategyKind::hifgo_proxy;
    hifgo.reg.lambda1 = 0.5;
    hifgo.reg.lambda2 = 0.0;
    hifgo.two_stage = true;
    hifgo.stage2_init = Stage2Init::fresh;

    std::string csv = "strategy,step,w1,w2,loss_a,loss_b\n";
    ToyResult result;

    auto run_one = [&](const char* name, const Strategy& strat) -> Matrix {
        int global_step = 0;
        StepObserver observer = [&](const StepInfo& info) {
            static const DeltaStack empty;
            const LayerMats w =
                merge(*info.base, info.stack ? *info.stack : empty, info.adapter);
            csv += std::string(name) + "," + std::to_string(global_step++) + "," +
                   format_double(w[0](0, 0)) + "," + format_double(w[0](0, 1)) + "," +
                   format_double(detail::population_excess(w[0], theta_a, h)) + "," +
                   format_double(detail::population_excess(w[0], theta_b, h)) + "\n";
        };
        const RunArtifacts art =
            run_continual(exp, pair, strat, optim, plan, seed, 0, &observer);
        return merge(exp.base, art.stack)[0];
    };

    const Matrix w_seq = run_one("seq-ft", seq);
    const Matrix w_hifgo = run_one("hifgo-proxy", hifgo);

    result.identity_population = gpwc_identity_check(pair, GpwcForm::population);
    result.identity_empirical = gpwc_identity_check(pair, GpwcForm::empirical);
    result.seqft_dist_to_theta_b = frobenius_norm(w_seq - theta_b);
    result.seqft_loss_a_excess = detail::population_excess(w_seq, theta_a, h);
    result.seqft_loss_b_excess = detail::population_excess(w_seq, theta_b, h);
    result.hifgo_loss_a_excess = detail::population_excess(w_hifgo, theta_a, h);
    result.hifgo_loss_b_excess = detail::population_excess(w_hifgo, theta_b, h);

    const std::filesystem::path dir(out_dir);
    write_text_file((dir / "trajectories.csv").string(), csv);
    json summary;
    summary["identity_check"] = {{"population", result.identity_population},
                                 {"empirical", result.identity_empirical}};
    summary["seq_ft"] = {{"final_w", {w_seq(0, 0), w_seq(0, 1)}},
                         {"dist_to_theta_b", result.seqft_dist_to_theta_b},
                         {"loss_a_excess", result.seqft_loss_a_excess},
                         {"loss_b_excess", result.seqft_loss_b_excess}};
    summary["hifgo_proxy"] = {{"final_w", {w_hifgo(0, 0), w_hifgo(0, 1)}},
                              {"loss_a_excess", result.hifgo_loss_a_excess},
                              {"loss_b_excess", result.hifgo_loss_b_excess}};
    write_text_file((dir / "summary.json").string(), summary.dump(2) + "\n");
    return result;
}

/// `toy --out <dir>`: writes trajectories.csv and summary.json.
inline int cmd_toy(const std::string& out_dir,
                   std::optional<std::uint64_t> seed = std::nullopt,
                   std::ostream& out = std::cout) {
    return detail::guard([&] {
        const ToyResult r =
            run_toy(detail::resolve_output(out_dir), seed.value_or(7));
        out << "identity population rel error: "
            << format_double(r.identity_population) << "\n";
        out << "seq-ft dist to theta_B*: " << format_double(r.seqft_dist_to_theta_b)
            << "\n";
        out << "task-A loss excess: seq-ft " << format_double(r.seqft_loss_a_excess)
            << " vs hifgo-proxy " << format_double(r.hifgo_loss_a_excess) << "\n";
    });
}

/// `report <files...>`: renders per-task tables in the Imd/Last layout,
/// grouped by task count (no padding across mismatched streams).
inline int cmd_report(const std::vector<std::string>& paths,
                      const std::string& format = "md",
                      const std::optional<std::string>& out_file = std::nullopt,
                      std::ostream& out = std::cout) {
    return detail::guard([&] {
        if (paths.empty()) throw ConfigError("report needs at least one report file");
        if (format != "md" && format != "csv") {
            throw ConfigError("report format must be md or csv");
        }
        struct Entry {
            std::string name;
            int n;
            json metrics;
            json perf;
        };
        std::vector<Entry> entries;
        for (const auto& p : paths) {
            const json rep = load_report_file(p);
            Entry e;
            e.name = std::filesystem::path(p).stem().string();
            e.metrics = rep["metrics"];
            e.n = e.metrics["n"].get<int>();
            e.perf = rep["perf_matrix"];
            entries.push_back(std::move(e));
        }

        std::map<int, std::vector<const Entry*>> groups;
        for (const auto& e : entries) groups[e.n].push_back(&e);

        std::string text;
        for (const auto& [n, group] : groups) {
            if (format == "md") {
                std::string header = "| run | metric |";
                std::string rule = "|---|---|";
                for (int j = 1; j <= n; ++j) {
                    header += " T" + std::to_string(j) + " |";
                    rule += "---|";
                }
                header += " Average | BWT |";
                rule += "---|---|";
                text += header + "\n" + rule + "\n";
            } else {
                std::string header = "run,metric";
                for (int j = 1; j <= n; ++j) header += ",t" + std::to_string(j);
                header += ",average,bwt";
                text += header + "\n";
            }
            for (const Entry* e : group) {
                const json& imd_vals = e->metrics["imd"];
                std::string imd_cells, last_cells;
                double imd_mean = 0.0;
                for (int j = 0; j < n; ++j) {
                    const std::string sep = format == "md" ? " | " : ",";
                    const std::string iv =
                        imd_vals.is_null() ? "-" : detail::fmt2(imd_vals[j].get<double>());
                    const json& lv = e->perf[n - 1][j];
                    imd_cells += sep + iv;
                    last_cells += sep + detail::fmt2_or_dash(lv);
                    if (!imd_vals.is_null()) imd_mean += imd_vals[j].get<double>();
                }
                imd_mean /= n;
                const std::string imd_avg =
                    imd_vals.is_null() ? "-" : detail::fmt2(imd_mean);
                if (format == "md") {
                    text += "| " + e->name + " | Imd" + imd_cells + " | " + imd_avg +
                            " | " + detail::fmt2_or_dash(e->metrics["bwt"]) + " |\n";
                    text += "| " + e->name + " | Last" + last_cells + " | " +
                            detail::fmt2_or_dash(e->metrics["last"]) + " |  |\n";
                } else {
                    text += e->name + ",Imd" + imd_cells + "," + imd_avg + "," +
                            detail::fmt2_or_dash(e->metrics["bwt"]) + "\n";
                    text += e->name + ",Last" + last_cells + "," +
                            detail::fmt2_or_dash(e->metrics["last"]) + ",\n";
                }
            }
            text += "\n";
        }
        if (out_file) {
            write_text_file(detail::resolve_output(*out_file), text);
        } else {
            out << text;
        }
    });
}

}  // namespace hifgo
