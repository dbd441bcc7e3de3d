// Command-line front end: run experiments, paired comparisons, lambda
// sweeps, the 2-D toy demonstration, and report rendering.

#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hifgo/commands.hpp"

namespace {

std::vector<double> split_doubles(const std::string& csv) {
    std::vector<double> out;
    std::string item;
    std::stringstream ss(csv);
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw hifgo::ConfigError("cannot parse number '" + item + "'");
        }
    }
    return out;
}

std::vector<std::string> split_names(const std::string& csv) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(csv);
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale continual-learning laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_path;
    std::string strategies_csv;
    std::string lambda1_csv, lambda2_csv;
    std::string format = "md";
    std::vector<std::string> report_paths;
    std::int64_t seed_arg = -1;
    int jobs = 1;

    auto* run = app.add_subcommand("run", "run one configured experiment");
    run->add_option("config", config_path, "config file (TOML subset or JSON)")
        ->required();
    run->add_option("--seed", seed_arg, "override the config seed");
    run->add_option("--out", out_path, "override the report output path");

    auto* compare = app.add_subcommand("compare", "run several strategies on one stream");
    compare->add_option("config", config_path, "config file")->required();
    compare->add_option("--strategies", strategies_csv, "comma-separated strategy names")
        ->required();
    compare->add_option("--seed", seed_arg, "override the config seed");
    compare->add_option("--out", out_path, "directory for the per-strategy reports");

    auto* sweep = app.add_subcommand("sweep", "lambda1 x lambda2 sensitivity grid");
    sweep->add_option("config", config_path, "config file")->required();
    sweep->add_option("--lambda1", lambda1_csv, "comma-separated lambda1 values")
        ->required();
    sweep->add_option("--lambda2", lambda2_csv, "comma-separated lambda2 values")
        ->required();
    sweep->add_option("--jobs", jobs, "max parallel runs");
    sweep->add_option("--seed", seed_arg, "override the config seed");
    sweep->add_option("--out", out_path, "aggregate CSV path");

    auto* toy = app.add_subcommand("toy", "2-D quadratic pair demonstration");
    toy->add_option("--out", out_path, "output directory")->required();
    toy->add_option("--seed", seed_arg, "toy seed");

    auto* report = app.add_subcommand("report", "render report tables");
    report->add_option("files", report_paths, "report JSON files")->required();
    report->add_option("--format", format, "md or csv");
    report->add_option("--out", out_path, "write the table here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    hifgo::CliOverrides overrides;
    if (seed_arg >= 0) overrides.seed = static_cast<std::uint64_t>(seed_arg);
    if (!out_path.empty()) overrides.out = out_path;
    overrides.jobs = jobs;

    if (run->parsed()) return hifgo::cmd_run(config_path, overrides);
    if (compare->parsed()) {
        return hifgo::cmd_compare(config_path, split_names(strategies_csv), overrides);
    }
    if (sweep->parsed()) {
        try {
            return hifgo::cmd_sweep(config_path, split_doubles(lambda1_csv),
                                    split_doubles(lambda2_csv), overrides);
        } catch (const hifgo::Error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
    }
    if (toy->parsed()) {
        return hifgo::cmd_toy(out_path, overrides.seed);
    }
    if (report->parsed()) {
        std::optional<std::string> out_file;
        if (!out_path.empty()) out_file = out_path;
        return hifgo::cmd_report(report_paths, format, out_file);
    }
    return 2;
}
