#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hifgo/trainer.hpp"

namespace hifgo {

using json = nlohmann::ordered_json;

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

// Cuts an inline comment, respecting double-quoted strings.
inline std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

inline json parse_toml_scalar(const std::string& raw, int line) {
    const std::string v = trim(raw);
    if (v.empty()) throw ParseError("config line " + std::to_string(line) + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') {
            throw ParseError("config line " + std::to_string(line) +
                             ": unterminated string");
        }
        return v.substr(1, v.size() - 2);
    }
    if (v == "true") return true;
    if (v == "false") return false;
    {
        std::int64_t iv = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), iv);
        if (ec == std::errc() && p == v.data() + v.size()) return iv;
    }
    {
        double dv = 0.0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), dv);
        if (ec == std::errc() && p == v.data() + v.size()) return dv;
    }
    throw ParseError("config line " + std::to_string(line) + ": cannot parse value '" +
                     v + "'");
}

}  // namespace detail

/// Parses the project's TOML-compatible config subset: single-level
/// [sections], key = value pairs, strings, numbers, booleans and flat
/// arrays, with # comments. This covers the whole config schema; anything
/// fancier belongs in the JSON encoding.
inline json parse_toml_subset(const std::string& text) {
    json root = json::object();
    json* current = &root;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = detail::trim(detail::strip_comment(line));
        if (stripped.empty()) continue;
        if (stripped.front() == '[') {
            if (stripped.back() != ']') {
                throw ParseError("config line " + std::to_string(lineno) +
                                 ": malformed section header");
            }
            const std::string name = detail::trim(stripped.substr(1, stripped.size() - 2));
            if (name.empty()) {
                throw ParseError("config line " + std::to_string(lineno) +
                                 ": empty section name");
            }
            current = &root[name];
            if (current->is_null()) *current = json::object();
            continue;
        }
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(lineno) +
                             ": expected 'key = value'");
        }
        const std::string key = detail::trim(stripped.substr(0, eq));
        const std::string value = detail::trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ParseError("config line " + std::to_string(lineno) + ": empty key");
        }
        if (!value.empty() && value.front() == '[') {
            if (value.back() != ']') {
                throw ParseError("config line " + std::to_string(lineno) +
                                 ": unterminated array");
            }
            json arr = json::array();
            std::string body = value.substr(1, value.size() - 2);
            std::string item;
            bool quoted = false;
            for (char c : body) {
                if (c == '"') quoted = !quoted;
                if (c == ',' && !quoted) {
                    if (!detail::trim(item).empty())
                        arr.push_back(detail::parse_toml_scalar(item, lineno));
                    item.clear();
                } else {
                    item += c;
                }
            }
            if (!detail::trim(item).empty())
                arr.push_back(detail::parse_toml_scalar(item, lineno));
            (*current)[key] = std::move(arr);
        } else {
            (*current)[key] = detail::parse_toml_scalar(value, lineno);
        }
    }
    return root;
}

/// Loads a config file, accepting the TOML subset or JSON (picked by the
/// first non-space character).
inline json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const std::size_t first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        try {
            return json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("config file " + path + ": " + e.what());
        }
    }
    return parse_toml_subset(text);
}

struct StreamConfig {
    std::string generator = "rotated-gaussians";
    int tasks = 3;
    int classes = 4;
    int dim = 8;
    double rotation_step = std::numbers::pi / 3.0;
    int samples = 2000;
    double noise_std = 0.3;
    // quadratic-pair
    std::vector<double> theta_a;
    std::vector<double> theta_b;
    std::vector<double> hessian_a;  // row-major dim x dim; empty = identity
    std::vector<double> hessian_b;
    // csv
    std::vector<std::string> paths;
    std::string label_column = "label";
};

struct ModelConfig {
    std::string kind = "linear-softmax";
    int hidden = 16;
    std::string activation = "tanh";
};

struct StrategyConfig {
    std::string name = "hifgo-proxy";
    double lambda1 = 2e-2;
    double lambda2 = 1e-2;
    bool two_stage = true;
    std::string stage2_init = "copy";
    std::string orth_penalty = "abs";
    bool normalize_gpwc = false;
};

struct OptimSection {
    std::string method = "sgd-momentum";
    double lr = 0.05;
    double momentum = 0.9;
    int epochs_stage1 = 1;
    int epochs_stage2 = 3;
    int batch_size = 16;
};

struct SubsetSection {
    double rho = 0.1;
    int d2_count = 0;  // 0 means use rho
    std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output = "hifgo_report.json";
    StreamConfig stream;
    ModelConfig model;
    LoraConfig lora;
    StrategyConfig strategy;
    OptimSection optim;
    SubsetSection subset;
};

namespace detail {

inline std::string field_path(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
}

inline const json* find_field(const json& root, const std::string& section,
                              const std::string& key) {
    const json* scope = &root;
    if (!section.empty()) {
        auto it = root.find(section);
        if (it == root.end()) return nullptr;
        scope = &*it;
    }
    auto it = scope->find(key);
    return it == scope->end() ? nullptr : &*it;
}

inline double get_number(const json& root, const std::string& section,
                         const std::string& key, double def) {
    const json* f = find_field(root, section, key);
    if (!f) return def;
    if (!f->is_number()) {
        throw ConfigError(field_path(section, key) + ": expected a number");
    }
    return f->get<double>();
}

inline int get_int(const json& root, const std::string& section,
                   const std::string& key, int def) {
    const json* f = find_field(root, section, key);
    if (!f) return def;
    if (!f->is_number_integer()) {
        throw ConfigError(field_path(section, key) + ": expected an integer");
    }
    return f->get<int>();
}

inline bool get_bool(const json& root, const std::string& section,
                     const std::string& key, bool def) {
    const json* f = find_field(root, section, key);
    if (!f) return def;
    if (!f->is_boolean()) {
        throw ConfigError(field_path(section, key) + ": expected true or false");
    }
    return f->get<bool>();
}

inline std::string get_string(const json& root, const std::string& section,
                              const std::string& key, const std::string& def) {
    const json* f = find_field(root, section, key);
    if (!f) return def;
    if (!f->is_string()) {
        throw ConfigError(field_path(section, key) + ": expected a string");
    }
    return f->get<std::string>();
}

inline std::vector<double> get_double_array(const json& root, const std::string& section,
                                            const std::string& key) {
    const json* f = find_field(root, section, key);
    if (!f) return {};
    if (!f->is_array()) {
        throw ConfigError(field_path(section, key) + ": expected an array of numbers");
    }
    std::vector<double> out;
    for (const auto& v : *f) {
        if (!v.is_number()) {
            throw ConfigError(field_path(section, key) + ": expected an array of numbers");
        }
        out.push_back(v.get<double>());
    }
    return out;
}

inline std::vector<std::string> get_string_array(const json& root,
                                                 const std::string& section,
                                                 const std::string& key) {
    const json* f = find_field(root, section, key);
    if (!f) return {};
    if (!f->is_array()) {
        throw ConfigError(field_path(section, key) + ": expected an array of strings");
    }
    std::vector<std::string> out;
    for (const auto& v : *f) {
        if (!v.is_string()) {
            throw ConfigError(field_path(section, key) + ": expected an array of strings");
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

inline void reject_unknown_keys(const json& root) {
    static const std::map<std::string, std::set<std::string>> known = {
        {"", {"seed", "output"}},
        {"stream",
         {"generator", "tasks", "classes", "dim", "rotation_step", "samples",
          "noise_std", "theta_a", "theta_b", "hessian_a", "hessian_b", "paths",
          "label_column"}},
        {"model", {"kind", "hidden", "activation"}},
        {"lora", {"rank", "scale", "init_std"}},
        {"strategy",
         {"name", "lambda1", "lambda2", "two_stage", "stage2_init", "orth_penalty",
          "normalize_gpwc"}},
        {"optim",
         {"method", "lr", "momentum", "epochs_stage1", "epochs_stage2", "batch_size"}},
        {"subset", {"rho", "d2_count", "seed"}},
    };
    for (auto it = root.begin(); it != root.end(); ++it) {
        if (it.value().is_object()) {
            auto section = known.find(it.key());
            if (section == known.end()) {
                throw ConfigError("unknown config section '" + it.key() + "'");
            }
            for (auto kv = it.value().begin(); kv != it.value().end(); ++kv) {
                if (!section->second.count(kv.key())) {
                    throw ConfigError("unknown config key '" +
                                      field_path(it.key(), kv.key()) + "'");
                }
            }
        } else {
            if (!known.at("").count(it.key())) {
                throw ConfigError("unknown config key '" + it.key() + "'");
            }
        }
    }
}

}  // namespace detail

/// Reads and validates a RunConfig from parsed config JSON. `seed` is the
/// only required field; everything else has the documented default.
inline RunConfig parse_run_config(const json& root) {
    if (!root.is_object()) throw ConfigError("config root must be a table/object");
    detail::reject_unknown_keys(root);
    RunConfig cfg;

    const json* seed = detail::find_field(root, "", "seed");
    if (!seed) throw ConfigError("config is missing required field 'seed'");
    if (!seed->is_number_integer() || seed->get<std::int64_t>() < 0) {
        throw ConfigError("seed: expected a non-negative integer");
    }
    cfg.seed = seed->get<std::uint64_t>();
    cfg.output = detail::get_string(root, "", "output", cfg.output);

    cfg.stream.generator =
        detail::get_string(root, "stream", "generator", cfg.stream.generator);
    cfg.stream.tasks = detail::get_int(root, "stream", "tasks", cfg.stream.tasks);
    cfg.stream.classes = detail::get_int(root, "stream", "classes", cfg.stream.classes);
    cfg.stream.dim = detail::get_int(root, "stream", "dim", cfg.stream.dim);
    cfg.stream.rotation_step =
        detail::get_number(root, "stream", "rotation_step", cfg.stream.rotation_step);
    cfg.stream.samples = detail::get_int(root, "stream", "samples", cfg.stream.samples);
    cfg.stream.noise_std =
        detail::get_number(root, "stream", "noise_std", cfg.stream.noise_std);
    cfg.stream.theta_a = detail::get_double_array(root, "stream", "theta_a");
    cfg.stream.theta_b = detail::get_double_array(root, "stream", "theta_b");
    cfg.stream.hessian_a = detail::get_double_array(root, "stream", "hessian_a");
    cfg.stream.hessian_b = detail::get_double_array(root, "stream", "hessian_b");
    cfg.stream.paths = detail::get_string_array(root, "stream", "paths");
    cfg.stream.label_column =
        detail::get_string(root, "stream", "label_column", cfg.stream.label_column);

    cfg.model.kind = detail::get_string(root, "model", "kind", cfg.model.kind);
    cfg.model.hidden = detail::get_int(root, "model", "hidden", cfg.model.hidden);
    cfg.model.activation =
        detail::get_string(root, "model", "activation", cfg.model.activation);

    cfg.lora.rank = static_cast<std::size_t>(
        detail::get_int(root, "lora", "rank", static_cast<int>(cfg.lora.rank)));
    cfg.lora.scale = detail::get_number(root, "lora", "scale", cfg.lora.scale);
    cfg.lora.init_std = detail::get_number(root, "lora", "init_std", cfg.lora.init_std);

    cfg.strategy.name = detail::get_string(root, "strategy", "name", cfg.strategy.name);
    cfg.strategy.lambda1 =
        detail::get_number(root, "strategy", "lambda1", cfg.strategy.lambda1);
    cfg.strategy.lambda2 =
        detail::get_number(root, "strategy", "lambda2", cfg.strategy.lambda2);
    cfg.strategy.two_stage =
        detail::get_bool(root, "strategy", "two_stage", cfg.strategy.two_stage);
    cfg.strategy.stage2_init =
        detail::get_string(root, "strategy", "stage2_init", cfg.strategy.stage2_init);
    cfg.strategy.orth_penalty =
        detail::get_string(root, "strategy", "orth_penalty", cfg.strategy.orth_penalty);
    cfg.strategy.normalize_gpwc =
        detail::get_bool(root, "strategy", "normalize_gpwc", cfg.strategy.normalize_gpwc);

    cfg.optim.method = detail::get_string(root, "optim", "method", cfg.optim.method);
    cfg.optim.lr = detail::get_number(root, "optim", "lr", cfg.optim.lr);
    cfg.optim.momentum = detail::get_number(root, "optim", "momentum", cfg.optim.momentum);
    cfg.optim.epochs_stage1 =
        detail::get_int(root, "optim", "epochs_stage1", cfg.optim.epochs_stage1);
    cfg.optim.epochs_stage2 =
        detail::get_int(root, "optim", "epochs_stage2", cfg.optim.epochs_stage2);
    cfg.optim.batch_size = detail::get_int(root, "optim", "batch_size", cfg.optim.batch_size);

    cfg.subset.rho = detail::get_number(root, "subset", "rho", cfg.subset.rho);
    cfg.subset.d2_count = detail::get_int(root, "subset", "d2_count", cfg.subset.d2_count);
    if (const json* ss = detail::find_field(root, "subset", "seed");
        ss && !ss->is_null()) {
        if (!ss->is_number_integer() || ss->get<std::int64_t>() < 0) {
            throw ConfigError("subset.seed: expected a non-negative integer");
        }
        cfg.subset.seed = ss->get<std::uint64_t>();
    }

    if (!(cfg.optim.lr > 0.0)) throw ConfigError("optim.lr: must be positive");
    if (cfg.optim.batch_size < 1) throw ConfigError("optim.batch_size: must be >= 1");
    if (cfg.optim.epochs_stage1 < 1) {
        throw ConfigError("optim.epochs_stage1: must be >= 1");
    }
    if (cfg.optim.epochs_stage2 < 1) {
        throw ConfigError("optim.epochs_stage2: must be >= 1");
    }
    if (cfg.strategy.lambda1 < 0.0 || cfg.strategy.lambda2 < 0.0) {
        throw ConfigError("strategy.lambda1/lambda2: must be non-negative");
    }
    return cfg;
}

/// Normalized config echo, sufficient to reproduce the run.
inline json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["output"] = cfg.output;
    json s;
    s["generator"] = cfg.stream.generator;
    if (cfg.stream.generator == "rotated-gaussians") {
        s["tasks"] = cfg.stream.tasks;
        s["classes"] = cfg.stream.classes;
        s["dim"] = cfg.stream.dim;
        s["rotation_step"] = cfg.stream.rotation_step;
        s["samples"] = cfg.stream.samples;
        s["noise_std"] = cfg.stream.noise_std;
    } else if (cfg.stream.generator == "quadratic-pair") {
        s["theta_a"] = cfg.stream.theta_a;
        s["theta_b"] = cfg.stream.theta_b;
        s["hessian_a"] = cfg.stream.hessian_a;
        s["hessian_b"] = cfg.stream.hessian_b;
        s["samples"] = cfg.stream.samples;
        s["noise_std"] = cfg.stream.noise_std;
    } else {
        s["paths"] = cfg.stream.paths;
        s["label_column"] = cfg.stream.label_column;
    }
    j["stream"] = s;
    j["model"] = {{"kind", cfg.model.kind},
                  {"hidden", cfg.model.hidden},
                  {"activation", cfg.model.activation}};
    j["lora"] = {{"rank", cfg.lora.rank},
                 {"scale", cfg.lora.scale},
                 {"init_std", cfg.lora.init_std}};
    j["strategy"] = {{"name", cfg.strategy.name},
                     {"lambda1", cfg.strategy.lambda1},
                     {"lambda2", cfg.strategy.lambda2},
                     {"two_stage", cfg.strategy.two_stage},
                     {"stage2_init", cfg.strategy.stage2_init},
                     {"orth_penalty", cfg.strategy.orth_penalty},
                     {"normalize_gpwc", cfg.strategy.normalize_gpwc}};
    j["optim"] = {{"method", cfg.optim.method},
                  {"lr", cfg.optim.lr},
                  {"momentum", cfg.optim.momentum},
                  {"epochs_stage1", cfg.optim.epochs_stage1},
                  {"epochs_stage2", cfg.optim.epochs_stage2},
                  {"batch_size", cfg.optim.batch_size}};
    json sub;
    sub["rho"] = cfg.subset.rho;
    sub["d2_count"] = cfg.subset.d2_count;
    sub["seed"] = cfg.subset.seed ? json(*cfg.subset.seed) : json(nullptr);
    j["subset"] = sub;
    return j;
}

namespace detail {

template <typename Enum>
Enum parse_name(const std::string& value, const std::string& field,
                const std::vector<std::pair<std::string, Enum>>& table) {
    for (const auto& [name, e] : table) {
        if (name == value) return e;
    }
    std::string known;
    for (const auto& [name, e] : table) {
        if (!known.empty()) known += ", ";
        known += name;
    }
    throw ConfigError(field + ": unknown name '" + value + "' (known: " + known + ")");
}

}  // namespace detail

inline StrategyKind parse_strategy_name(const std::string& name) {
    return detail::parse_name<StrategyKind>(
        name, "strategy.name",
        {{"hifgo-full", StrategyKind::hifgo_full},
         {"hifgo-proxy", StrategyKind::hifgo_proxy},
         {"seq-ft", StrategyKind::seq_ft},
         {"param-orth", StrategyKind::param_orth},
         {"hist-grad-orth", StrategyKind::hist_grad_orth},
         {"multi-task", StrategyKind::multi_task}});
}

inline Strategy build_strategy(const StrategyConfig& sc) {
    Strategy s;
    s.kind = parse_strategy_name(sc.name);
    s.reg.lambda1 = sc.lambda1;
    s.reg.lambda2 = sc.lambda2;
    s.two_stage = sc.two_stage;
    s.stage2_init = detail::parse_name<Stage2Init>(
        sc.stage2_init, "strategy.stage2_init",
        {{"copy", Stage2Init::copy}, {"fresh", Stage2Init::fresh}});
    s.orth_penalty = detail::parse_name<OrthPenalty>(
        sc.orth_penalty, "strategy.orth_penalty",
        {{"abs", OrthPenalty::abs}, {"square", OrthPenalty::square}});
    s.normalize_gpwc = sc.normalize_gpwc;
    return normalized(s);
}

inline OptimConfig build_optim(const OptimSection& oc) {
    OptimConfig o;
    o.method = detail::parse_name<OptimMethod>(
        oc.method, "optim.method",
        {{"sgd", OptimMethod::sgd}, {"sgd-momentum", OptimMethod::sgd_momentum}});
    o.lr = oc.lr;
    o.momentum = oc.momentum;
    o.epochs_stage1 = oc.epochs_stage1;
    o.epochs_stage2 = oc.epochs_stage2;
    o.batch_size = static_cast<std::size_t>(oc.batch_size);
    o.validate();
    return o;
}

inline SubsetPlan build_plan(const RunConfig& cfg) {
    SubsetPlan p;
    p.rho = cfg.subset.rho;
    p.fixed_count = static_cast<std::size_t>(cfg.subset.d2_count);
    p.seed = cfg.subset.seed.value_or(cfg.seed);
    return p;
}

namespace detail {

inline Matrix hessian_from_flat(const std::vector<double>& flat, std::size_t dim,
                                const std::string& field) {
    if (flat.empty()) return Matrix::identity(dim);
    if (flat.size() != dim * dim) {
        throw ConfigError(field + ": expected " + std::to_string(dim * dim) +
                          " row-major entries, got " + std::to_string(flat.size()));
    }
    Matrix h(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) h(i, j) = flat[i * dim + j];
    return h;
}

inline Batch permuted(const Batch& b, RngStream rng) {
    std::vector<std::size_t> idx(b.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle(idx, rng);
    return b.select(idx);
}

}  // namespace detail

inline TaskStream build_stream(const RunConfig& cfg) {
    const auto& sc = cfg.stream;
    if (sc.generator == "rotated-gaussians") {
        return gen_rotated_gaussians(sc.tasks, sc.classes, sc.dim, sc.rotation_step,
                                     sc.samples, sc.noise_std, cfg.seed);
    }
    if (sc.generator == "quadratic-pair") {
        if (sc.theta_a.empty() || sc.theta_b.empty()) {
            throw ConfigError("stream.theta_a/theta_b: required for quadratic-pair");
        }
        const std::size_t dim = sc.theta_a.size();
        const Matrix ha = detail::hessian_from_flat(sc.hessian_a, dim, "stream.hessian_a");
        const Matrix hb = detail::hessian_from_flat(sc.hessian_b, dim, "stream.hessian_b");
        return gen_quadratic_pair(sc.theta_a, sc.theta_b, ha, hb, sc.samples,
                                  sc.noise_std, cfg.seed);
    }
    if (sc.generator == "csv") {
        if (sc.paths.empty()) {
            throw ConfigError("stream.paths: at least one CSV file required");
        }
        TaskStream stream;
        stream.seed = cfg.seed;
        int id = 1;
        for (const auto& path : sc.paths) {
            Batch all = detail::permuted(load_csv(path, sc.label_column),
                                         RngStream(cfg.seed).derive(7000 + id));
            const std::size_t train_n = all.size() * 4 / 5;
            if (train_n == 0 || train_n == all.size()) {
                throw ConfigError("csv task " + path +
                                  ": too few rows for a train/eval split");
            }
            std::vector<std::size_t> tr(train_n), ev;
            for (std::size_t i = 0; i < train_n; ++i) tr[i] = i;
            for (std::size_t i = train_n; i < all.size(); ++i) ev.push_back(i);
            TaskSpec task;
            task.id = id++;
            task.train = all.select(tr);
            task.eval = all.select(ev);
            task.loss = all.classification() ? LossKind::cross_entropy : LossKind::mse;
            stream.tasks.push_back(std::move(task));
        }
        return stream;
    }
    throw ConfigError("stream.generator: unknown name '" + sc.generator +
                      "' (known: rotated-gaussians, quadratic-pair, csv)");
}

/// Base weights for a run. Linear models start from zero, which is a live
/// starting point for them. An mlp at exactly zero is a saddle where every
/// gradient vanishes, so its frozen base gets a seeded fan-in-scaled
/// Gaussian init, standing in for a pretrained backbone.
inline BaseWeights make_base(const ModelSpec& spec, std::uint64_t seed) {
    if (spec.kind != ModelKind::mlp_1h) return zero_base(spec.layers);
    BaseWeights base;
    RngStream rng(seed, 0xBA5Eu);
    for (const auto& l : spec.layers) {
        base.w0.push_back(
            gaussian_matrix(rng, l.rows, l.cols,
                            1.0 / std::sqrt(static_cast<double>(l.cols))));
    }
    return base;
}

inline Experiment build_experiment(const RunConfig& cfg, const TaskStream& stream) {
    const Batch& first = stream.tasks.front().train;
    const std::size_t in_dim = first.inputs.cols();
    const bool classify = first.classification();
    std::size_t out_dim = 1;
    if (classify) {
        int max_label = 0;
        for (const auto& t : stream.tasks) {
            for (int y : t.train.labels) max_label = std::max(max_label, y);
            for (int y : t.eval.labels) max_label = std::max(max_label, y);
        }
        out_dim = static_cast<std::size_t>(max_label) + 1;
    } else {
        out_dim = first.targets.cols();
    }

    Experiment exp;
    if (cfg.model.kind == "linear-regression") {
        if (classify) {
            throw ConfigError("model.kind: linear-regression needs regression targets");
        }
        exp.spec = ModelSpec::linear_regression(in_dim, out_dim);
    } else if (cfg.model.kind == "linear-softmax") {
        if (!classify) {
            throw ConfigError("model.kind: linear-softmax needs class labels");
        }
        exp.spec = ModelSpec::linear_softmax(in_dim, out_dim);
    } else if (cfg.model.kind == "mlp-1h") {
        if (cfg.model.hidden < 1) throw ConfigError("model.hidden: must be >= 1");
        const Activation act = detail::parse_name<Activation>(
            cfg.model.activation, "model.activation",
            {{"tanh", Activation::tanh}, {"identity", Activation::identity}});
        exp.spec = ModelSpec::mlp_1h(in_dim, static_cast<std::size_t>(cfg.model.hidden),
                                     out_dim,
                                     classify ? LossKind::cross_entropy : LossKind::mse,
                                     act);
    } else {
        throw ConfigError("model.kind: unknown name '" + cfg.model.kind +
                          "' (known: linear-regression, linear-softmax, mlp-1h)");
    }
    if (cfg.stream.generator == "quadratic-pair" && cfg.model.kind != "linear-regression") {
        throw ConfigError("model.kind: quadratic-pair streams require linear-regression");
    }
    exp.spec.validate();
    exp.base = make_base(exp.spec, cfg.seed);
    exp.lora = cfg.lora;
    return exp;
}

}  // namespace hifgo
