#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hifgo/models.hpp"

namespace hifgo {

/// One task of a stream: train/eval splits drawn from the same generative
/// distribution, plus ground-truth geometry for quadratic tasks.
struct TaskSpec {
    int id = 0;
    Batch train;
    Batch eval;
    LossKind loss = LossKind::cross_entropy;
    std::optional<Matrix> theta_star;  // 1 x dim population optimum (quadratic)
    std::optional<Matrix> hessian;     // dim x dim population Hessian (quadratic)
};

struct TaskStream {
    std::vector<TaskSpec> tasks;
    std::uint64_t seed = 0;

    std::size_t size() const { return tasks.size(); }
};

/// D1 is always the full train set; D2 is a seeded uniform subsample,
/// either a fraction rho of the train set or a fixed count.
struct SubsetPlan {
    double rho = 0.1;
    std::size_t fixed_count = 0;  // 0 means use rho
    std::uint64_t seed = 0;
};

namespace detail {

constexpr double kClassMeanRadius = 2.0;

inline std::pair<Batch, Batch> split_train_eval(Batch all, std::size_t train_n) {
    std::vector<std::size_t> train_idx(train_n), eval_idx;
    for (std::size_t i = 0; i < train_n; ++i) train_idx[i] = i;
    for (std::size_t i = train_n; i < all.size(); ++i) eval_idx.push_back(i);
    return {all.select(train_idx), all.select(eval_idx)};
}

}  // namespace detail

/// Classification stream: class means sit on a ring in the first two input
/// dimensions; task i rotates the ring by (i-1)*rotation_step. Rotation 0
/// makes every task identically distributed.
inline TaskStream gen_rotated_gaussians(int n_tasks, int classes, int dim,
                                        double rotation_step, int samples_per_task,
                                        double noise_std, std::uint64_t seed) {
    if (n_tasks < 1) throw ConfigError("gen_rotated_gaussians: need at least one task");
    if (classes < 2) throw ConfigError("gen_rotated_gaussians: need at least two classes");
    if (dim < 2) throw ConfigError("gen_rotated_gaussians: need dim >= 2");
    if (samples_per_task < classes) {
        throw ConfigError("gen_rotated_gaussians: need at least one sample per class");
    }
    if (noise_std < 0.0) throw ConfigError("gen_rotated_gaussians: noise std must be >= 0");

    TaskStream stream;
    stream.seed = seed;
    RngStream root(seed);
    const std::size_t n = static_cast<std::size_t>(samples_per_task);
    const std::size_t train_n = n * 4 / 5;

    for (int t = 1; t <= n_tasks; ++t) {
        const double task_angle = static_cast<double>(t - 1) * rotation_step;
        RngStream rng = root.derive(static_cast<std::uint64_t>(t));

        Batch all;
        all.inputs = Matrix(n, static_cast<std::size_t>(dim));
        all.labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
            const double ang =
                2.0 * std::numbers::pi * c / classes + task_angle;
            all.labels[i] = c;
            for (int d = 0; d < dim; ++d) {
                double mean = 0.0;
                if (d == 0) mean = detail::kClassMeanRadius * std::cos(ang);
                if (d == 1) mean = detail::kClassMeanRadius * std::sin(ang);
                all.inputs(i, static_cast<std::size_t>(d)) =
                    mean + noise_std * rng.next_gaussian();
            }
        }

        auto [train, eval] = detail::split_train_eval(std::move(all), train_n);
        TaskSpec spec;
        spec.id = t;
        spec.train = std::move(train);
        spec.eval = std::move(eval);
        spec.loss = LossKind::cross_entropy;
        stream.tasks.push_back(std::move(spec));
    }
    return stream;
}

/// Two linear-regression tasks with prescribed population optima and
/// Hessians. Inputs are drawn with covariance equal to the requested
/// Hessian (x = L z with L L^T = H), so the population MSE Hessian
/// E[x x^T] equals H and the stored geometry is checkable against samples.
inline TaskStream gen_quadratic_pair(const std::vector<double>& theta_a,
                                     const std::vector<double>& theta_b,
                                     const Matrix& hessian_a, const Matrix& hessian_b,
                                     int samples_per_task, double noise_std,
                                     std::uint64_t seed) {
    const std::size_t dim = theta_a.size();
    if (dim == 0 || theta_b.size() != dim) {
        throw ConfigError("gen_quadratic_pair: optima must be nonempty and equal length");
    }
    if (samples_per_task < static_cast<int>(dim) + 1) {
        throw ConfigError("gen_quadratic_pair: too few samples for the dimension");
    }
    if (noise_std < 0.0) throw ConfigError("gen_quadratic_pair: noise std must be >= 0");

    TaskStream stream;
    stream.seed = seed;
    RngStream root(seed);
    const std::size_t n = static_cast<std::size_t>(samples_per_task);
    const std::size_t train_n = n * 4 / 5;

    const std::vector<double>* optima[2] = {&theta_a, &theta_b};
    const Matrix* hessians[2] = {&hessian_a, &hessian_b};
    for (int t = 0; t < 2; ++t) {
        const Matrix& h = *hessians[t];
        if (h.rows() != dim || h.cols() != dim) {
            throw ConfigError("gen_quadratic_pair: hessian " + shape_str(h) +
                              " does not match dimension " + std::to_string(dim));
        }
        auto chol = cholesky(h);
        if (!chol) {
            throw ConfigError("gen_quadratic_pair: hessian for task " +
                              std::to_string(t + 1) +
                              " is not symmetric positive definite");
        }
        RngStream rng = root.derive(static_cast<std::uint64_t>(t + 1));

        Batch all;
        all.inputs = Matrix(n, dim);
        all.targets = Matrix(n, 1);
        std::vector<double> z(dim);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < dim; ++d) z[d] = rng.next_gaussian();
            double y = 0.0;
            for (std::size_t r = 0; r < dim; ++r) {
                double x = 0.0;
                for (std::size_t c = 0; c <= r; ++c) x += (*chol)(r, c) * z[c];
                all.inputs(i, r) = x;
                y += (*optima[t])[r] * x;
            }
            all.targets(i, 0) = y + noise_std * rng.next_gaussian();
        }

        auto [train, eval] = detail::split_train_eval(std::move(all), train_n);
        TaskSpec spec;
        spec.id = t + 1;
        spec.train = std::move(train);
        spec.eval = std::move(eval);
        spec.loss = LossKind::mse;
        Matrix theta(1, dim);
        for (std::size_t d = 0; d < dim; ++d) theta(0, d) = (*optima[t])[d];
        spec.theta_star = std::move(theta);
        spec.hessian = h;
        stream.tasks.push_back(std::move(spec));
    }
    return stream;
}

/// Loads a plain numeric CSV (UTF-8, comma separated, header row). All
/// columns except the named label column become features in order of
/// appearance. Integer-valued labels produce a classification batch,
/// anything else a single-column regression batch. Quoted fields are not
/// supported.
inline Batch load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw InputError("CSV file " + path + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == label_column) label_idx = i;
    }
    if (label_idx == header.size()) {
        throw InputError("CSV file " + path + " has no column named '" +
                         label_column + "'");
    }
    if (header.size() < 2) {
        throw InputError("CSV file " + path + " needs at least one feature column");
    }

    std::vector<std::vector<double>> feature_rows;
    std::vector<double> label_values;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        if (cells.size() != header.size()) {
            throw ParseError("CSV parse error at row " + std::to_string(row) +
                             ": expected " + std::to_string(header.size()) +
                             " cells, found " + std::to_string(cells.size()));
        }
        std::vector<double> feats;
        feats.reserve(header.size() - 1);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::string& raw = cells[c];
            double value = 0.0;
            const char* first = raw.data();
            const char* last = raw.data() + raw.size();
            while (first != last && (*first == ' ' || *first == '\t')) ++first;
            while (last != first && (*(last - 1) == ' ' || *(last - 1) == '\t')) --last;
            auto [ptr, ec] = std::from_chars(first, last, value);
            if (ec != std::errc() || ptr != last || first == last) {
                throw ParseError("CSV parse error at row " + std::to_string(row) +
                                 ", column '" + header[c] + "': '" + raw +
                                 "' is not numeric");
            }
            if (c == label_idx) {
                label_values.push_back(value);
            } else {
                feats.push_back(value);
            }
        }
        feature_rows.push_back(std::move(feats));
    }
    if (feature_rows.empty()) {
        throw InputError("CSV file " + path + " has a header but no data rows (empty dataset)");
    }

    bool integral_labels = true;
    for (double v : label_values) {
        if (std::floor(v) != v) integral_labels = false;
    }

    Batch batch;
    batch.inputs = Matrix(feature_rows.size(), feature_rows.front().size());
    for (std::size_t r = 0; r < feature_rows.size(); ++r) {
        for (std::size_t c = 0; c < feature_rows[r].size(); ++c) {
            batch.inputs(r, c) = feature_rows[r][c];
        }
    }
    if (integral_labels) {
        batch.labels.reserve(label_values.size());
        for (double v : label_values) batch.labels.push_back(static_cast<int>(v));
    } else {
        batch.targets = Matrix(label_values.size(), 1);
        for (std::size_t r = 0; r < label_values.size(); ++r) {
            batch.targets(r, 0) = label_values[r];
        }
    }
    return batch;
}

/// Subset selection for the two-stage protocol: D1 is the full train set,
/// D2 a seeded sample without replacement, returned in ascending index
/// order so downstream sums are order-stable.
inline std::pair<Batch, Batch> select_subsets(const TaskSpec& task,
                                              const SubsetPlan& plan) {
    const std::size_t n = task.train.size();
    std::size_t k;
    if (plan.fixed_count > 0) {
        k = plan.fixed_count;
    } else {
        if (!(plan.rho > 0.0) || plan.rho > 1.0) {
            throw ConfigError("subset rho must lie in (0, 1], got " +
                              std::to_string(plan.rho));
        }
        k = static_cast<std::size_t>(std::ceil(plan.rho * static_cast<double>(n)));
    }
    if (k == 0) throw ConfigError("subset selection would produce an empty D2");
    if (k > n) {
        throw ConfigError("subset count " + std::to_string(k) +
                          " exceeds train set size " + std::to_string(n));
    }

    RngStream rng = RngStream(plan.seed).derive(static_cast<std::uint64_t>(task.id));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.next_below(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return {task.train, task.train.select(idx)};
}

}  // namespace hifgo
