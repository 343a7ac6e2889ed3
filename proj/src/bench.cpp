#include "modereg/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "modereg/io.hpp"

namespace modereg {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_sec(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct SeedOutcome {
    double value = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
    std::string error;
};

// One synthetic replication: shared training draw, per-method fits, MAE to
// the noise-free truth on a fresh test draw.
std::map<std::string, SeedOutcome> run_synth_seed(const SynthBenchConfig& config, Target target,
                                                  Noise noise, int d, std::uint64_t seed) {
    std::map<std::string, SeedOutcome> out;
    for (const auto& m : config.methods) out[m] = SeedOutcome{};

    GeneratorSpec train_spec{target, noise, d, config.n, seed};
    GeneratorSpec test_spec{target, noise, d, config.n_te, test_seed_for(seed)};
    Dataset train, test;
    try {
        train = gen_synthetic(train_spec);
        test = gen_synthetic(test_spec);
    } catch (const Error& e) {
        for (auto& [m, o] : out) o.error = std::string("generation: ") + e.what();
        return out;
    }

    const bool needs_lad = out.count("lad") || out.count("dmrk") || out.count("mrkde");
    double sigma_m = 0.0;
    LadResult lad;
    try {
        sigma_m = median_trick(train.X);
        if (needs_lad) lad = fit_lad(train, sigma_m, default_lambda_grid(), 5);
    } catch (const Error& e) {
        for (auto& [m, o] : out) o.error = std::string("shared setup: ") + e.what();
        return out;
    }

    const double surrogate_sigma =
        config.sigma > 0.0 ? config.sigma
                           : std::pow(static_cast<double>(config.n_te), -0.2);
    auto evaluate = [&](const std::string& method, auto&& fit_and_predict) {
        if (!out.count(method)) return;
        const auto start = Clock::now();
        try {
            const Eigen::VectorXd pred = fit_and_predict();
            out[method].value = config.metric == BenchMetric::Surrogate
                                    ? surrogate_score(pred, test.y, surrogate_sigma)
                                    : mae_to_truth(pred, train_spec, test.X);
        } catch (const Error& e) {
            out[method].error = e.what();
        }
        out[method].seconds = elapsed_sec(start);
    };

    evaluate("krr", [&] {
        const RidgeModel m = fit_krr(train, sigma_m, default_lambda_grid(), 5);
        return predict_ridge(m, test.X);
    });
    evaluate("lad", [&] { return predict_ridge(lad.model, test.X); });
    evaluate("dmrk", [&] {
        const auto [params, lsld] = select_model(train, default_grid(train), sigma_m);
        DmrkConfig cfg;
        const auto [model, trace] = fit_dmrk(train, lad.model.theta, lsld, cfg, sigma_m);
        return predict(model, test.X);
    });
    evaluate("mrkde", [&] {
        KdeModel kde;
        std::tie(kde.h_y, kde.h_x) = select_kde_bandwidths(train, default_kde_grid(train));
        kde.train = train;
        DmrkConfig cfg;
        const MrkdeResult res = fit_mrkde(train, lad.model.theta, kde, sigma_m, cfg);
        return predict(res.model, test.X);
    });
    evaluate("dmrnn", [&] {
        // Neural methods run in standardized units; predictions map back.
        const Standardizer std_fit = Standardizer::fit(train);
        const Dataset train_std = std_fit.apply(train);
        TrainConfig cfg = config.train;
        cfg.seed = seed;
        const DmrnnResult res = fit_dmrnn(train_std, cfg);
        Eigen::VectorXd pred(test.X.rows());
        for (Eigen::Index i = 0; i < test.X.rows(); ++i) {
            const Eigen::VectorXd x_std =
                ((test.X.row(i).transpose() - std_fit.x_mean).array() / std_fit.x_sd.array())
                    .matrix();
            pred(i) = mlp_forward(res.regressor, x_std)(0);
        }
        return std_fit.invert_predictions(pred);
    });
    return out;
}

// One real-table replication: seeded split, train-split standardization,
// surrogate score in standardized units.
std::map<std::string, SeedOutcome> run_file_seed(const FileBenchConfig& config,
                                                 const Dataset& full, std::uint64_t seed) {
    std::map<std::string, SeedOutcome> out;
    for (const auto& m : config.methods) out[m] = SeedOutcome{};

    const Eigen::Index n = full.n();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    CounterRng rng(seed, stream_id("bench-split"));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.bounded(i))]);
    const Eigen::Index n_tr = static_cast<Eigen::Index>(std::round(config.split * n));
    if (n_tr < 2 || n_tr >= n) {
        for (auto& [m, o] : out) o.error = "split leaves an empty partition";
        return out;
    }

    Dataset train, test;
    train.X.resize(n_tr, full.d());
    train.y.resize(n_tr);
    test.X.resize(n - n_tr, full.d());
    test.y.resize(n - n_tr);
    for (Eigen::Index i = 0; i < n_tr; ++i) {
        train.X.row(i) = full.X.row(order[static_cast<std::size_t>(i)]);
        train.y(i) = full.y(order[static_cast<std::size_t>(i)]);
    }
    for (Eigen::Index i = n_tr; i < n; ++i) {
        test.X.row(i - n_tr) = full.X.row(order[static_cast<std::size_t>(i)]);
        test.y(i - n_tr) = full.y(order[static_cast<std::size_t>(i)]);
    }
    train.meta.seed = seed;

    Standardizer std_fit;
    Dataset train_std, test_std;
    try {
        std_fit = Standardizer::fit(train);
        train_std = std_fit.apply(train);
        test_std = std_fit.apply(test);
    } catch (const Error& e) {
        for (auto& [m, o] : out) o.error = std::string("standardize: ") + e.what();
        return out;
    }

    const double n_te = static_cast<double>(test.n());
    const double sigma = config.sigma > 0.0 ? config.sigma : std::pow(n_te, -0.2);

    auto evaluate = [&](const std::string& method, PretrainMode mode, bool full_pipeline) {
        if (!out.count(method)) return;
        const auto start = Clock::now();
        try {
            TrainConfig cfg = config.train;
            cfg.seed = seed;
            Eigen::VectorXd pred(test_std.n());
            if (full_pipeline) {
                cfg.pretrain = PretrainMode::Lad;
                const DmrnnResult res = fit_dmrnn(train_std, cfg);
                for (Eigen::Index i = 0; i < test_std.n(); ++i)
                    pred(i) = mlp_forward(res.regressor, test_std.X.row(i).transpose())(0);
            } else {
                cfg.pretrain = mode;
                const int d = static_cast<int>(train_std.d());
                CounterRng init(seed, stream_id("nn-init-regressor"));
                Mlp net = make_regressor(d, init);
                net = pretrain_regressor(train_std, std::move(net), cfg,
                                         AdamState::init(net.param_count(), cfg.lr,
                                                         cfg.weight_decay));
                for (Eigen::Index i = 0; i < test_std.n(); ++i)
                    pred(i) = mlp_forward(net, test_std.X.row(i).transpose())(0);
            }
            out[method].value = surrogate_score(pred, test_std.y, sigma);
        } catch (const Error& e) {
            out[method].error = e.what();
        }
        out[method].seconds = elapsed_sec(start);
    };

    evaluate("nn-ls", PretrainMode::Ls, false);
    evaluate("nn-lad", PretrainMode::Lad, false);
    evaluate("dmrnn", PretrainMode::Lad, true);
    return out;
}

void finalize_stats(CellStats& cell) {
    double sum = 0.0;
    int count = 0;
    for (const double v : cell.per_seed)
        if (std::isfinite(v)) {
            sum += v;
            ++count;
        }
    if (count == 0) {
        cell.mean = std::numeric_limits<double>::quiet_NaN();
        cell.sd = std::numeric_limits<double>::quiet_NaN();
        return;
    }
    cell.mean = sum / count;
    double ss = 0.0;
    for (const double v : cell.per_seed)
        if (std::isfinite(v)) ss += (v - cell.mean) * (v - cell.mean);
    cell.sd = count > 1 ? std::sqrt(ss / (count - 1)) : 0.0;
}

// Marks best-and-comparable methods per group. Direction: smaller-is-better
// for mae_truth, larger-is-better for surrogate.
void mark_best(BenchmarkReport& report) {
    const bool larger_better = report.metric == "surrogate";
    std::map<std::string, std::vector<CellStats*>> groups;
    for (auto& c : report.cells) groups[c.group].push_back(&c);
    for (auto& [g, cells] : groups) {
        CellStats* best = nullptr;
        for (auto* c : cells) {
            if (!std::isfinite(c->mean)) continue;
            if (!best || (larger_better ? c->mean > best->mean : c->mean < best->mean)) best = c;
        }
        if (!best) continue;
        for (auto* c : cells) {
            if (!std::isfinite(c->mean)) continue;
            if (c == best) {
                c->best_comparable = true;
                continue;
            }
            // Paired test restricted to seeds where both methods succeeded.
            std::vector<double> a, b;
            for (std::size_t i = 0; i < c->per_seed.size() && i < best->per_seed.size(); ++i)
                if (std::isfinite(c->per_seed[i]) && std::isfinite(best->per_seed[i])) {
                    a.push_back(c->per_seed[i]);
                    b.push_back(best->per_seed[i]);
                }
            if (a.size() < 2) {
                c->best_comparable = c->mean == best->mean;
                continue;
            }
            c->best_comparable = paired_ttest_pvalue(a, b) >= report.significance;
        }
    }
}

template <typename TaskResult>
void run_pool(int jobs, std::vector<TaskResult>& slots,
              const std::function<TaskResult(std::size_t)>& work) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= slots.size()) return;
            slots[i] = work(i);
        }
    };
    const int nthreads = std::max(1, jobs);
    if (nthreads == 1) {
        worker();
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(nthreads));
    for (int t = 0; t < nthreads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
}

}  // namespace

std::uint64_t test_seed_for(std::uint64_t train_seed) {
    return CounterRng::mix(train_seed ^ 0x7e57da7a5eed1234ULL);
}

double paired_ttest_pvalue(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw DataError("paired_ttest_pvalue: need two aligned samples of size >= 2");
    const double m = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= m;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / (m - 1.0));
    if (sd == 0.0) return mean == 0.0 ? 1.0 : 0.0;
    const double t = mean / (sd / std::sqrt(m));
    boost::math::students_t dist(m - 1.0);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

BenchmarkReport run_synth_benchmark(const SynthBenchConfig& config) {
    if (config.methods.empty()) throw ConfigError("benchmark: no methods given");
    if (config.seeds.empty()) throw ConfigError("benchmark: no seeds given");

    struct Task {
        Target target;
        Noise noise;
        int d;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (const Target t : config.targets)
        for (const Noise nz : config.noises)
            for (const int d : config.dims)
                for (const std::uint64_t s : config.seeds) tasks.push_back({t, nz, d, s});

    std::vector<std::map<std::string, SeedOutcome>> results(tasks.size());
    run_pool<std::map<std::string, SeedOutcome>>(
        config.jobs, results, [&](std::size_t i) {
            const Task& t = tasks[i];
            return run_synth_seed(config, t.target, t.noise, t.d, t.seed);
        });

    BenchmarkReport report;
    report.version = kVersion;
    report.metric = config.metric == BenchMetric::Surrogate ? "surrogate" : "mae_truth";
    report.timings = config.timings;
    report.significance = config.significance;
    report.config_echo["n"] = std::to_string(config.n);
    report.config_echo["n_te"] = std::to_string(config.n_te);
    report.config_echo["jobs"] = std::to_string(config.jobs);
    {
        std::ostringstream ss;
        for (std::size_t i = 0; i < config.seeds.size(); ++i)
            ss << (i ? "," : "") << config.seeds[i];
        report.config_echo["seeds"] = ss.str();
    }

    for (const Target t : config.targets) {
        for (const Noise nz : config.noises) {
            for (const int d : config.dims) {
                std::ostringstream group;
                group << to_string(t) << "/" << to_string(nz) << "/d=" << d;
                for (const auto& method : config.methods) {
                    CellStats cell;
                    cell.method = method;
                    cell.group = group.str();
                    cell.seeds = config.seeds;
                    for (std::size_t i = 0; i < tasks.size(); ++i) {
                        const Task& task = tasks[i];
                        if (task.target != t || task.noise != nz || task.d != d) continue;
                        const SeedOutcome& o = results[i].at(method);
                        cell.per_seed.push_back(o.value);
                        cell.wall_clock_sec += o.seconds;
                        if (!o.error.empty())
                            cell.failures.push_back("seed " + std::to_string(task.seed) + ": " +
                                                    o.error);
                    }
                    finalize_stats(cell);
                    report.cells.push_back(std::move(cell));
                }
            }
        }
    }
    mark_best(report);
    return report;
}

BenchmarkReport run_file_benchmark(const FileBenchConfig& config) {
    if (config.methods.empty()) throw ConfigError("benchmark: no methods given");
    if (config.seeds.empty()) throw ConfigError("benchmark: no seeds given");
    if (!(config.split > 0.0 && config.split < 1.0))
        throw ConfigError("benchmark: split fraction must lie in (0,1)");
    const Dataset full = load_table(config.path, config.format, config.target_column);

    std::vector<std::map<std::string, SeedOutcome>> results(config.seeds.size());
    run_pool<std::map<std::string, SeedOutcome>>(
        config.jobs, results,
        [&](std::size_t i) { return run_file_seed(config, full, config.seeds[i]); });

    BenchmarkReport report;
    report.version = kVersion;
    report.metric = "surrogate";
    report.timings = config.timings;
    report.significance = config.significance;
    report.config_echo["path"] = config.path;
    report.config_echo["split"] = std::to_string(config.split);
    report.config_echo["n"] = std::to_string(full.n());
    report.config_echo["d"] = std::to_string(full.d());

    std::ostringstream group;
    group << config.path << " (d=" << full.d() << ", n=" << full.n() << ")";
    for (const auto& method : config.methods) {
        CellStats cell;
        cell.method = method;
        cell.group = group.str();
        cell.seeds = config.seeds;
        for (std::size_t i = 0; i < config.seeds.size(); ++i) {
            const SeedOutcome& o = results[i].at(method);
            cell.per_seed.push_back(o.value);
            cell.wall_clock_sec += o.seconds;
            if (!o.error.empty())
                cell.failures.push_back("seed " + std::to_string(config.seeds[i]) + ": " +
                                        o.error);
        }
        finalize_stats(cell);
        report.cells.push_back(std::move(cell));
    }
    mark_best(report);
    return report;
}

std::string report_to_json(const BenchmarkReport& report) {
    nlohmann::json j;
    j["version"] = report.version;
    j["metric"] = report.metric;
    j["significance"] = report.significance;
    j["config"] = report.config_echo;
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : report.cells) {
        nlohmann::json jc;
        jc["method"] = c.method;
        jc["group"] = c.group;
        jc["seeds"] = c.seeds;
        nlohmann::json vals = nlohmann::json::array();
        for (const double v : c.per_seed) {
            if (std::isfinite(v))
                vals.push_back(v);
            else
                vals.push_back(nullptr);
        }
        jc["per_seed"] = std::move(vals);
        jc["mean"] = c.mean;
        jc["sd"] = c.sd;
        jc["best_comparable"] = c.best_comparable;
        if (!c.failures.empty()) jc["failures"] = c.failures;
        if (report.timings) jc["wall_clock_sec"] = c.wall_clock_sec;
        cells.push_back(std::move(jc));
    }
    j["cells"] = std::move(cells);
    return j.dump(2) + "\n";
}

std::string report_to_table(const BenchmarkReport& report) {
    std::vector<std::string> methods;
    std::vector<std::string> groups;
    for (const auto& c : report.cells) {
        if (std::find(methods.begin(), methods.end(), c.method) == methods.end())
            methods.push_back(c.method);
        if (std::find(groups.begin(), groups.end(), c.group) == groups.end())
            groups.push_back(c.group);
    }
    auto find_cell = [&](const std::string& g, const std::string& m) -> const CellStats* {
        for (const auto& c : report.cells)
            if (c.group == g && c.method == m) return &c;
        return nullptr;
    };

    constexpr int name_w = 28, col_w = 16;
    std::ostringstream out;
    out << std::left;
    out.width(name_w);
    out << (report.metric == "surrogate" ? "dataset" : "target/noise/d");
    for (const auto& m : methods) {
        out.width(col_w);
        out << m;
    }
    out << "\n";
    for (const auto& g : groups) {
        out.width(name_w);
        out << g;
        for (const auto& m : methods) {
            const CellStats* c = find_cell(g, m);
            std::ostringstream val;
            if (c && std::isfinite(c->mean)) {
                val << (c->best_comparable ? "*" : " ");
                val.setf(std::ios::fixed);
                val.precision(3);
                val << c->mean << "(" << c->sd << ")";
            } else {
                val << " failed";
            }
            out.width(col_w);
            out << val.str();
        }
        out << "\n";
    }
    out << "('*' marks best-and-comparable by paired t-test at level " << report.significance
        << ")\n";
    return out.str();
}

}  // namespace modereg
