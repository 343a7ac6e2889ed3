// Command-line front end: dataset generation, model fitting, prediction, and
// benchmark reports for the modal-regression toolkit.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "modereg/bench.hpp"
#include "modereg/io.hpp"

namespace {

using namespace modereg;
using nlohmann::json;

// Exit codes: 0 success, 2 configuration, 3 data, 4 numeric, 5 I/O.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

struct DataArgs {
    std::string path;
    std::string format = "csv";
    std::string target_col = "y";
    std::string target = "M1";
    std::string noise = "gauss";
    int dim = 1;
    int n = 500;
    std::uint64_t seed = 0;
};

void add_data_options(CLI::App* cmd, DataArgs& args) {
    cmd->add_option("--data", args.path, "input table path (omit to generate synthetic data)");
    cmd->add_option("--format", args.format, "table format: csv | libsvm")
        ->check(CLI::IsMember({"csv", "libsvm"}));
    cmd->add_option("--target-col", args.target_col, "target column name or 0-based index");
    cmd->add_option("--target", args.target, "synthetic target function: M1 | M2 | M3");
    cmd->add_option("--noise", args.noise,
                    "synthetic noise: gauss | outlier | skewed | nonstationary");
    cmd->add_option("--dim", args.dim, "synthetic input dimension");
    cmd->add_option("--n", args.n, "synthetic sample count");
    cmd->add_option("--seed", args.seed, "generator seed");
}

Dataset resolve_dataset(const DataArgs& args) {
    if (!args.path.empty()) {
        const TableFormat fmt = args.format == "csv" ? TableFormat::Csv : TableFormat::Libsvm;
        Dataset data = load_table(args.path, fmt, args.target_col);
        data.meta.seed = args.seed;
        return data;
    }
    return gen_synthetic(
        {parse_target(args.target), parse_noise(args.noise), args.dim, args.n, args.seed});
}

std::string joined_path(const std::string& out_dir, const std::string& path) {
    if (path.empty() || std::filesystem::path(path).is_absolute() || out_dir.empty()) return path;
    return (std::filesystem::path(out_dir) / path).string();
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
    std::vector<std::uint64_t> seeds;
    std::istringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto dots = tok.find("..");
        if (dots != std::string::npos) {
            const std::uint64_t lo = std::stoull(tok.substr(0, dots));
            const std::uint64_t hi = std::stoull(tok.substr(dots + 2));
            if (hi < lo) throw ConfigError("seed range is reversed: " + tok);
            for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        } else if (!tok.empty()) {
            seeds.push_back(std::stoull(tok));
        }
    }
    if (seeds.empty()) throw ConfigError("no seeds given");
    return seeds;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// fit pipelines
// ---------------------------------------------------------------------------

struct FitArgs {
    DataArgs data;
    std::string method = "dmrk";
    std::string out = "model.json";
    std::optional<double> lambda;   // score-model regularization override
    std::optional<double> sigma_m;  // regression kernel width override
    int epochs = 500;
    int batch = 128;
    double lr = 1e-3;
    std::string pretrain = "lad";
};

json fit_one(const FitArgs& args, const Dataset& data, const std::string& model_path) {
    json log;
    log["method"] = args.method;
    log["n"] = data.n();
    log["d"] = data.d();
    log["version"] = kVersion;
    json stages = json::array();

    const auto push_stage = [&stages](json s) { stages.push_back(std::move(s)); };

    if (args.method == "krr" || args.method == "lad" || args.method == "dmrk" ||
        args.method == "mrkde") {
        const double sigma_m = args.sigma_m.value_or(median_trick(data.X));
        push_stage({{"name", "median-trick"}, {"sigma_m", sigma_m}});

        if (args.method == "krr") {
            const RidgeModel m = fit_krr(data, sigma_m, default_lambda_grid(), 5);
            push_stage({{"name", "krr"}, {"lambda", m.lambda_reg}});
            save_model(m, model_path, "krr");
        } else {
            const LadResult lad = fit_lad(data, sigma_m, default_lambda_grid(), 5);
            push_stage({{"name", "lad"},
                        {"lambda", lad.model.lambda_reg},
                        {"converged", lad.converged},
                        {"iterations", lad.iterations}});
            if (args.method == "lad") {
                save_model(lad.model, model_path, "lad");
            } else if (args.method == "dmrk") {
                SelectionReport sel;
                const auto [params, lsld] =
                    select_model(data, default_grid(data), sigma_m, args.lambda, &sel);
                json cells = json::array();
                for (const auto& c : sel.cells)
                    cells.push_back({{"sigma_y", c.sigma_y},
                                     {"sigma_x", c.sigma_x},
                                     {"score", c.ok ? json(c.score) : json()},
                                     {"error", c.error}});
                push_stage({{"name", "loocv"},
                            {"sigma_y", params.sigma_y},
                            {"sigma_x", params.sigma_x},
                            {"lambda", lsld.lambda},
                            {"cells", std::move(cells)}});

                DmrkConfig cfg;
                const auto [model, trace] = fit_dmrk(data, lad.model.theta, lsld, cfg, sigma_m);
                push_stage({{"name", "fixed-point"},
                            {"iterations", trace.iterations},
                            {"converged", trace.converged},
                            {"d_hat_trace", trace.d_hats}});
                save_model(model, model_path, "dmrk");
            } else {
                KdeModel kde;
                std::tie(kde.h_y, kde.h_x) = select_kde_bandwidths(data, default_kde_grid(data));
                kde.train = data;
                push_stage({{"name", "kde-bandwidths"}, {"h_y", kde.h_y}, {"h_x", kde.h_x}});
                DmrkConfig cfg;
                const MrkdeResult res = fit_mrkde(data, lad.model.theta, kde, sigma_m, cfg);
                push_stage({{"name", "fixed-point"},
                            {"iterations", res.iterations},
                            {"converged", res.converged}});
                save_model(res.model, model_path, "mrkde");
            }
        }
    } else if (args.method == "dmrnn" || args.method == "nn-ls" || args.method == "nn-lad") {
        const Standardizer std_fit = Standardizer::fit(data);
        const Dataset data_std = std_fit.apply(data);
        TrainConfig cfg;
        cfg.epochs = args.epochs;
        cfg.batch = args.batch;
        cfg.lr = args.lr;
        cfg.seed = data.meta.seed;

        NnModel out;
        out.standardizer = std_fit;
        TrainLog tlog;
        if (args.method == "dmrnn") {
            cfg.pretrain = args.pretrain == "ls"
                               ? PretrainMode::Ls
                               : (args.pretrain == "none" ? PretrainMode::None
                                                          : PretrainMode::Lad);
            DmrnnResult res = fit_dmrnn(data_std, cfg);
            out.net = std::move(res.regressor);
            tlog = std::move(res.log);
        } else {
            cfg.pretrain = args.method == "nn-ls" ? PretrainMode::Ls : PretrainMode::Lad;
            CounterRng init(cfg.seed, stream_id("nn-init-regressor"));
            Mlp net = make_regressor(static_cast<int>(data_std.d()), init);
            const Eigen::Index nparams = net.param_count();
            out.net = pretrain_regressor(data_std, std::move(net), cfg,
                                         AdamState::init(nparams, cfg.lr, cfg.weight_decay),
                                         &tlog);
        }
        json records = json::array();
        for (const auto& rec : tlog.records) {
            json jr = {{"phase", rec.phase}, {"epoch", rec.epoch}, {"loss", rec.loss}};
            if (std::isfinite(rec.holdout)) jr["holdout"] = rec.holdout;
            records.push_back(std::move(jr));
        }
        push_stage({{"name", "train"}, {"records", std::move(records)}});
        save_model(out, model_path, args.method);
    } else {
        throw ConfigError("unknown method: " + args.method);
    }

    log["stages"] = std::move(stages);
    return log;
}

// ---------------------------------------------------------------------------

int dispatch(int argc, char** argv) {
    CLI::App app{"modereg: conditional-mode regression toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key-value config file with [subcommand] sections");

    std::string out_dir;
    app.add_option("--out-dir", out_dir, "directory prefix for relative output paths")
        ->envname("MODEREG_OUT_DIR");

    // gen ------------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset as CSV");
    DataArgs gen_args;
    add_data_options(gen, gen_args);
    std::string gen_out = "data.csv";
    gen->add_option("--out", gen_out, "output CSV path");

    // fit ------------------------------------------------------------------
    auto* fit = app.add_subcommand("fit", "fit a model and write model + log files");
    FitArgs fit_args;
    add_data_options(fit, fit_args.data);
    fit->add_option("--method", fit_args.method,
                    "dmrk | dmrnn | krr | lad | mrkde | nn-ls | nn-lad")
        ->check(CLI::IsMember({"dmrk", "dmrnn", "krr", "lad", "mrkde", "nn-ls", "nn-lad"}));
    fit->add_option("--out", fit_args.out, "model output path (log goes to <out>.log.json)");
    double lambda_flag = -1.0, sigma_m_flag = -1.0;
    fit->add_option("--lambda", lambda_flag, "score-model regularization override");
    fit->add_option("--sigma-m", sigma_m_flag, "regression kernel width override");
    fit->add_option("--epochs", fit_args.epochs, "training epochs for neural methods");
    fit->add_option("--batch", fit_args.batch, "minibatch size for neural methods");
    fit->add_option("--lr", fit_args.lr, "learning rate for neural methods");
    fit->add_option("--pretrain", fit_args.pretrain, "dmrnn pretraining: lad | ls | none")
        ->check(CLI::IsMember({"lad", "ls", "none"}));

    // predict ----------------------------------------------------------------
    auto* predict_cmd = app.add_subcommand("predict", "predict with a saved model");
    std::string pr_model, pr_data, pr_format = "csv", pr_target_col = "y";
    std::string pr_out = "predictions.csv";
    std::string pr_metric, pr_truth_target = "M1";
    double pr_sigma = -1.0;
    predict_cmd->add_option("--model", pr_model, "model file")->required();
    predict_cmd->add_option("--data", pr_data, "input table")->required();
    predict_cmd->add_option("--format", pr_format)->check(CLI::IsMember({"csv", "libsvm"}));
    predict_cmd->add_option("--target-col", pr_target_col);
    predict_cmd->add_option("--out", pr_out, "predictions CSV path");
    predict_cmd->add_option("--metric", pr_metric, "optional: mae_truth | surrogate")
        ->check(CLI::IsMember({"mae_truth", "surrogate"}));
    predict_cmd->add_option("--truth-target", pr_truth_target,
                            "target function for mae_truth (M1 | M2 | M3)");
    predict_cmd->add_option("--sigma", pr_sigma, "surrogate width; <= 0 selects n_te^{-1/5}");

    // benchmark ---------------------------------------------------------------
    auto* bench = app.add_subcommand("benchmark", "run a method/dataset/seed matrix");
    std::string b_methods = "krr,lad,mrkde,dmrk";
    std::string b_targets = "M1", b_noises = "gauss", b_dims = "1", b_seeds = "0..9";
    int b_n = 500, b_nte = 10000, b_jobs = 1;
    double b_sig = -1.0, b_alpha = -1.0, b_split = 0.8;
    std::string b_out = "report.json", b_table, b_data, b_format = "csv", b_target_col = "y";
    bool b_timings = false;
    int b_epochs = 500, b_batch = 128;
    bench->add_option("--methods", b_methods, "comma list of methods");
    bench->add_option("--targets", b_targets, "comma list of target functions");
    bench->add_option("--noises", b_noises, "comma list of noise families");
    bench->add_option("--dims", b_dims, "comma list of input dimensions");
    bench->add_option("--n", b_n, "training sample count");
    bench->add_option("--nte", b_nte, "test sample count");
    bench->add_option("--seeds", b_seeds, "seed list/ranges, e.g. 0..9 or 1,5,7");
    bench->add_option("--jobs", b_jobs, "worker pool size");
    bench->add_option("--significance", b_alpha, "t-test level (default 0.01; 0.05 for files)");
    bench->add_option("--sigma", b_sig, "surrogate width; <= 0 selects n_te^{-1/5}");
    bench->add_option("--split", b_split, "train fraction for file benchmarks");
    bench->add_option("--data", b_data, "run the file protocol on this table");
    bench->add_option("--format", b_format)->check(CLI::IsMember({"csv", "libsvm"}));
    bench->add_option("--target-col", b_target_col);
    bench->add_option("--out", b_out, "JSON report path");
    bench->add_option("--table", b_table, "also write the plain-text table here");
    std::string b_metric = "mae_truth";
    bench->add_option("--metric", b_metric, "synthetic metric: mae_truth | surrogate")
        ->check(CLI::IsMember({"mae_truth", "surrogate"}));
    bench->add_flag("--timings", b_timings, "include wall-clock fields in the report");
    bench->add_option("--epochs", b_epochs, "epochs for neural methods");
    bench->add_option("--batch", b_batch, "batch size for neural methods");

    // loocv-grid ---------------------------------------------------------------
    auto* loocv = app.add_subcommand("loocv-grid", "score the width grid for the score model");
    DataArgs lo_args;
    add_data_options(loocv, lo_args);
    std::string lo_out = "loocv.json";
    double lo_lambda = -1.0;
    loocv->add_option("--out", lo_out, "JSON output path");
    loocv->add_option("--lambda", lo_lambda, "regularization override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    if (gen->parsed()) {
        const Dataset data = resolve_dataset(gen_args);
        save_csv(data, joined_path(out_dir, gen_out));
        return 0;
    }

    if (fit->parsed()) {
        if (lambda_flag > 0) fit_args.lambda = lambda_flag;
        if (sigma_m_flag > 0) fit_args.sigma_m = sigma_m_flag;
        const Dataset data = resolve_dataset(fit_args.data);
        const std::string model_path = joined_path(out_dir, fit_args.out);
        const json log = fit_one(fit_args, data, model_path);
        write_text(model_path + ".log.json", log.dump(2) + "\n");
        return 0;
    }

    if (predict_cmd->parsed()) {
        const TableFormat fmt = pr_format == "csv" ? TableFormat::Csv : TableFormat::Libsvm;
        const Dataset data = load_table(pr_data, fmt, pr_target_col);
        const AnyModel model = load_model(pr_model);
        const Eigen::VectorXd pred = predict_any(model, data.X);

        std::ostringstream csv;
        csv << "prediction\n";
        char buf[40];
        for (Eigen::Index i = 0; i < pred.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", pred(i));
            csv << buf << "\n";
        }
        write_text(joined_path(out_dir, pr_out), csv.str());

        if (!pr_metric.empty()) {
            json m;
            if (pr_metric == "mae_truth") {
                GeneratorSpec spec;
                spec.target = parse_target(pr_truth_target);
                spec.d = static_cast<int>(data.d());
                m["mae_truth"] = mae_to_truth(pred, spec, data.X);
            } else {
                const double sigma =
                    pr_sigma > 0 ? pr_sigma : std::pow(static_cast<double>(data.n()), -0.2);
                m["sigma"] = sigma;
                m["surrogate"] = surrogate_score(pred, data.y, sigma);
            }
            std::cout << m.dump() << "\n";
        }
        return 0;
    }

    if (bench->parsed()) {
        BenchmarkReport report;
        if (!b_data.empty()) {
            FileBenchConfig cfg;
            cfg.path = b_data;
            cfg.format = b_format == "csv" ? TableFormat::Csv : TableFormat::Libsvm;
            cfg.target_column = b_target_col;
            cfg.methods = split_list(b_methods);
            cfg.split = b_split;
            cfg.seeds = parse_seeds(b_seeds);
            cfg.sigma = b_sig;
            cfg.jobs = b_jobs;
            cfg.significance = b_alpha > 0 ? b_alpha : 0.05;
            cfg.timings = b_timings;
            cfg.train.epochs = b_epochs;
            cfg.train.batch = b_batch;
            report = run_file_benchmark(cfg);
        } else {
            SynthBenchConfig cfg;
            cfg.methods = split_list(b_methods);
            cfg.targets.clear();
            for (const auto& t : split_list(b_targets)) cfg.targets.push_back(parse_target(t));
            cfg.noises.clear();
            for (const auto& nz : split_list(b_noises)) cfg.noises.push_back(parse_noise(nz));
            cfg.dims.clear();
            for (const auto& d : split_list(b_dims)) cfg.dims.push_back(std::stoi(d));
            cfg.n = b_n;
            cfg.n_te = b_nte;
            cfg.seeds = parse_seeds(b_seeds);
            cfg.jobs = b_jobs;
            cfg.significance = b_alpha > 0 ? b_alpha : 0.01;
            cfg.timings = b_timings;
            cfg.metric = b_metric == "surrogate" ? BenchMetric::Surrogate : BenchMetric::MaeTruth;
            cfg.sigma = b_sig;
            cfg.train.epochs = b_epochs;
            cfg.train.batch = b_batch;
            report = run_synth_benchmark(cfg);
        }
        write_text(joined_path(out_dir, b_out), report_to_json(report));
        const std::string table = report_to_table(report);
        if (!b_table.empty()) write_text(joined_path(out_dir, b_table), table);
        std::cout << table;
        return 0;
    }

    if (loocv->parsed()) {
        const Dataset data = resolve_dataset(lo_args);
        const double sigma_m = median_trick(data.X);
        SelectionReport sel;
        std::optional<double> lambda;
        if (lo_lambda > 0) lambda = lo_lambda;
        const auto [params, model] = select_model(data, default_grid(data), sigma_m, lambda, &sel);
        json j;
        j["version"] = kVersion;
        j["lambda"] = model.lambda;
        j["selected"] = {{"sigma_y", params.sigma_y}, {"sigma_x", params.sigma_x}};
        json cells = json::array();
        for (const auto& c : sel.cells)
            cells.push_back({{"sigma_y", c.sigma_y},
                             {"sigma_x", c.sigma_x},
                             {"score", c.ok ? json(c.score) : json()},
                             {"error", c.error}});
        j["cells"] = std::move(cells);
        write_text(joined_path(out_dir, lo_out), j.dump(2) + "\n");
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
