#pragma once

#include <map>
#include <string>
#include <vector>

#include "modereg/baselines.hpp"
#include "modereg/nn.hpp"

namespace modereg {

enum class BenchMetric { MaeTruth, Surrogate };

struct SynthBenchConfig {
    std::vector<std::string> methods;  // krr | lad | mrkde | dmrk | dmrnn
    std::vector<Target> targets{Target::M1};
    std::vector<Noise> noises{Noise::Gauss};
    std::vector<int> dims{1};
    int n = 500;
    int n_te = 10000;
    std::vector<std::uint64_t> seeds{0};
    int jobs = 1;
    double significance = 0.01;
    bool timings = false;
    BenchMetric metric = BenchMetric::MaeTruth;
    double sigma = -1.0;  // surrogate width; <= 0 selects n_te^{-1/5}
    TrainConfig train;    // neural-method settings
};

struct FileBenchConfig {
    std::string path;
    TableFormat format = TableFormat::Csv;
    std::string target_column = "y";
    std::vector<std::string> methods;  // dmrnn | nn-ls | nn-lad
    double split = 0.8;
    std::vector<std::uint64_t> seeds{0};
    double sigma = -1.0;  // <= 0 selects n_te^{-1/5}
    int jobs = 1;
    double significance = 0.05;
    bool timings = false;
    TrainConfig train;
};

struct CellStats {
    std::string method;
    std::string group;  // "M1/gauss/d=1" or the dataset tag
    std::vector<std::uint64_t> seeds;
    std::vector<double> per_seed;  // NaN marks a failed replication
    std::vector<std::string> failures;
    double mean = 0.0;
    double sd = 0.0;
    bool best_comparable = false;
    double wall_clock_sec = 0.0;
};

struct BenchmarkReport {
    std::string version;
    std::string metric;  // "mae_truth" or "surrogate"
    bool timings = false;
    double significance = 0.01;
    std::map<std::string, std::string> config_echo;
    std::vector<CellStats> cells;
};

/// Synthetic protocol: per (target, noise, d, seed) one training draw shared
/// by all methods, fresh n_te test draw, mean absolute error to the
/// noise-free truth. Cells run on a worker pool; results are identical for
/// any worker count.
BenchmarkReport run_synth_benchmark(const SynthBenchConfig& config);

/// Real-table protocol: seeded 80/20 splits, train-split standardization,
/// Gaussian surrogate score on the standardized test targets.
BenchmarkReport run_file_benchmark(const FileBenchConfig& config);

/// Deterministic JSON dump (wall-clock fields included only when timings
/// was set).
std::string report_to_json(const BenchmarkReport& report);

/// Aligned plain-text table; '*' marks best-and-comparable per group under
/// the paired t-test at the report's significance level.
std::string report_to_table(const BenchmarkReport& report);

/// Two-sided paired t-test p-value; identical vectors give p = 1.
double paired_ttest_pvalue(const std::vector<double>& a, const std::vector<double>& b);

/// Derived seed for the held-out synthetic test draw of a replication.
std::uint64_t test_seed_for(std::uint64_t train_seed);

}  // namespace modereg
