#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>

#include "modereg/common.hpp"
#include "modereg/rng.hpp"

namespace modereg {

enum class Target { M1, M2, M3 };
enum class Noise { Gauss, Outlier, Skewed, Nonstationary };

Target parse_target(const std::string& s);
Noise parse_noise(const std::string& s);
std::string to_string(Target t);
std::string to_string(Noise n);

struct GeneratorSpec {
    Target target = Target::M1;
    Noise noise = Noise::Gauss;
    int d = 1;
    int n = 500;
    std::uint64_t seed = 0;
};

struct DatasetMeta {
    std::string source;  // "synthetic", "csv", "libsvm"
    std::uint64_t seed = 0;
    std::optional<GeneratorSpec> gen;
    std::string path;
};

struct Dataset {
    Eigen::MatrixXd X;  // n x d
    Eigen::VectorXd y;  // n
    DatasetMeta meta;

    Eigen::Index n() const { return y.size(); }
    Eigen::Index d() const { return X.cols(); }
};

/// Noise-free target value. M1: mean of coordinates; M2: sin of (pi/d) times
/// the sum of absolute coordinates; M3: mean of squared coordinates.
double true_f(Target target, const Eigen::Ref<const Eigen::VectorXd>& x);

/// One noise draw. Gauss: N(0, 0.5). Outlier: N(0, 0.5) with probability 0.9,
/// else U[1,5]. Skewed: exponential with mean 0.5 (mode 0). Nonstationary:
/// |cos(pi x_1)| times an exponential with mean 0.5.
double sample_noise(Noise noise, const Eigen::Ref<const Eigen::VectorXd>& x, CounterRng& rng);

/// x_i uniform on [-1,1]^d, y_i = f*(x_i) + eps(x_i). Bitwise reproducible
/// for a fixed spec.
Dataset gen_synthetic(const GeneratorSpec& spec);

enum class TableFormat { Csv, Libsvm };

/// Loads a numeric table. CSV: comma-separated, optional header row, '.'
/// decimals; the target column is selected by header name, or by 0-based
/// index when the name does not match (or there is no header). LIBSVM:
/// "<target> <idx>:<val> ..." with 1-based indices expanded densely; the
/// target column argument is ignored.
Dataset load_table(const std::string& path, TableFormat format,
                   const std::string& target_column = "y");

/// Writes a dataset as CSV with header x1..xd,y using round-trip-exact
/// decimal formatting.
void save_csv(const Dataset& data, const std::string& path);

struct Standardizer {
    Eigen::VectorXd x_mean, x_sd;
    double y_mean = 0.0, y_sd = 1.0;

    /// Population (1/n) standard deviations, fitted on the training split
    /// only. Throws DataError on a zero-variance column.
    static Standardizer fit(const Dataset& train);

    Dataset apply(const Dataset& data) const;
    Eigen::VectorXd apply_y(const Eigen::VectorXd& y) const;
    Eigen::VectorXd invert_predictions(const Eigen::VectorXd& pred_std) const;
};

/// Mean absolute deviation of predictions from the noise-free truth f*.
double mae_to_truth(const Eigen::VectorXd& predictions, const GeneratorSpec& spec,
                    const Eigen::MatrixXd& X_te);

/// Gaussian surrogate performance score; larger is better.
double surrogate_score(const Eigen::VectorXd& predictions, const Eigen::VectorXd& y_te,
                       double sigma);

}  // namespace modereg
