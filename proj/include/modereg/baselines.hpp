#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "modereg/dmrk.hpp"

namespace modereg {

struct RidgeModel {
    Eigen::VectorXd theta;
    double sigma_m = 1.0;
    Eigen::MatrixXd train_x;
    double lambda_reg = 0.0;
};

/// Kernel ridge regression with the representer model; lambda picked by
/// k-fold cross-validation on squared validation error (fold assignment
/// derives from data.meta.seed), then refit on all points.
RidgeModel fit_krr(const Dataset& data, double sigma_m, const std::vector<double>& lambda_grid,
                   int folds);

struct LadResult {
    RidgeModel model;
    bool converged = false;
    int iterations = 0;
    std::vector<double> objective_trace;  // objective after each accepted sweep
};

/// Least absolute deviations via iteratively reweighted least squares;
/// lambda picked by k-fold cross-validation on absolute validation error.
/// Non-convergence returns the best iterate with converged = false.
LadResult fit_lad(const Dataset& data, double sigma_m, const std::vector<double>& lambda_grid,
                  int folds);

Eigen::VectorXd predict_ridge(const RidgeModel& model, const Eigen::MatrixXd& X);

/// Default lambda grid {10^-6, ..., 10^0} shared by KRR and LAD.
std::vector<double> default_lambda_grid();

/// Deterministic fold assignment: a seeded shuffle of 0..n-1 cut into
/// contiguous folds. Returns fold index per sample.
std::vector<int> make_folds(Eigen::Index n, int folds, std::uint64_t seed);

struct KdeModel {
    double h_y = 1.0;
    double h_x = 1.0;
    Dataset train;

    double normalization() const;  // Z = (2 pi)^{(d+1)/2} h_y h_x^d
};

/// Joint density estimate at (y, x); nonnegative.
double kde_joint(const KdeModel& model, double y, const Eigen::Ref<const Eigen::VectorXd>& x);

struct KdeGrid {
    std::vector<double> h_y_candidates;
    std::vector<double> h_x_candidates;
};

/// {1/4,1/2,1,2,4} x Silverman-style reference bandwidths.
KdeGrid default_kde_grid(const Dataset& data);

/// Least-squares cross-validation: minimizes the unbiased risk estimate
/// integral(p^2) - (2/n) sum_l p^{(l)}(z_l) over the grid; the integral term
/// uses the closed Gaussian-convolution form. Ties break toward the smaller
/// h_y, then smaller h_x.
std::pair<double, double> select_kde_bandwidths(const Dataset& data, const KdeGrid& grid);

struct MrkdeResult {
    DmrkModel model;
    bool converged = false;
    int iterations = 0;
};

/// Fixed-point modal regression against the KDE joint density; shares the
/// stopping rule and diagonal-loading policy with the direct kernel method.
MrkdeResult fit_mrkde(const Dataset& data, const Eigen::VectorXd& theta0, const KdeModel& kde,
                      double sigma_m, const DmrkConfig& config);

/// KDE fixed-point system pieces, exposed for the gradient-identity check:
/// H_kde(theta) and h_kde(theta) without the common normalizing scale.
Eigen::MatrixXd build_H_kde(const Eigen::VectorXd& theta, const KdeModel& kde, double sigma_m);
Eigen::VectorXd build_h_kde(const Eigen::VectorXd& theta, const KdeModel& kde, double sigma_m);

}  // namespace modereg
