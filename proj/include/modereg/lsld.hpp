#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "modereg/data.hpp"
#include "modereg/kernel.hpp"

namespace modereg {

/// Fitted log-density-derivative estimator r_hat(y,x) for the y-score of the
/// joint density. The expansion runs over the retained training points with
/// coefficients alphas and a common derivative coefficient beta_const.
struct LsldModel {
    Eigen::VectorXd alphas;
    double beta_const = 0.0;  // -1/(n*lambda)
    Eigen::VectorXd train_y;
    Eigen::MatrixXd train_x;
    KernelParams params;
    double lambda = 0.0;

    Eigen::Index n() const { return train_y.size(); }
};

struct ModelGrid {
    std::vector<double> sigma_y_candidates;
    std::vector<double> sigma_x_candidates;
    // Regularization follows the fixed rule n^lambda_exponent unless
    // overridden by the caller.
    double lambda_exponent = -0.9;

    double lambda_for(Eigen::Index n) const {
        return std::pow(static_cast<double>(n), lambda_exponent);
    }
};

/// Solves (K + n*lambda*I) alpha = (1/(n*lambda)) G 1 and returns the fitted
/// model. Throws NumericError if the solve residual exceeds 1e-8 * ||rhs||.
LsldModel fit_lsld(const Dataset& data, const KernelParams& params, double lambda);

/// r_hat(y, x).
double eval_r(const LsldModel& model, double y, const Eigen::Ref<const Eigen::VectorXd>& x);

/// d/dy r_hat(y, x).
double eval_dr_dy(const LsldModel& model, double y, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Empirical Fisher divergence (up to the model-free constant):
/// (1/n) sum_i [ r(z_i)^2 / 2 + d/dy r(z_i) ].
double empirical_fisher(const LsldModel& model, const Dataset& data);

/// Same criterion for an arbitrary score function and its y-derivative.
template <typename R, typename DR>
double empirical_fisher_fn(R&& r, DR&& dr_dy, const Dataset& data) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const double ri = r(data.y(i), data.X.row(i).transpose());
        sum += 0.5 * ri * ri + dr_dy(data.y(i), data.X.row(i).transpose());
    }
    return sum / static_cast<double>(data.n());
}

/// Closed-form leave-one-out score: each left-out fit uses regularization
/// (n-1)*lambda, matching the per-fold solution the shortcut reproduces.
double loocv_score(const Dataset& data, const KernelParams& params, double lambda);

/// Reference implementation with n explicit refits; O(n^4), test oracle.
double loocv_naive(const Dataset& data, const KernelParams& params, double lambda);

/// Width grid for the CLI: {1/4,1/2,1,2,4} x median pairwise distances of y
/// and of X.
ModelGrid default_grid(const Dataset& data);

struct SelectionReport {
    struct Cell {
        double sigma_y, sigma_x, score;
        bool ok;
        std::string error;
    };
    std::vector<Cell> cells;
};

/// Evaluates loocv_score over the grid with lambda = n^{-0.9} (or the
/// override) and refits on all points at the minimizing widths. Ties break
/// toward the smallest sigma_y, then smallest sigma_x.
std::pair<KernelParams, LsldModel> select_model(const Dataset& data, const ModelGrid& grid,
                                                double sigma_m,
                                                std::optional<double> lambda_override = {},
                                                SelectionReport* report = nullptr);

}  // namespace modereg
