#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "modereg/lsld.hpp"

namespace modereg {

/// Kernel modal regressor: f(x) = sum_k theta_k k_m(x, train_x_k).
struct DmrkModel {
    Eigen::VectorXd theta;
    double sigma_m = 1.0;
    Eigen::MatrixXd train_x;
};

struct FixedPointTrace {
    std::vector<Eigen::VectorXd> thetas;  // iterates, starting at theta0
    std::vector<double> d_hats;           // risk-ascent estimate per accepted step
    bool converged = false;
    int iterations = 0;
};

enum class AlphaMode { Full, Zeroed };

struct DmrkConfig {
    int max_iters = 500;
    double tol = 1e-6;  // infinity-norm step tolerance
    // Diagonal loading of H(theta). Unset means the scale-aware default
    // 1e-8 * trace(H)/n per step; 0 disables loading.
    std::optional<double> jitter;
    AlphaMode alpha_mode = AlphaMode::Full;
    int quadrature_nodes = 101;  // Simpson nodes for the alpha part of D-hat
};

/// H(theta): weighted Gram of the regression-kernel features; symmetric PSD.
Eigen::MatrixXd build_H_theta(const Eigen::VectorXd& theta, const Dataset& data,
                              const LsldModel& lsld, double sigma_m);

/// h(theta); with AlphaMode::Zeroed the alpha-weighted term is dropped.
Eigen::VectorXd build_h_theta(const Eigen::VectorXd& theta, const Dataset& data,
                              const LsldModel& lsld, double sigma_m, AlphaMode alpha_mode);

/// One fixed-point update: solves (H(theta) + jitter I) theta' = h(theta).
Eigen::VectorXd fixed_point_step(const Eigen::VectorXd& theta, const Dataset& data,
                                 const LsldModel& lsld, const DmrkConfig& config, double sigma_m);

/// Estimated risk change D-hat[theta2 | theta1] along the linear path. The
/// derivative-coefficient part has an exact closed form; the alpha part is
/// integrated by composite Simpson with the given node count (>= 3; even
/// counts are bumped to the next odd). A model with zero alphas makes the
/// result exact.
double path_integral_estimate(const Eigen::VectorXd& theta1, const Eigen::VectorXd& theta2,
                              const Dataset& data, const LsldModel& lsld, double sigma_m,
                              int quadrature_nodes);

/// Runs the fixed-point iteration from theta0 until the step tolerance or
/// max_iters; the trace records each iterate and the D-hat of each step.
/// sigma_m defaults to the median pairwise input distance.
std::pair<DmrkModel, FixedPointTrace> fit_dmrk(const Dataset& data, const Eigen::VectorXd& theta0,
                                               const LsldModel& lsld, const DmrkConfig& config,
                                               std::optional<double> sigma_m = {});

Eigen::VectorXd predict(const DmrkModel& model, const Eigen::MatrixXd& X);

}  // namespace modereg
