#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "modereg/common.hpp"

namespace modereg {

// The output kernel is k_y(y,y') = phi((y-y')^2 / (2 sigma_y^2)). We fix
// phi(t) = exp(-t) (Gaussian), and keep phi and its negated derivative
// varphi = -dphi/dt as named quantities since the fixed-point machinery is
// stated in terms of them.
inline double phi(double t) { return std::exp(-t); }
inline double varphi(double t) { return std::exp(-t); }

struct KernelParams {
    double sigma_y = 1.0;  // width of k_y over outputs
    double sigma_x = 1.0;  // width of k_x over inputs
    double sigma_m = 1.0;  // width of the regression kernel k_m

    void validate() const;
};

struct JointPoint {
    double y = 0.0;
    Eigen::VectorXd x;
};

/// k_y(y, y2) = exp(-(y-y2)^2 / (2 sigma_y^2)), in (0,1].
double ky(double y, double y2, double sigma_y);

/// k_x(x, x2) = exp(-||x-x2||^2 / (2 sigma_x^2)). Throws DataError on
/// dimension mismatch.
double kx(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& x2,
          double sigma_x);

/// Derivative of k_y with respect to its second argument:
/// ((y-y2)/sigma_y^2) * k_y(y, y2). Antisymmetric under argument swap.
double dky_dy2(double y, double y2, double sigma_y);

/// Mixed second derivative d/dy d/dy2 of k_y:
/// (1/sigma_y^2 - (y-y2)^2/sigma_y^4) * k_y(y, y2).
double d2ky_dy_dy2(double y, double y2, double sigma_y);

struct KernelMatrices {
    Eigen::MatrixXd K;  // K_ij = ky(y_i,y_j) * kx(x_i,x_j)
    Eigen::MatrixXd G;  // G_ij = dky_dy2(y_i,y_j) * kx(x_i,x_j)
    Eigen::MatrixXd H;  // H_ij = d2ky_dy_dy2(y_i,y_j) * kx(x_i,x_j)
};

/// Assembles the three n x n matrices over the joint sample. Rows of X pair
/// with entries of y. Throws DataError on empty input.
KernelMatrices assemble_matrices(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                 const KernelParams& params);
KernelMatrices assemble_matrices(const std::vector<JointPoint>& points, const KernelParams& params);

/// Median of the n(n-1)/2 pairwise distances ||x_i - x_j||, i < j. Even pair
/// counts take the lower of the two middle values. Throws DataError for
/// n < 2 or a degenerate (zero) median.
double median_trick(const Eigen::MatrixXd& X);

/// Gaussian Gram matrix between row sets: out(i,j) = exp(-||A_i-B_j||^2/(2 sigma^2)).
Eigen::MatrixXd gaussian_gram(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double sigma);

}  // namespace modereg
