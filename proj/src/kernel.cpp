#include "modereg/kernel.hpp"

#include <algorithm>

namespace modereg {

void KernelParams::validate() const {
    const bool ok = sigma_y > 0.0 && sigma_x > 0.0 && sigma_m > 0.0 && std::isfinite(sigma_y) &&
                    std::isfinite(sigma_x) && std::isfinite(sigma_m);
    if (!ok) throw ConfigError("kernel widths must be strictly positive and finite");
}

double ky(double y, double y2, double sigma_y) {
    const double d = y - y2;
    return phi(d * d / (2.0 * sigma_y * sigma_y));
}

double kx(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& x2,
          double sigma_x) {
    if (x.size() != x2.size()) throw DataError("kx: dimension mismatch");
    return phi((x - x2).squaredNorm() / (2.0 * sigma_x * sigma_x));
}

double dky_dy2(double y, double y2, double sigma_y) {
    const double s2 = sigma_y * sigma_y;
    return (y - y2) / s2 * ky(y, y2, sigma_y);
}

double d2ky_dy_dy2(double y, double y2, double sigma_y) {
    const double s2 = sigma_y * sigma_y;
    const double d = y - y2;
    return (1.0 / s2 - d * d / (s2 * s2)) * ky(y, y2, sigma_y);
}

KernelMatrices assemble_matrices(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                 const KernelParams& params) {
    params.validate();
    const Eigen::Index n = y.size();
    if (n == 0) throw DataError("assemble_matrices: empty input");
    if (X.rows() != n) throw DataError("assemble_matrices: X rows must match y length");

    KernelMatrices m;
    m.K.resize(n, n);
    m.G.resize(n, n);
    m.H.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double kxv = kx(X.row(i).transpose(), X.row(j).transpose(), params.sigma_x);
            m.K(i, j) = ky(y(i), y(j), params.sigma_y) * kxv;
            m.G(i, j) = dky_dy2(y(i), y(j), params.sigma_y) * kxv;
            m.H(i, j) = d2ky_dy_dy2(y(i), y(j), params.sigma_y) * kxv;
        }
    }
    return m;
}

KernelMatrices assemble_matrices(const std::vector<JointPoint>& points,
                                 const KernelParams& params) {
    if (points.empty()) throw DataError("assemble_matrices: empty input");
    const Eigen::Index n = static_cast<Eigen::Index>(points.size());
    const Eigen::Index d = points.front().x.size();
    Eigen::VectorXd y(n);
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (points[i].x.size() != d) throw DataError("assemble_matrices: inconsistent dimensions");
        y(i) = points[i].y;
        X.row(i) = points[i].x.transpose();
    }
    return assemble_matrices(y, X, params);
}

double median_trick(const Eigen::MatrixXd& X) {
    const Eigen::Index n = X.rows();
    if (n < 2) throw DataError("median_trick: need at least two points");
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) dists.push_back((X.row(i) - X.row(j)).norm());
    // Lower median: index (m-1)/2 of the sorted list covers odd and even m.
    const std::size_t k = (dists.size() - 1) / 2;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k), dists.end());
    const double med = dists[k];
    if (!(med > 0.0)) throw DataError("median_trick: degenerate width (coincident points)");
    return med;
}

Eigen::MatrixXd gaussian_gram(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double sigma) {
    if (A.cols() != B.cols()) throw DataError("gaussian_gram: dimension mismatch");
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    Eigen::MatrixXd out(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < B.rows(); ++j)
            out(i, j) = std::exp(-(A.row(i) - B.row(j)).squaredNorm() * inv2s2);
    return out;
}

}  // namespace modereg
