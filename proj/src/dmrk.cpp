#include "modereg/dmrk.hpp"

#include <cmath>
#include <sstream>

namespace modereg {

namespace {

// Shared per-fit state: gram matrices and constants reused across iterations.
struct Engine {
    Eigen::MatrixXd Km;  // k_m(x_i, x_j), symmetric
    Eigen::MatrixXd Kx;  // kx(x_i, x_l) at the score model's width
    Eigen::VectorXd y;
    Eigen::VectorXd alpha;  // effective coefficients (zeroed under AlphaMode::Zeroed)
    double lambda = 0.0;
    double sigma_y = 1.0;
    Eigen::Index n = 0;

    Engine(const Dataset& data, const LsldModel& lsld, double sigma_m, AlphaMode mode) {
        if (lsld.n() != data.n()) throw DataError("dmrk: score model was fitted on different data");
        n = data.n();
        Km = gaussian_gram(data.X, data.X, sigma_m);
        Kx = gaussian_gram(data.X, data.X, lsld.params.sigma_x);
        y = data.y;
        alpha = (mode == AlphaMode::Zeroed) ? Eigen::VectorXd::Zero(n).eval() : lsld.alphas;
        lambda = lsld.lambda;
        sigma_y = lsld.params.sigma_y;
    }

    // W(i,l) = phi((f_i - y_l)^2 / (2 sigma_y^2)).
    Eigen::MatrixXd weights(const Eigen::VectorXd& f) const {
        Eigen::MatrixXd D = f.replicate(1, n) - y.transpose().replicate(n, 1);
        return (-D.array().square() / (2.0 * sigma_y * sigma_y)).exp().matrix();
    }

    Eigen::MatrixXd buildH(const Eigen::VectorXd& f) const {
        const Eigen::MatrixXd V = weights(f).cwiseProduct(Kx);
        const double scale =
            1.0 / (static_cast<double>(n) * static_cast<double>(n) * lambda * sigma_y * sigma_y);
        const Eigen::VectorXd c = (V.rowwise().sum() * scale).cwiseSqrt();
        const Eigen::MatrixXd M = c.asDiagonal() * Km;
        Eigen::MatrixXd H = M.transpose() * M;
        H = 0.5 * (H + H.transpose()).eval();
        return H;
    }

    Eigen::VectorXd buildh(const Eigen::VectorXd& f) const {
        const Eigen::MatrixXd V = weights(f).cwiseProduct(Kx);
        const Eigen::VectorXd coef =
            alpha + y / (static_cast<double>(n) * lambda * sigma_y * sigma_y);
        const Eigen::VectorXd b = V * coef / static_cast<double>(n);
        return Km.transpose() * b;
    }

    Eigen::VectorXd step(const Eigen::VectorXd& theta, const DmrkConfig& config) const {
        const Eigen::VectorXd f = Km * theta;
        const Eigen::MatrixXd H = buildH(f);
        const Eigen::VectorXd h = buildh(f);
        const double jitter =
            config.jitter.value_or(1e-8 * H.trace() / static_cast<double>(n));
        if (jitter < 0.0) throw ConfigError("dmrk: jitter must be nonnegative");

        Eigen::MatrixXd A = H;
        A.diagonal().array() += jitter;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        if (ldlt.info() == Eigen::Success) {
            const Eigen::VectorXd theta_next = ldlt.solve(h);
            if ((A * theta_next - h).norm() <= 1e-8 * std::max(h.norm(), 1e-300))
                return theta_next;
        }
        // Minimum-norm least squares keeps theta bounded when the Gram is
        // numerically rank-deficient (possible with jitter = 0).
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
        const Eigen::VectorXd theta_next = cod.solve(h);
        if ((A * theta_next - h).norm() > 1e-6 * std::max(h.norm(), 1e-300))
            throw NumericError("dmrk: update system singular even after diagonal loading");
        return theta_next;
    }

    double path_integral(const Eigen::VectorXd& theta1, const Eigen::VectorXd& theta2,
                         int nodes) const {
        if (nodes < 3) throw ConfigError("path_integral: need at least 3 quadrature nodes");
        if (nodes % 2 == 0) ++nodes;
        const Eigen::VectorXd f1 = Km * theta1;
        const Eigen::VectorXd f2 = Km * theta2;

        const double inv_n2l =
            1.0 / (static_cast<double>(n) * static_cast<double>(n) * lambda);
        const double beta_part =
            inv_n2l * (weights(f2).cwiseProduct(Kx).sum() - weights(f1).cwiseProduct(Kx).sum());

        double alpha_part = 0.0;
        if (!alpha.isZero(0.0)) {
            const Eigen::VectorXd delta = f2 - f1;
            const double hstep = 1.0 / static_cast<double>(nodes - 1);
            auto integrand = [&](double t) {
                const Eigen::VectorXd ft = f1 + t * delta;
                return delta.dot(weights(ft).cwiseProduct(Kx) * alpha) / static_cast<double>(n);
            };
            double acc = integrand(0.0) + integrand(1.0);
            for (int k = 1; k < nodes - 1; ++k)
                acc += (k % 2 == 1 ? 4.0 : 2.0) * integrand(k * hstep);
            alpha_part = acc * hstep / 3.0;
        }
        return beta_part + alpha_part;
    }
};

}  // namespace

Eigen::MatrixXd build_H_theta(const Eigen::VectorXd& theta, const Dataset& data,
                              const LsldModel& lsld, double sigma_m) {
    Engine eng(data, lsld, sigma_m, AlphaMode::Full);
    return eng.buildH(eng.Km * theta);
}

Eigen::VectorXd build_h_theta(const Eigen::VectorXd& theta, const Dataset& data,
                              const LsldModel& lsld, double sigma_m, AlphaMode alpha_mode) {
    Engine eng(data, lsld, sigma_m, alpha_mode);
    return eng.buildh(eng.Km * theta);
}

Eigen::VectorXd fixed_point_step(const Eigen::VectorXd& theta, const Dataset& data,
                                 const LsldModel& lsld, const DmrkConfig& config, double sigma_m) {
    Engine eng(data, lsld, sigma_m, config.alpha_mode);
    return eng.step(theta, config);
}

double path_integral_estimate(const Eigen::VectorXd& theta1, const Eigen::VectorXd& theta2,
                              const Dataset& data, const LsldModel& lsld, double sigma_m,
                              int quadrature_nodes) {
    if (theta1.size() != theta2.size()) throw DataError("path_integral: shape mismatch");
    Engine eng(data, lsld, sigma_m, AlphaMode::Full);
    return eng.path_integral(theta1, theta2, quadrature_nodes);
}

std::pair<DmrkModel, FixedPointTrace> fit_dmrk(const Dataset& data, const Eigen::VectorXd& theta0,
                                               const LsldModel& lsld, const DmrkConfig& config,
                                               std::optional<double> sigma_m) {
    if (theta0.size() != data.n()) throw DataError("fit_dmrk: theta0 length must equal n");
    if (config.max_iters < 1 || !(config.tol > 0.0))
        throw ConfigError("fit_dmrk: invalid stopping configuration");
    const double sm = sigma_m.value_or(median_trick(data.X));
    Engine eng(data, lsld, sm, config.alpha_mode);

    const double init_scale = std::max(theta0.lpNorm<Eigen::Infinity>(), 1.0);
    FixedPointTrace trace;
    trace.thetas.push_back(theta0);

    Eigen::VectorXd theta = theta0;
    for (int iter = 0; iter < config.max_iters; ++iter) {
        const Eigen::VectorXd theta_next = eng.step(theta, config);
        trace.d_hats.push_back(eng.path_integral(theta, theta_next, config.quadrature_nodes));
        trace.thetas.push_back(theta_next);
        ++trace.iterations;

        if (theta_next.lpNorm<Eigen::Infinity>() > 1e6 * init_scale) {
            std::ostringstream msg;
            msg << "fit_dmrk: iterate diverged at step " << trace.iterations << " (|theta|_inf="
                << theta_next.lpNorm<Eigen::Infinity>() << ", initial scale " << init_scale << ")";
            throw NumericError(msg.str());
        }
        // The coefficient criterion can stall on a solver-noise floor when
        // the Gram is numerically rank deficient, so fitted values count as
        // converged too.
        const double delta = (theta_next - theta).lpNorm<Eigen::Infinity>();
        const double delta_f = (eng.Km * (theta_next - theta)).lpNorm<Eigen::Infinity>();
        theta = theta_next;
        if (delta < config.tol || delta_f < config.tol) {
            trace.converged = true;
            break;
        }
    }

    DmrkModel model;
    model.theta = theta;
    model.sigma_m = sm;
    model.train_x = data.X;
    return {std::move(model), std::move(trace)};
}

Eigen::VectorXd predict(const DmrkModel& model, const Eigen::MatrixXd& X) {
    if (X.cols() != model.train_x.cols()) throw DataError("predict: dimension mismatch");
    return gaussian_gram(X, model.train_x, model.sigma_m) * model.theta;
}

}  // namespace modereg
