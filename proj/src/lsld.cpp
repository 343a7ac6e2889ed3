#include "modereg/lsld.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace modereg {

namespace {

// Solves A x = b for symmetric positive definite A, falling back to a pivoted
// least-squares solve. Throws NumericError when the residual stays above
// 1e-8 * ||b||.
Eigen::VectorXd solve_spd(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                          const char* context) {
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    Eigen::VectorXd x;
    if (llt.info() == Eigen::Success) {
        x = llt.solve(b);
        if ((A * x - b).norm() <= 1e-8 * std::max(b.norm(), 1e-300)) return x;
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    x = cod.solve(b);
    const double resid = (A * x - b).norm();
    if (resid > 1e-8 * std::max(b.norm(), 1e-300)) {
        std::ostringstream msg;
        msg << context << ": linear system ill-conditioned beyond solver tolerance"
            << " (residual " << resid << ", rhs norm " << b.norm() << ", rank " << cod.rank()
            << "/" << A.rows() << ")";
        throw NumericError(msg.str());
    }
    return x;
}

}  // namespace

LsldModel fit_lsld(const Dataset& data, const KernelParams& params, double lambda) {
    params.validate();
    if (!(lambda > 0.0)) throw ConfigError("fit_lsld: lambda must be positive");
    const Eigen::Index n = data.n();
    if (n < 1) throw DataError("fit_lsld: empty dataset");

    const KernelMatrices m = assemble_matrices(data.y, data.X, params);
    const double nl = static_cast<double>(n) * lambda;
    Eigen::MatrixXd A = m.K;
    A.diagonal().array() += nl;
    const Eigen::VectorXd rhs = m.G.rowwise().sum() / nl;

    LsldModel model;
    model.alphas = solve_spd(A, rhs, "fit_lsld");
    model.beta_const = -1.0 / nl;
    model.train_y = data.y;
    model.train_x = data.X;
    model.params = params;
    model.lambda = lambda;
    return model;
}

double eval_r(const LsldModel& model, double y, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (x.size() != model.train_x.cols()) throw DataError("eval_r: dimension mismatch");
    const double sy = model.params.sigma_y;
    double sum = 0.0;
    for (Eigen::Index l = 0; l < model.n(); ++l) {
        const double kxv = kx(x, model.train_x.row(l).transpose(), model.params.sigma_x);
        sum += (model.alphas(l) * ky(y, model.train_y(l), sy) +
                model.beta_const * dky_dy2(y, model.train_y(l), sy)) *
               kxv;
    }
    return sum;
}

double eval_dr_dy(const LsldModel& model, double y, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (x.size() != model.train_x.cols()) throw DataError("eval_dr_dy: dimension mismatch");
    const double sy = model.params.sigma_y;
    double sum = 0.0;
    for (Eigen::Index l = 0; l < model.n(); ++l) {
        const double kxv = kx(x, model.train_x.row(l).transpose(), model.params.sigma_x);
        // d/dy ky(y, y_l) = -dky_dy2(y, y_l).
        sum += (-model.alphas(l) * dky_dy2(y, model.train_y(l), sy) +
                model.beta_const * d2ky_dy_dy2(y, model.train_y(l), sy)) *
               kxv;
    }
    return sum;
}

double empirical_fisher(const LsldModel& model, const Dataset& data) {
    return empirical_fisher_fn(
        [&](double y, const Eigen::Ref<const Eigen::VectorXd>& x) { return eval_r(model, y, x); },
        [&](double y, const Eigen::Ref<const Eigen::VectorXd>& x) {
            return eval_dr_dy(model, y, x);
        },
        data);
}

double loocv_score(const Dataset& data, const KernelParams& params, double lambda) {
    params.validate();
    if (!(lambda > 0.0)) throw ConfigError("loocv_score: lambda must be positive");
    const Eigen::Index n = data.n();
    if (n < 3) throw DataError("loocv_score: need at least three samples");

    const KernelMatrices m = assemble_matrices(data.y, data.X, params);
    const double reg = static_cast<double>(n - 1) * lambda;

    Eigen::MatrixXd Kreg = m.K;
    Kreg.diagonal().array() += reg;
    Eigen::LLT<Eigen::MatrixXd> llt(Kreg);
    if (llt.info() != Eigen::Success) throw NumericError("loocv_score: singular system");
    const Eigen::MatrixXd L = llt.solve(Eigen::MatrixXd::Identity(n, n));

    // S = (1/reg) * G * E with E = ones - I: column l of G*E is the row sums
    // of G minus column l.
    const Eigen::VectorXd grow = m.G.rowwise().sum();
    Eigen::MatrixXd S = (grow.replicate(1, n) - m.G) / reg;

    const Eigen::MatrixXd LS = L * S;
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (L(i, i) == 0.0) throw NumericError("loocv_score: zero diagonal in smoother");
        t(i) = LS(i, i) / L(i, i);
    }
    // A = L*(S - T); columns of A are the left-out coefficient vectors.
    const Eigen::MatrixXd A = LS - L * t.asDiagonal();

    // B = -(1/reg) E enters only through elementwise products; expand the
    // off-diagonal structure directly.
    const double bval = -1.0 / reg;
    Eigen::VectorXd r_tilde(n), dr_tilde(n);
    for (Eigen::Index l = 0; l < n; ++l) {
        double r = 0.0, dr = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double b = (i == l) ? 0.0 : bval;
            r += m.K(l, i) * A(i, l) + m.G(l, i) * b;
            dr += m.G(i, l) * A(i, l) + m.H(l, i) * b;
        }
        r_tilde(l) = r;
        dr_tilde(l) = dr;
    }
    return (0.5 * r_tilde.squaredNorm() + dr_tilde.sum()) / static_cast<double>(n);
}

double loocv_naive(const Dataset& data, const KernelParams& params, double lambda) {
    params.validate();
    const Eigen::Index n = data.n();
    if (n < 3) throw DataError("loocv_naive: need at least three samples");

    double sum = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
        Dataset sub;
        sub.X.resize(n - 1, data.d());
        sub.y.resize(n - 1);
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (i == l) continue;
            sub.X.row(k) = data.X.row(i);
            sub.y(k) = data.y(i);
            ++k;
        }
        // Each refit sees n-1 samples, so fit_lsld regularizes the system
        // with (n-1)*lambda.
        const LsldModel mdl = fit_lsld(sub, params, lambda);
        const double r = eval_r(mdl, data.y(l), data.X.row(l).transpose());
        const double dr = eval_dr_dy(mdl, data.y(l), data.X.row(l).transpose());
        sum += 0.5 * r * r + dr;
    }
    return sum / static_cast<double>(n);
}

ModelGrid default_grid(const Dataset& data) {
    ModelGrid grid;
    const double my = median_trick(data.y);
    const double mx = median_trick(data.X);
    for (const double f : {0.25, 0.5, 1.0, 2.0, 4.0}) {
        grid.sigma_y_candidates.push_back(f * my);
        grid.sigma_x_candidates.push_back(f * mx);
    }
    return grid;
}

std::pair<KernelParams, LsldModel> select_model(const Dataset& data, const ModelGrid& grid,
                                                double sigma_m,
                                                std::optional<double> lambda_override,
                                                SelectionReport* report) {
    if (grid.sigma_y_candidates.empty() || grid.sigma_x_candidates.empty())
        throw ConfigError("select_model: empty candidate grid");
    const double lambda = lambda_override.value_or(grid.lambda_for(data.n()));

    bool found = false;
    double best_score = 0.0;
    KernelParams best;
    best.sigma_m = sigma_m;
    std::vector<std::string> failures;

    for (const double sy : grid.sigma_y_candidates) {
        for (const double sx : grid.sigma_x_candidates) {
            KernelParams p{sy, sx, sigma_m};
            SelectionReport::Cell cell{sy, sx, 0.0, false, ""};
            try {
                cell.score = loocv_score(data, p, lambda);
                cell.ok = true;
            } catch (const Error& e) {
                cell.error = e.what();
                failures.push_back(std::string("sigma_y=") + std::to_string(sy) +
                                   " sigma_x=" + std::to_string(sx) + ": " + e.what());
            }
            if (report) report->cells.push_back(cell);
            if (!cell.ok) continue;
            const bool better =
                !found || cell.score < best_score ||
                (cell.score == best_score &&
                 (sy < best.sigma_y || (sy == best.sigma_y && sx < best.sigma_x)));
            if (better) {
                found = true;
                best_score = cell.score;
                best.sigma_y = sy;
                best.sigma_x = sx;
            }
        }
    }
    if (!found) {
        std::ostringstream msg;
        msg << "select_model: all grid cells failed:";
        for (const auto& f : failures) msg << "\n  " << f;
        throw NumericError(msg.str());
    }
    return {best, fit_lsld(data, best, lambda)};
}

}  // namespace modereg
