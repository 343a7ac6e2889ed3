#include "modereg/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "modereg/rng.hpp"

namespace modereg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kIrlsEps = 1e-6;
constexpr int kIrlsMaxIters = 200;
constexpr double kIrlsTol = 1e-6;

Eigen::VectorXd solve_ridge(const Eigen::MatrixXd& Km, const Eigen::VectorXd& y, double lambda) {
    const double nl = static_cast<double>(y.size()) * lambda;
    Eigen::MatrixXd A = Km;
    A.diagonal().array() += nl;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    Eigen::VectorXd theta;
    if (llt.info() == Eigen::Success) {
        theta = llt.solve(y);
        if ((A * theta - y).norm() <= 1e-8 * std::max(y.norm(), 1e-300)) return theta;
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    theta = cod.solve(y);
    if ((A * theta - y).norm() > 1e-8 * std::max(y.norm(), 1e-300))
        throw NumericError("ridge solve: system singular beyond solver tolerance");
    return theta;
}

double lad_objective(const Eigen::MatrixXd& Km, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& theta, double lambda) {
    const double n = static_cast<double>(y.size());
    const Eigen::VectorXd resid = y - Km * theta;
    return resid.cwiseAbs().sum() + 0.5 * lambda * n * theta.dot(Km * theta);
}

// IRLS for sum |y - Km theta| + (lambda n / 2) theta' Km theta. Each sweep
// solves the symmetrized weighted ridge system; steps that fail to decrease
// the objective are halved toward the previous iterate before giving up.
struct IrlsOut {
    Eigen::VectorXd theta;
    bool converged = false;
    int iterations = 0;
    std::vector<double> objective_trace;
};

IrlsOut irls_lad(const Eigen::MatrixXd& Km, const Eigen::VectorXd& y, double lambda,
                 const Eigen::VectorXd* warm_start = nullptr) {
    const Eigen::Index n = y.size();
    const double nl = static_cast<double>(n) * lambda;
    IrlsOut out;
    out.theta = warm_start ? *warm_start : Eigen::VectorXd::Zero(n).eval();
    double obj = lad_objective(Km, y, out.theta, lambda);
    out.objective_trace.push_back(obj);

    for (int iter = 0; iter < kIrlsMaxIters; ++iter) {
        const Eigen::VectorXd resid = y - Km * out.theta;
        const Eigen::VectorXd w =
            resid.cwiseAbs().cwiseMax(kIrlsEps).cwiseInverse();
        const Eigen::VectorXd sw = w.cwiseSqrt();
        Eigen::MatrixXd M = sw.asDiagonal() * Km * sw.asDiagonal();
        M.diagonal().array() += nl;
        Eigen::LLT<Eigen::MatrixXd> llt(M);
        if (llt.info() != Eigen::Success) throw NumericError("fit_lad: weighted system singular");
        Eigen::VectorXd candidate = sw.asDiagonal() * llt.solve(sw.cwiseProduct(y));

        // Safeguarded acceptance: halve toward the current iterate while the
        // objective increases.
        double cand_obj = lad_objective(Km, y, candidate, lambda);
        int halvings = 0;
        while (cand_obj > obj + 1e-12 && halvings < 20) {
            candidate = 0.5 * (candidate + out.theta);
            cand_obj = lad_objective(Km, y, candidate, lambda);
            ++halvings;
        }
        if (cand_obj > obj + 1e-12) break;  // stalled; keep best iterate

        const double delta = (candidate - out.theta).lpNorm<Eigen::Infinity>();
        out.theta = candidate;
        obj = cand_obj;
        out.objective_trace.push_back(obj);
        ++out.iterations;
        if (delta < kIrlsTol) {
            out.converged = true;
            break;
        }
    }
    return out;
}

template <typename FitFn, typename LossFn>
double cv_select_lambda(const Dataset& data, double sigma_m, const std::vector<double>& grid,
                        int folds, FitFn&& fit, LossFn&& loss) {
    if (grid.empty()) throw ConfigError("cross-validation: empty lambda grid");
    if (folds < 2) throw ConfigError("cross-validation: need at least two folds");
    const Eigen::Index n = data.n();
    const std::vector<int> fold_of = make_folds(n, folds, data.meta.seed);

    double best_lambda = grid.front();
    double best_err = std::numeric_limits<double>::infinity();
    for (const double lambda : grid) {
        double err_sum = 0.0;
        int err_count = 0;
        for (int f = 0; f < folds; ++f) {
            std::vector<Eigen::Index> tr, va;
            for (Eigen::Index i = 0; i < n; ++i) (fold_of[i] == f ? va : tr).push_back(i);
            if (va.empty() || tr.empty()) continue;
            Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(tr.size()), data.d());
            Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size()));
            for (std::size_t i = 0; i < tr.size(); ++i) {
                Xtr.row(static_cast<Eigen::Index>(i)) = data.X.row(tr[i]);
                ytr(static_cast<Eigen::Index>(i)) = data.y(tr[i]);
            }
            Eigen::MatrixXd Xva(static_cast<Eigen::Index>(va.size()), data.d());
            Eigen::VectorXd yva(static_cast<Eigen::Index>(va.size()));
            for (std::size_t i = 0; i < va.size(); ++i) {
                Xva.row(static_cast<Eigen::Index>(i)) = data.X.row(va[i]);
                yva(static_cast<Eigen::Index>(i)) = data.y(va[i]);
            }
            const Eigen::MatrixXd Km = gaussian_gram(Xtr, Xtr, sigma_m);
            const Eigen::VectorXd theta = fit(Km, ytr, lambda);
            const Eigen::VectorXd pred = gaussian_gram(Xva, Xtr, sigma_m) * theta;
            err_sum += loss(pred, yva);
            ++err_count;
        }
        const double err = err_sum / std::max(err_count, 1);
        if (err < best_err) {
            best_err = err;
            best_lambda = lambda;
        }
    }
    return best_lambda;
}

}  // namespace

std::vector<int> make_folds(Eigen::Index n, int folds, std::uint64_t seed) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    CounterRng rng(seed, stream_id("cv-folds"));
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.bounded(i))]);
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    for (std::size_t pos = 0; pos < perm.size(); ++pos)
        fold_of[static_cast<std::size_t>(perm[pos])] =
            static_cast<int>(pos % static_cast<std::size_t>(folds));
    return fold_of;
}

std::vector<double> default_lambda_grid() {
    return {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
}

RidgeModel fit_krr(const Dataset& data, double sigma_m, const std::vector<double>& lambda_grid,
                   int folds) {
    const double lambda = cv_select_lambda(
        data, sigma_m, lambda_grid, folds,
        [](const Eigen::MatrixXd& Km, const Eigen::VectorXd& y, double lam) {
            return solve_ridge(Km, y, lam);
        },
        [](const Eigen::VectorXd& pred, const Eigen::VectorXd& yva) {
            return (pred - yva).squaredNorm() / static_cast<double>(yva.size());
        });
    const Eigen::MatrixXd Km = gaussian_gram(data.X, data.X, sigma_m);
    RidgeModel model;
    model.theta = solve_ridge(Km, data.y, lambda);
    model.sigma_m = sigma_m;
    model.train_x = data.X;
    model.lambda_reg = lambda;
    return model;
}

LadResult fit_lad(const Dataset& data, double sigma_m, const std::vector<double>& lambda_grid,
                  int folds) {
    // Warm-starting each fold's sweep across the lambda grid cuts the IRLS
    // iteration count several-fold without changing the tol-1e-6 solutions.
    std::map<int, Eigen::VectorXd> warm;
    int fold_counter = 0;
    const double lambda = cv_select_lambda(
        data, sigma_m, lambda_grid, folds,
        [&warm, &fold_counter, nfolds = folds](const Eigen::MatrixXd& Km,
                                               const Eigen::VectorXd& y, double lam) {
            const int fold = fold_counter++ % nfolds;
            auto it = warm.find(fold);
            const Eigen::VectorXd* ws =
                (it != warm.end() && it->second.size() == y.size()) ? &it->second : nullptr;
            Eigen::VectorXd theta = irls_lad(Km, y, lam, ws).theta;
            warm[fold] = theta;
            return theta;
        },
        [](const Eigen::VectorXd& pred, const Eigen::VectorXd& yva) {
            return (pred - yva).cwiseAbs().mean();
        });
    const Eigen::MatrixXd Km = gaussian_gram(data.X, data.X, sigma_m);
    const IrlsOut out = irls_lad(Km, data.y, lambda);
    LadResult result;
    result.model.theta = out.theta;
    result.model.sigma_m = sigma_m;
    result.model.train_x = data.X;
    result.model.lambda_reg = lambda;
    result.converged = out.converged;
    result.iterations = out.iterations;
    result.objective_trace = out.objective_trace;
    return result;
}

Eigen::VectorXd predict_ridge(const RidgeModel& model, const Eigen::MatrixXd& X) {
    if (X.cols() != model.train_x.cols()) throw DataError("predict_ridge: dimension mismatch");
    return gaussian_gram(X, model.train_x, model.sigma_m) * model.theta;
}

double KdeModel::normalization() const {
    const double d = static_cast<double>(train.d());
    return std::pow(2.0 * kPi, (d + 1.0) / 2.0) * h_y * std::pow(h_x, d);
}

double kde_joint(const KdeModel& model, double y, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (!(model.h_y > 0.0) || !(model.h_x > 0.0))
        throw ConfigError("kde_joint: bandwidths must be positive");
    if (x.size() != model.train.d()) throw DataError("kde_joint: dimension mismatch");
    const double n = static_cast<double>(model.train.n());
    double sum = 0.0;
    for (Eigen::Index l = 0; l < model.train.n(); ++l) {
        const double dy = y - model.train.y(l);
        const double dx2 = (x - model.train.X.row(l).transpose()).squaredNorm();
        sum += std::exp(-dy * dy / (2.0 * model.h_y * model.h_y)) *
               std::exp(-dx2 / (2.0 * model.h_x * model.h_x));
    }
    return sum / (n * model.normalization());
}

KdeGrid default_kde_grid(const Dataset& data) {
    const double n = static_cast<double>(data.n());
    const double joint_d = static_cast<double>(data.d()) + 1.0;
    const double factor = std::pow(4.0 / ((joint_d + 2.0) * n), 1.0 / (joint_d + 4.0));
    const double sd_y =
        std::sqrt((data.y.array() - data.y.mean()).square().sum() / n);
    double sd_x_acc = 0.0;
    for (Eigen::Index j = 0; j < data.d(); ++j)
        sd_x_acc += std::sqrt((data.X.col(j).array() - data.X.col(j).mean()).square().sum() / n);
    const double sd_x = sd_x_acc / static_cast<double>(data.d());

    KdeGrid grid;
    for (const double f : {0.25, 0.5, 1.0, 2.0, 4.0}) {
        grid.h_y_candidates.push_back(f * std::max(sd_y, 1e-12) * factor);
        grid.h_x_candidates.push_back(f * std::max(sd_x, 1e-12) * factor);
    }
    return grid;
}

std::pair<double, double> select_kde_bandwidths(const Dataset& data, const KdeGrid& grid) {
    if (grid.h_y_candidates.empty() || grid.h_x_candidates.empty())
        throw ConfigError("select_kde_bandwidths: empty grid");
    const Eigen::Index n = data.n();
    if (n < 2) throw DataError("select_kde_bandwidths: need at least two samples");
    const double nd = static_cast<double>(n);
    const double d = static_cast<double>(data.d());

    // Pairwise squared distances, computed once.
    Eigen::MatrixXd dy2(n, n), dx2(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const double dy = data.y(i) - data.y(j);
            dy2(i, j) = dy * dy;
            dx2(i, j) = (data.X.row(i) - data.X.row(j)).squaredNorm();
        }

    double best_score = std::numeric_limits<double>::infinity();
    double best_hy = grid.h_y_candidates.front(), best_hx = grid.h_x_candidates.front();
    bool found = false;
    for (const double hy : grid.h_y_candidates) {
        for (const double hx : grid.h_x_candidates) {
            if (!(hy > 0.0) || !(hx > 0.0)) throw ConfigError("kde bandwidths must be positive");
            const double Z = std::pow(2.0 * kPi, (d + 1.0) / 2.0) * hy * std::pow(hx, d);
            // integral(p^2): pairwise Gaussian with widths sqrt(2) h.
            const double Z2 = std::pow(2.0, (d + 1.0) / 2.0) * Z;
            double int_p2 = 0.0;
            double loo = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                double row_loo = 0.0;
                for (Eigen::Index j = 0; j < n; ++j) {
                    int_p2 += std::exp(-dy2(i, j) / (4.0 * hy * hy) - dx2(i, j) / (4.0 * hx * hx));
                    if (j != i)
                        row_loo +=
                            std::exp(-dy2(i, j) / (2.0 * hy * hy) - dx2(i, j) / (2.0 * hx * hx));
                }
                loo += row_loo / ((nd - 1.0) * Z);
            }
            int_p2 /= nd * nd * Z2;
            const double score = int_p2 - 2.0 / nd * loo;
            const bool better = !found || score < best_score ||
                                (score == best_score &&
                                 (hy < best_hy || (hy == best_hy && hx < best_hx)));
            if (better) {
                found = true;
                best_score = score;
                best_hy = hy;
                best_hx = hx;
            }
        }
    }
    return {best_hy, best_hx};
}

Eigen::MatrixXd build_H_kde(const Eigen::VectorXd& theta, const KdeModel& kde, double sigma_m) {
    const Eigen::Index n = kde.train.n();
    const Eigen::MatrixXd Km = gaussian_gram(kde.train.X, kde.train.X, sigma_m);
    const Eigen::MatrixXd Wx = gaussian_gram(kde.train.X, kde.train.X, kde.h_x);
    const Eigen::VectorXd f = Km * theta;
    Eigen::MatrixXd D = f.replicate(1, n) - kde.train.y.transpose().replicate(n, 1);
    const Eigen::MatrixXd Wy =
        (-D.array().square() / (2.0 * kde.h_y * kde.h_y)).exp().matrix();
    const Eigen::VectorXd c = Wy.cwiseProduct(Wx).rowwise().sum().cwiseSqrt();
    const Eigen::MatrixXd M = c.asDiagonal() * Km;
    Eigen::MatrixXd H = M.transpose() * M;
    H = 0.5 * (H + H.transpose()).eval();
    return H;
}

Eigen::VectorXd build_h_kde(const Eigen::VectorXd& theta, const KdeModel& kde, double sigma_m) {
    const Eigen::Index n = kde.train.n();
    const Eigen::MatrixXd Km = gaussian_gram(kde.train.X, kde.train.X, sigma_m);
    const Eigen::MatrixXd Wx = gaussian_gram(kde.train.X, kde.train.X, kde.h_x);
    const Eigen::VectorXd f = Km * theta;
    Eigen::MatrixXd D = f.replicate(1, n) - kde.train.y.transpose().replicate(n, 1);
    const Eigen::MatrixXd Wy =
        (-D.array().square() / (2.0 * kde.h_y * kde.h_y)).exp().matrix();
    return Km.transpose() * (Wy.cwiseProduct(Wx) * kde.train.y);
}

MrkdeResult fit_mrkde(const Dataset& data, const Eigen::VectorXd& theta0, const KdeModel& kde,
                      double sigma_m, const DmrkConfig& config) {
    if (theta0.size() != data.n()) throw DataError("fit_mrkde: theta0 length must equal n");
    const Eigen::Index n = data.n();
    const Eigen::MatrixXd Km = gaussian_gram(data.X, data.X, sigma_m);
    const Eigen::MatrixXd Wx = gaussian_gram(data.X, data.X, kde.h_x);
    const double init_scale = std::max(theta0.lpNorm<Eigen::Infinity>(), 1.0);

    MrkdeResult result;
    Eigen::VectorXd theta = theta0;
    for (int iter = 0; iter < config.max_iters; ++iter) {
        const Eigen::VectorXd f = Km * theta;
        Eigen::MatrixXd D = f.replicate(1, n) - data.y.transpose().replicate(n, 1);
        const Eigen::MatrixXd V =
            ((-D.array().square() / (2.0 * kde.h_y * kde.h_y)).exp() * Wx.array()).matrix();
        const Eigen::VectorXd c = V.rowwise().sum().cwiseSqrt();
        const Eigen::MatrixXd M = c.asDiagonal() * Km;
        Eigen::MatrixXd H = M.transpose() * M;
        H = 0.5 * (H + H.transpose()).eval();
        const Eigen::VectorXd h = Km.transpose() * (V * data.y);

        const double jitter =
            config.jitter.value_or(1e-8 * H.trace() / static_cast<double>(n));
        H.diagonal().array() += jitter;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        Eigen::VectorXd theta_next;
        if (ldlt.info() == Eigen::Success) theta_next = ldlt.solve(h);
        if (ldlt.info() != Eigen::Success ||
            (H * theta_next - h).norm() > 1e-8 * std::max(h.norm(), 1e-300)) {
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(H);
            theta_next = cod.solve(h);
            if ((H * theta_next - h).norm() > 1e-6 * std::max(h.norm(), 1e-300))
                throw NumericError("fit_mrkde: update system singular even after loading");
        }

        if (theta_next.lpNorm<Eigen::Infinity>() > 1e6 * init_scale)
            throw NumericError("fit_mrkde: iterate diverged");
        // Same stopping policy as the direct kernel method: coefficient or
        // fitted-value change below tolerance.
        const double delta = (theta_next - theta).lpNorm<Eigen::Infinity>();
        const double delta_f = (Km * (theta_next - theta)).lpNorm<Eigen::Infinity>();
        theta = theta_next;
        ++result.iterations;
        if (delta < config.tol || delta_f < config.tol) {
            result.converged = true;
            break;
        }
    }

    result.model.theta = theta;
    result.model.sigma_m = sigma_m;
    result.model.train_x = data.X;
    return result;
}

}  // namespace modereg
