#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "modereg/baselines.hpp"
#include "modereg/bench.hpp"

using namespace modereg;

namespace {

Dataset linear_data(int n, std::uint64_t seed, double noise_sd = 0.0) {
    CounterRng rng(seed, stream_id("baseline-linear"));
    Dataset data;
    data.X.resize(n, 1);
    data.y.resize(n);
    for (int i = 0; i < n; ++i) {
        data.X(i, 0) = rng.uniform(-1, 1);
        data.y(i) = data.X(i, 0) + noise_sd * rng.normal();
    }
    data.meta.seed = seed;
    return data;
}

}  // namespace

TEST_CASE("make_folds") {
    const auto folds = make_folds(23, 5, 7);
    CHECK(folds.size() == 23);
    int counts[5] = {0, 0, 0, 0, 0};
    for (const int f : folds) {
        REQUIRE(f >= 0);
        REQUIRE(f < 5);
        ++counts[f];
    }
    for (const int c : counts) CHECK(c >= 4);  // balanced up to remainder
    CHECK(make_folds(23, 5, 7) == folds);
    CHECK(make_folds(23, 5, 8) != folds);
}

TEST_CASE("fit_krr") {
    SUBCASE("noiseless linear data is interpolated") {
        const Dataset data = linear_data(50, 3);
        const double sigma_m = median_trick(data.X);
        const RidgeModel m = fit_krr(data, sigma_m, default_lambda_grid(), 5);
        const Dataset test = linear_data(200, 4);
        const double mae = (predict_ridge(m, test.X) - test.y).cwiseAbs().mean();
        CHECK(mae < 0.05);
    }

    SUBCASE("huge regularization shrinks to zero") {
        const Dataset data = linear_data(30, 5, 0.1);
        const RidgeModel m = fit_krr(data, 0.5, {1e9}, 5);
        CHECK(predict_ridge(m, data.X).cwiseAbs().maxCoeff() < 1e-6);
    }

    SUBCASE("solution satisfies the normal system") {
        const Dataset data = linear_data(40, 6, 0.3);
        const double sigma_m = median_trick(data.X);
        const RidgeModel m = fit_krr(data, sigma_m, default_lambda_grid(), 5);
        const Eigen::MatrixXd Km = gaussian_gram(data.X, data.X, sigma_m);
        Eigen::MatrixXd A = Km;
        A.diagonal().array() += 40.0 * m.lambda_reg;
        CHECK((A * m.theta - data.y).norm() <= 1e-8 * data.y.norm());
    }
}

TEST_CASE("fit_lad") {
    SUBCASE("symmetric targets stabilize inside the hull") {
        // Pairs y = +-1 at shared inputs: any prediction in [-1,1] is optimal.
        Dataset data;
        data.X.resize(8, 1);
        data.y.resize(8);
        for (int i = 0; i < 4; ++i) {
            data.X(2 * i, 0) = data.X(2 * i + 1, 0) = -0.6 + 0.4 * i;
            data.y(2 * i) = 1.0;
            data.y(2 * i + 1) = -1.0;
        }
        data.meta.seed = 1;
        const LadResult res = fit_lad(data, 0.5, {1e-4}, 2);
        const Eigen::VectorXd pred = predict_ridge(res.model, data.X);
        CHECK(pred.cwiseAbs().maxCoeff() <= 1.0 + 1e-6);
        CHECK(res.iterations <= 200);
    }

    SUBCASE("objective is non-increasing across accepted sweeps") {
        const Dataset data = gen_synthetic({Target::M1, Noise::Outlier, 1, 80, 11});
        const LadResult res = fit_lad(data, median_trick(data.X), default_lambda_grid(), 5);
        REQUIRE(res.objective_trace.size() >= 2);
        for (std::size_t i = 1; i < res.objective_trace.size(); ++i)
            CHECK(res.objective_trace[i] <= res.objective_trace[i - 1] + 1e-10);
    }

    SUBCASE("robust to outliers where squared loss is not") {
        const GeneratorSpec spec{Target::M1, Noise::Outlier, 1, 200, 13};
        const Dataset data = gen_synthetic(spec);
        const double sigma_m = median_trick(data.X);
        const LadResult lad = fit_lad(data, sigma_m, default_lambda_grid(), 5);
        const RidgeModel krr = fit_krr(data, sigma_m, default_lambda_grid(), 5);
        const Dataset test =
            gen_synthetic({spec.target, spec.noise, 1, 2000, test_seed_for(spec.seed)});
        const double mae_lad = mae_to_truth(predict_ridge(lad.model, test.X), spec, test.X);
        const double mae_krr = mae_to_truth(predict_ridge(krr, test.X), spec, test.X);
        CHECK(mae_lad < mae_krr);
    }
}

TEST_CASE("kde_joint") {
    Dataset train;
    train.X.resize(1, 1);
    train.X << 0.4;
    train.y.resize(1);
    train.y << -0.2;
    KdeModel model{0.3, 0.7, train};

    SUBCASE("self evaluation is 1/(nZ)") {
        const double Z = std::pow(2.0 * M_PI, 1.0) * 0.3 * 0.7;
        CHECK(kde_joint(model, -0.2, train.X.row(0).transpose()) ==
              doctest::Approx(1.0 / Z).epsilon(1e-12));
        CHECK(model.normalization() == doctest::Approx(Z).epsilon(1e-12));
    }

    SUBCASE("integrates to one") {
        // Simpson over a (y, x) box of +-6 widths around the sample.
        const int N = 401;
        const double ylo = -0.2 - 6 * 0.3, yhi = -0.2 + 6 * 0.3;
        const double xlo = 0.4 - 6 * 0.7, xhi = 0.4 + 6 * 0.7;
        const double hy = (yhi - ylo) / (N - 1), hx = (xhi - xlo) / (N - 1);
        auto wsimp = [&](int k) { return k == 0 || k == N - 1 ? 1.0 : (k % 2 ? 4.0 : 2.0); };
        double acc = 0.0;
        for (int i = 0; i < N; ++i) {
            Eigen::VectorXd x(1);
            x << xlo + i * hx;
            for (int j = 0; j < N; ++j)
                acc += wsimp(i) * wsimp(j) * kde_joint(model, ylo + j * hy, x);
        }
        acc *= hy * hx / 9.0;
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-3));
    }

    SUBCASE("translation equivariance") {
        // Dyadic coordinates keep the shift exact in binary.
        Dataset base;
        base.X = Eigen::MatrixXd::Constant(1, 1, 0.5);
        base.y = Eigen::VectorXd::Constant(1, -0.25);
        Dataset shifted = base;
        shifted.X.array() += 2.5;
        shifted.y.array() += 2.5;
        KdeModel m1{0.3, 0.7, base};
        KdeModel m2{0.3, 0.7, shifted};
        Eigen::VectorXd x(1), x2(1);
        x << 0.125;
        x2 << 2.625;
        CHECK(kde_joint(m1, 0.0, x) == kde_joint(m2, 2.5, x2));
    }

    SUBCASE("nonnegative everywhere") {
        CounterRng rng(17, stream_id("kde-pos"));
        for (int i = 0; i < 50; ++i) {
            Eigen::VectorXd x(1);
            x << rng.uniform(-10, 10);
            CHECK(kde_joint(model, rng.uniform(-10, 10), x) >= 0.0);
        }
    }
}

TEST_CASE("select_kde_bandwidths") {
    SUBCASE("single cell returns that cell") {
        const Dataset data = gen_synthetic({Target::M1, Noise::Gauss, 1, 20, 19});
        KdeGrid grid;
        grid.h_y_candidates = {0.4};
        grid.h_x_candidates = {0.6};
        const auto [hy, hx] = select_kde_bandwidths(data, grid);
        CHECK(hy == 0.4);
        CHECK(hx == 0.6);
    }

    SUBCASE("criterion matches brute-force integration and explicit LOO") {
        const Dataset data = gen_synthetic({Target::M1, Noise::Gauss, 1, 8, 23});
        const double hy = 0.45, hx = 0.8;
        const double n = 8.0;

        // integral of p-hat squared by 2-D Simpson over a generous box.
        KdeModel model{hy, hx, data};
        const int N = 801;
        const double ylo = data.y.minCoeff() - 8 * hy, yhi = data.y.maxCoeff() + 8 * hy;
        const double xlo = data.X.minCoeff() - 8 * hx, xhi = data.X.maxCoeff() + 8 * hx;
        const double sy = (yhi - ylo) / (N - 1), sx = (xhi - xlo) / (N - 1);
        auto wsimp = [&](int k) { return k == 0 || k == N - 1 ? 1.0 : (k % 2 ? 4.0 : 2.0); };
        double int_p2 = 0.0;
        for (int i = 0; i < N; ++i) {
            Eigen::VectorXd x(1);
            x << xlo + i * sx;
            for (int j = 0; j < N; ++j) {
                const double p = kde_joint(model, ylo + j * sy, x);
                int_p2 += wsimp(i) * wsimp(j) * p * p;
            }
        }
        int_p2 *= sy * sx / 9.0;

        // Explicit leave-one-out sum.
        double loo = 0.0;
        for (int l = 0; l < 8; ++l) {
            Dataset sub;
            sub.X.resize(7, 1);
            sub.y.resize(7);
            int k = 0;
            for (int i = 0; i < 8; ++i) {
                if (i == l) continue;
                sub.X.row(k) = data.X.row(i);
                sub.y(k) = data.y(i);
                ++k;
            }
            loo += kde_joint(KdeModel{hy, hx, sub}, data.y(l), data.X.row(l).transpose());
        }
        const double lscv_oracle = int_p2 - 2.0 / n * loo;

        // The selector must reproduce this value for a one-cell grid; expose
        // it through selection order: a cell with a strictly better score
        // wins, so compare scores via a two-cell race against a bad cell.
        KdeGrid race;
        race.h_y_candidates = {hy, 1e3};
        race.h_x_candidates = {hx};
        const auto [sel_hy, sel_hx] = select_kde_bandwidths(data, race);
        CHECK(sel_hy == hy);

        // And reproduce the criterion directly for the exact-value check.
        Eigen::MatrixXd dy2(8, 8), dx2(8, 8);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                dy2(i, j) = (data.y(i) - data.y(j)) * (data.y(i) - data.y(j));
                dx2(i, j) = (data.X(i, 0) - data.X(j, 0)) * (data.X(i, 0) - data.X(j, 0));
            }
        const double Z = std::pow(2.0 * M_PI, 1.0) * hy * hx;
        const double Z2 = std::pow(2.0, 1.0) * Z;
        double ip2 = 0.0, loo2 = 0.0;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                ip2 += std::exp(-dy2(i, j) / (4 * hy * hy) - dx2(i, j) / (4 * hx * hx));
                if (i != j)
                    loo2 += std::exp(-dy2(i, j) / (2 * hy * hy) - dx2(i, j) / (2 * hx * hx));
            }
        ip2 /= n * n * Z2;
        loo2 /= (n - 1.0) * Z;
        const double lscv_closed = ip2 - 2.0 / n * loo2;
        CHECK(lscv_closed == doctest::Approx(lscv_oracle).epsilon(1e-6));
    }

    SUBCASE("selected h_y shrinks with sample size") {
        int non_increasing = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const Dataset small = gen_synthetic({Target::M1, Noise::Gauss, 1, 50, 100 + seed});
            const Dataset large = gen_synthetic({Target::M1, Noise::Gauss, 1, 400, 100 + seed});
            const auto [hy_s, hx_s] = select_kde_bandwidths(small, default_kde_grid(small));
            const auto [hy_l, hx_l] = select_kde_bandwidths(large, default_kde_grid(large));
            if (hy_l <= hy_s) ++non_increasing;
        }
        CHECK(non_increasing >= 8);
    }
}

TEST_CASE("mrkde") {
    const Dataset data = gen_synthetic({Target::M1, Noise::Skewed, 3, 30, 29});
    KdeModel kde;
    std::tie(kde.h_y, kde.h_x) = select_kde_bandwidths(data, default_kde_grid(data));
    kde.train = data;
    const double sigma_m = 0.3 * median_trick(data.X);

    SUBCASE("gradient identity against the density derivative") {
        CounterRng rng(31, stream_id("mrkde-grad"));
        const Eigen::Index n = data.n();
        const Eigen::MatrixXd Km = gaussian_gram(data.X, data.X, sigma_m);
        for (int trial = 0; trial < 5; ++trial) {
            Eigen::VectorXd theta(n);
            for (Eigen::Index i = 0; i < n; ++i) theta(i) = rng.uniform(-1, 1);
            const Eigen::MatrixXd H = build_H_kde(theta, kde, sigma_m);
            const Eigen::VectorXd h = build_h_kde(theta, kde, sigma_m);
            const double scale =
                1.0 / (static_cast<double>(n) * static_cast<double>(n) * kde.h_y * kde.h_y *
                       kde.normalization());
            const Eigen::VectorXd lhs = scale * (h - H * theta);

            // (1/n) sum_i d/dy p-hat(f_i, x_i) k_m(x_i), with the density
            // derivative written out per training point.
            const Eigen::VectorXd f = Km * theta;
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                double dp = 0.0;
                for (Eigen::Index l = 0; l < n; ++l) {
                    const double dy = f(i) - data.y(l);
                    const double dx2 =
                        (data.X.row(i) - data.X.row(l)).squaredNorm();
                    dp += (data.y(l) - f(i)) / (kde.h_y * kde.h_y) *
                          std::exp(-dy * dy / (2 * kde.h_y * kde.h_y)) *
                          std::exp(-dx2 / (2 * kde.h_x * kde.h_x));
                }
                dp /= static_cast<double>(n) * kde.normalization();
                rhs += dp * Km.row(i).transpose();
            }
            rhs /= static_cast<double>(n);
            CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10);
        }
    }

    SUBCASE("fixed point re-steps to itself") {
        CounterRng rng(37, stream_id("mrkde-fp"));
        Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(data.n());
        DmrkConfig cfg;
        cfg.tol = 1e-12;
        cfg.max_iters = 3000;
        const MrkdeResult res = fit_mrkde(data, theta0, kde, sigma_m, cfg);
        REQUIRE(res.converged);
        DmrkConfig one;
        one.max_iters = 1;
        one.tol = 1e300;  // force exactly one sweep
        const MrkdeResult again = fit_mrkde(data, res.model.theta, kde, sigma_m, one);
        CHECK((again.model.theta - res.model.theta).lpNorm<Eigen::Infinity>() <= 1e-8);
    }
}
