#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "modereg/io.hpp"

using namespace modereg;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* p = std::getenv("MODEREG_CLI");
    REQUIRE(p != nullptr);
    return p;
}

struct RunResult {
    int exit_code;
    std::string out;
};

RunResult run(const std::string& args) {
    const fs::path outfile = fs::temp_directory_path() / "modereg_cli_stdout.txt";
    const std::string cmd = cli_path() + " " + args + " > " + outfile.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(outfile);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WEXITSTATUS(status), ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / "modereg_cli_test") {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("gen is byte-deterministic and round trips") {
    TempDir tmp;
    const std::string a = tmp / "a.csv", b = tmp / "b.csv";
    CHECK(run("gen --target M1 --noise gauss --dim 2 --n 50 --seed 7 --out " + a).exit_code == 0);
    CHECK(run("gen --target M1 --noise gauss --dim 2 --n 50 --seed 7 --out " + b).exit_code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a).substr(0, 9) == "x1,x2,y\n-");

    const Dataset reloaded = load_table(a, TableFormat::Csv, "y");
    const Dataset original = gen_synthetic({Target::M1, Noise::Gauss, 2, 50, 7});
    CHECK((reloaded.X - original.X).cwiseAbs().maxCoeff() == 0.0);
    CHECK((reloaded.y - original.y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit writes byte-identical models for identical configs") {
    TempDir tmp;
    const std::string m1 = tmp / "m1.json", m2 = tmp / "m2.json";
    const std::string base = "fit --method dmrk --target M1 --noise skewed --dim 1 --n 40 --seed 3 --out ";
    CHECK(run(base + m1).exit_code == 0);
    CHECK(run(base + m2).exit_code == 0);
    CHECK(slurp(m1) == slurp(m2));
    CHECK(slurp(m1 + ".log.json") == slurp(m2 + ".log.json"));

    SUBCASE("dmrk log carries the ascent trace and selected widths") {
        const auto log = nlohmann::json::parse(slurp(m1 + ".log.json"));
        bool found_loocv = false, found_trace = false;
        for (const auto& stage : log.at("stages")) {
            if (stage.at("name") == "loocv") {
                found_loocv = true;
                CHECK(stage.at("sigma_y").get<double>() > 0);
                CHECK(stage.at("sigma_x").get<double>() > 0);
            }
            if (stage.at("name") == "fixed-point") {
                found_trace = true;
                CHECK(stage.at("d_hat_trace").size() ==
                      stage.at("iterations").get<std::size_t>());
            }
        }
        CHECK(found_loocv);
        CHECK(found_trace);
    }
}

TEST_CASE("mrkde log records the selected bandwidths") {
    TempDir tmp;
    const std::string m = tmp / "mrkde.json";
    CHECK(run("fit --method mrkde --target M1 --noise gauss --dim 1 --n 40 --seed 5 --out " + m)
              .exit_code == 0);
    const auto log = nlohmann::json::parse(slurp(m + ".log.json"));
    bool found = false;
    for (const auto& stage : log.at("stages"))
        if (stage.at("name") == "kde-bandwidths") {
            found = true;
            CHECK(stage.at("h_y").get<double>() > 0);
            CHECK(stage.at("h_x").get<double>() > 0);
        }
    CHECK(found);
}

TEST_CASE("predict matches the in-process pipeline") {
    TempDir tmp;
    const std::string data = tmp / "data.csv", model = tmp / "krr.json";
    const std::string pred = tmp / "pred.csv";
    REQUIRE(run("gen --target M2 --noise gauss --dim 1 --n 60 --seed 11 --out " + data)
                .exit_code == 0);
    REQUIRE(run("fit --method krr --data " + data + " --seed 11 --out " + model).exit_code == 0);

    const RunResult r = run("predict --model " + model + " --data " + data +
                            " --out " + pred + " --metric mae_truth --truth-target M2");
    CHECK(r.exit_code == 0);

    const Dataset d = load_table(data, TableFormat::Csv, "y");
    const AnyModel m = load_model(model);
    const Eigen::VectorXd expect = predict_any(m, d.X);
    GeneratorSpec spec;
    spec.target = Target::M2;
    spec.d = 1;
    const double mae = mae_to_truth(expect, spec, d.X);

    const auto metric = nlohmann::json::parse(r.out.substr(r.out.find('{')));
    CHECK(metric.at("mae_truth").get<double>() == doctest::Approx(mae).epsilon(1e-12));

    // Prediction file agrees with the in-process values to printed precision.
    std::ifstream pf(pred);
    std::string line;
    std::getline(pf, line);
    CHECK(line == "prediction");
    for (Eigen::Index i = 0; i < expect.size(); ++i) {
        REQUIRE(std::getline(pf, line));
        CHECK(std::stod(line) == expect(i));
    }
}

TEST_CASE("zero-coefficient model predicts all zeros") {
    TempDir tmp;
    const std::string model = tmp / "zero.json", data = tmp / "d.csv", pred = tmp / "p.csv";
    REQUIRE(run("gen --target M1 --noise gauss --dim 1 --n 10 --seed 2 --out " + data)
                .exit_code == 0);
    DmrkModel zero;
    zero.sigma_m = 0.5;
    zero.train_x = gen_synthetic({Target::M1, Noise::Gauss, 1, 10, 2}).X;
    zero.theta = Eigen::VectorXd::Zero(10);
    save_model(zero, model);
    REQUIRE(run("predict --model " + model + " --data " + data + " --out " + pred).exit_code ==
            0);
    std::ifstream pf(pred);
    std::string line;
    std::getline(pf, line);
    int rows = 0;
    while (std::getline(pf, line)) {
        CHECK(std::stod(line) == 0.0);
        ++rows;
    }
    CHECK(rows == 10);
}

TEST_CASE("surrogate metric honors the sigma override") {
    TempDir tmp;
    const std::string data = tmp / "data.csv", model = tmp / "lad.json", pred = tmp / "p.csv";
    REQUIRE(run("gen --target M1 --noise skewed --dim 1 --n 50 --seed 13 --out " + data)
                .exit_code == 0);
    REQUIRE(run("fit --method lad --data " + data + " --seed 13 --out " + model).exit_code == 0);

    const Dataset d = load_table(data, TableFormat::Csv, "y");
    const AnyModel m = load_model(model);
    const Eigen::VectorXd p = predict_any(m, d.X);

    for (const double sigma : {0.01, 1.0}) {
        const RunResult r = run("predict --model " + model + " --data " + data + " --out " +
                                pred + " --metric surrogate --sigma " + std::to_string(sigma));
        CHECK(r.exit_code == 0);
        const auto metric = nlohmann::json::parse(r.out.substr(r.out.find('{')));
        CHECK(metric.at("surrogate").get<double>() ==
              doctest::Approx(surrogate_score(p, d.y, sigma)).epsilon(1e-9));
    }
}

TEST_CASE("benchmark runs a tiny matrix deterministically") {
    TempDir tmp;
    const std::string r1 = tmp / "r1.json", r2 = tmp / "r2.json";
    const std::string base =
        "benchmark --methods krr,lad --targets M1 --noises gauss --dims 1 --n 40 --nte 200 "
        "--seeds 0..2 --jobs 2 --out ";
    CHECK(run(base + r1).exit_code == 0);
    CHECK(run(base + r2).exit_code == 0);
    CHECK(slurp(r1) == slurp(r2));
    const auto report = nlohmann::json::parse(slurp(r1));
    CHECK(report.at("cells").size() == 2);
    CHECK(report.at("metric") == "mae_truth");
    for (const auto& cell : report.at("cells")) {
        CHECK(cell.at("per_seed").size() == 3);
        CHECK(!cell.contains("wall_clock_sec"));
    }
}

TEST_CASE("exit codes by failure category") {
    TempDir tmp;
    SUBCASE("config") {
        CHECK(run("fit --method not-a-method").exit_code == 2);
        CHECK(run("benchmark --seeds '' --out x.json").exit_code == 2);
    }
    SUBCASE("data") {
        const std::string bad = tmp / "bad.csv";
        std::ofstream(bad) << "x1,y\n1,oops\n";
        CHECK(run("fit --method krr --data " + bad + " --out " + (tmp / "m.json")).exit_code ==
              3);
    }
    SUBCASE("io") {
        CHECK(run("predict --model /nonexistent/m.json --data /nonexistent/d.csv").exit_code ==
              5);
    }
    SUBCASE("help exits zero") { CHECK(run("--help").exit_code == 0); }
}
