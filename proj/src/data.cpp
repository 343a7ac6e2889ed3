#include "modereg/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace modereg {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool parse_double(const std::string& s, double& out) {
    const char* begin = s.c_str();
    char* end = nullptr;
    out = std::strtod(begin, &end);
    if (end == begin) return false;
    while (*end != '\0') {
        if (!std::isspace(static_cast<unsigned char>(*end))) return false;
        ++end;
    }
    return true;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

// Shortest-exact decimal formatting for doubles.
std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Target parse_target(const std::string& s) {
    if (s == "M1" || s == "m1") return Target::M1;
    if (s == "M2" || s == "m2") return Target::M2;
    if (s == "M3" || s == "m3") return Target::M3;
    throw ConfigError("unknown target function: " + s);
}

Noise parse_noise(const std::string& s) {
    if (s == "gauss") return Noise::Gauss;
    if (s == "outlier") return Noise::Outlier;
    if (s == "skewed") return Noise::Skewed;
    if (s == "nonstationary") return Noise::Nonstationary;
    throw ConfigError("unknown noise family: " + s);
}

std::string to_string(Target t) {
    switch (t) {
        case Target::M1: return "M1";
        case Target::M2: return "M2";
        default: return "M3";
    }
}

std::string to_string(Noise n) {
    switch (n) {
        case Noise::Gauss: return "gauss";
        case Noise::Outlier: return "outlier";
        case Noise::Skewed: return "skewed";
        default: return "nonstationary";
    }
}

double true_f(Target target, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const double d = static_cast<double>(x.size());
    switch (target) {
        case Target::M1: return x.sum() / d;
        case Target::M2: return std::sin(kPi / d * x.cwiseAbs().sum());
        default: return x.squaredNorm() / d;
    }
}

double sample_noise(Noise noise, const Eigen::Ref<const Eigen::VectorXd>& x, CounterRng& rng) {
    switch (noise) {
        case Noise::Gauss: return rng.normal() * std::sqrt(0.5);
        case Noise::Outlier: {
            const double u = rng.next_double();
            if (u < 0.9) return rng.normal() * std::sqrt(0.5);
            return rng.uniform(1.0, 5.0);
        }
        case Noise::Skewed: return rng.exponential(0.5);
        default: {
            if (x.size() < 1) throw DataError("nonstationary noise needs at least one input dim");
            return std::abs(std::cos(kPi * x(0))) * rng.exponential(0.5);
        }
    }
}

Dataset gen_synthetic(const GeneratorSpec& spec) {
    if (spec.n < 1 || spec.d < 1) throw ConfigError("generator spec requires n >= 1 and d >= 1");
    CounterRng rng(spec.seed, stream_id("gen-synthetic"));
    Dataset data;
    data.X.resize(spec.n, spec.d);
    data.y.resize(spec.n);
    for (int i = 0; i < spec.n; ++i) {
        for (int j = 0; j < spec.d; ++j) data.X(i, j) = rng.uniform(-1.0, 1.0);
        data.y(i) = true_f(spec.target, data.X.row(i).transpose()) +
                    sample_noise(spec.noise, data.X.row(i).transpose(), rng);
    }
    data.meta.source = "synthetic";
    data.meta.seed = spec.seed;
    data.meta.gen = spec;
    return data;
}

namespace {

Dataset load_csv(const std::string& path, const std::string& target_column) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);

    std::string line;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> header;
    bool has_header = false;
    int lineno = 0;

    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty()) continue;
        auto cells = split(t, ',');
        if (lineno == 1) {
            // Header detection: any non-numeric cell in the first row.
            double tmp;
            bool all_numeric = true;
            for (const auto& c : cells)
                if (!parse_double(trim(c), tmp)) all_numeric = false;
            if (!all_numeric) {
                for (auto& c : cells) header.push_back(trim(c));
                has_header = true;
                continue;
            }
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            double v;
            if (!parse_double(trim(c), v))
                throw DataError("non-numeric cell at line " + std::to_string(lineno) + ": '" +
                                trim(c) + "'");
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw DataError("inconsistent column count at line " + std::to_string(lineno));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("no data rows in " + path);

    const std::size_t ncol = rows.front().size();
    std::size_t target_idx = ncol;  // sentinel
    if (has_header) {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == target_column) target_idx = j;
    }
    if (target_idx == ncol) {
        double idx;
        if (parse_double(target_column, idx) && idx >= 0 && idx < static_cast<double>(ncol))
            target_idx = static_cast<std::size_t>(idx);
    }
    if (target_idx == ncol)
        throw DataError("target column '" + target_column + "' not found in " + path);

    Dataset data;
    data.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ncol - 1));
    data.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Eigen::Index k = 0;
        for (std::size_t j = 0; j < ncol; ++j) {
            if (j == target_idx)
                data.y(static_cast<Eigen::Index>(i)) = rows[i][j];
            else
                data.X(static_cast<Eigen::Index>(i), k++) = rows[i][j];
        }
    }
    data.meta.source = "csv";
    data.meta.path = path;
    return data;
}

Dataset load_libsvm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);

    std::string line;
    std::vector<double> targets;
    std::vector<std::map<int, double>> feats;
    int max_idx = 0;
    int lineno = 0;

    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ss(t);
        std::string tok;
        if (!(ss >> tok)) continue;
        double target;
        if (!parse_double(tok, target))
            throw DataError("bad target at line " + std::to_string(lineno));
        std::map<int, double> row;
        while (ss >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos)
                throw DataError("bad feature token at line " + std::to_string(lineno) + ": '" +
                                tok + "'");
            double idx_d, val;
            if (!parse_double(tok.substr(0, colon), idx_d) || idx_d < 1 ||
                idx_d != std::floor(idx_d))
                throw DataError("bad feature index at line " + std::to_string(lineno));
            if (!parse_double(tok.substr(colon + 1), val))
                throw DataError("bad feature value at line " + std::to_string(lineno));
            const int idx = static_cast<int>(idx_d);
            max_idx = std::max(max_idx, idx);
            row[idx] = val;
        }
        targets.push_back(target);
        feats.push_back(std::move(row));
    }
    if (targets.empty()) throw DataError("no data rows in " + path);

    Dataset data;
    data.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(targets.size()), max_idx);
    data.y.resize(static_cast<Eigen::Index>(targets.size()));
    for (std::size_t i = 0; i < targets.size(); ++i) {
        data.y(static_cast<Eigen::Index>(i)) = targets[i];
        for (const auto& [idx, val] : feats[i])
            data.X(static_cast<Eigen::Index>(i), idx - 1) = val;
    }
    data.meta.source = "libsvm";
    data.meta.path = path;
    return data;
}

}  // namespace

Dataset load_table(const std::string& path, TableFormat format, const std::string& target_column) {
    return format == TableFormat::Csv ? load_csv(path, target_column) : load_libsvm(path);
}

void save_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path);
    for (Eigen::Index j = 0; j < data.d(); ++j) out << "x" << (j + 1) << ",";
    out << "y\n";
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        for (Eigen::Index j = 0; j < data.d(); ++j) out << format_double(data.X(i, j)) << ",";
        out << format_double(data.y(i)) << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

Standardizer Standardizer::fit(const Dataset& train) {
    const double n = static_cast<double>(train.n());
    if (train.n() < 2) throw DataError("standardizer needs at least two rows");
    Standardizer s;
    s.x_mean = train.X.colwise().mean();
    s.x_sd.resize(train.d());
    for (Eigen::Index j = 0; j < train.d(); ++j) {
        const double var = (train.X.col(j).array() - s.x_mean(j)).square().sum() / n;
        s.x_sd(j) = std::sqrt(var);
        if (!(s.x_sd(j) > 0.0))
            throw DataError("zero-variance input column " + std::to_string(j + 1));
    }
    s.y_mean = train.y.mean();
    s.y_sd = std::sqrt((train.y.array() - s.y_mean).square().sum() / n);
    if (!(s.y_sd > 0.0)) throw DataError("zero-variance target column");
    return s;
}

Dataset Standardizer::apply(const Dataset& data) const {
    if (data.d() != x_mean.size()) throw DataError("standardizer: dimension mismatch");
    Dataset out = data;
    for (Eigen::Index j = 0; j < data.d(); ++j)
        out.X.col(j) = (data.X.col(j).array() - x_mean(j)) / x_sd(j);
    out.y = (data.y.array() - y_mean) / y_sd;
    return out;
}

Eigen::VectorXd Standardizer::apply_y(const Eigen::VectorXd& y) const {
    return (y.array() - y_mean) / y_sd;
}

Eigen::VectorXd Standardizer::invert_predictions(const Eigen::VectorXd& pred_std) const {
    return pred_std.array() * y_sd + y_mean;
}

double mae_to_truth(const Eigen::VectorXd& predictions, const GeneratorSpec& spec,
                    const Eigen::MatrixXd& X_te) {
    if (predictions.size() != X_te.rows()) throw DataError("mae_to_truth: shape mismatch");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < X_te.rows(); ++i)
        sum += std::abs(predictions(i) - true_f(spec.target, X_te.row(i).transpose()));
    return sum / static_cast<double>(X_te.rows());
}

double surrogate_score(const Eigen::VectorXd& predictions, const Eigen::VectorXd& y_te,
                       double sigma) {
    if (predictions.size() != y_te.size()) throw DataError("surrogate_score: shape mismatch");
    if (!(sigma > 0.0)) throw ConfigError("surrogate_score: sigma must be positive");
    const double norm = 1.0 / std::sqrt(2.0 * kPi * sigma * sigma);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < y_te.size(); ++i) {
        const double r = y_te(i) - predictions(i);
        sum += norm * std::exp(-r * r / (2.0 * sigma * sigma));
    }
    return sum / static_cast<double>(y_te.size());
}

}  // namespace modereg
