#include "modereg/io.hpp"

#include <fstream>

#include <json.hpp>

namespace modereg {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw DataError("model file: expected non-empty matrix");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = static_cast<Eigen::Index>(j.front().size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[i].size()) != cols)
            throw DataError("model file: ragged matrix");
        for (Eigen::Index jcol = 0; jcol < cols; ++jcol) m(i, jcol) = j[i][jcol].get<double>();
    }
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
    return v;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad model file ") + path + ": " + e.what());
    }
    return j;
}

const char* act_name(Act a) {
    switch (a) {
        case Act::Relu: return "relu";
        case Act::Sigmoid: return "sigmoid";
        default: return "identity";
    }
}

Act act_from(const std::string& s) {
    if (s == "relu") return Act::Relu;
    if (s == "sigmoid") return Act::Sigmoid;
    if (s == "identity") return Act::Identity;
    throw DataError("model file: unknown activation '" + s + "'");
}

json mlp_to_json(const Mlp& net) {
    json layers = json::array();
    for (const auto& l : net.layers) {
        json layer;
        layer["act"] = act_name(l.act);
        layer["in"] = l.W.cols();
        layer["out"] = l.W.rows();
        layers.push_back(std::move(layer));
    }
    json j;
    j["layers"] = std::move(layers);
    j["params"] = vector_to_json(flatten_params(net));
    return j;
}

Mlp mlp_from_json(const json& j) {
    Mlp net;
    for (const auto& layer : j.at("layers")) {
        Layer l;
        l.W = Eigen::MatrixXd::Zero(layer.at("out").get<Eigen::Index>(),
                                    layer.at("in").get<Eigen::Index>());
        l.b = Eigen::VectorXd::Zero(layer.at("out").get<Eigen::Index>());
        l.act = act_from(layer.at("act").get<std::string>());
        net.layers.push_back(std::move(l));
    }
    unflatten_params(net, vector_from_json(j.at("params")));
    return net;
}

}  // namespace

void save_model(const DmrkModel& model, const std::string& path, const std::string& kind) {
    json j;
    j["type"] = kind;
    j["version"] = kVersion;
    j["sigma_m"] = model.sigma_m;
    j["theta"] = vector_to_json(model.theta);
    j["train_x"] = matrix_to_json(model.train_x);
    write_json(j, path);
}

void save_model(const RidgeModel& model, const std::string& path, const std::string& kind) {
    json j;
    j["type"] = kind;
    j["version"] = kVersion;
    j["sigma_m"] = model.sigma_m;
    j["lambda_reg"] = model.lambda_reg;
    j["theta"] = vector_to_json(model.theta);
    j["train_x"] = matrix_to_json(model.train_x);
    write_json(j, path);
}

void save_model(const LsldModel& model, const std::string& path) {
    json j;
    j["type"] = "lsld";
    j["version"] = kVersion;
    j["sigma_y"] = model.params.sigma_y;
    j["sigma_x"] = model.params.sigma_x;
    j["sigma_m"] = model.params.sigma_m;
    j["lambda"] = model.lambda;
    j["beta_const"] = model.beta_const;
    j["alphas"] = vector_to_json(model.alphas);
    j["train_y"] = vector_to_json(model.train_y);
    j["train_x"] = matrix_to_json(model.train_x);
    write_json(j, path);
}

void save_model(const NnModel& model, const std::string& path, const std::string& kind) {
    json j = mlp_to_json(model.net);
    j["type"] = kind;
    j["version"] = kVersion;
    if (model.standardizer) {
        const Standardizer& s = *model.standardizer;
        json js;
        js["x_mean"] = vector_to_json(s.x_mean);
        js["x_sd"] = vector_to_json(s.x_sd);
        js["y_mean"] = s.y_mean;
        js["y_sd"] = s.y_sd;
        j["standardizer"] = std::move(js);
    }
    write_json(j, path);
}

AnyModel load_model(const std::string& path) {
    const json j = read_json(path);
    const std::string type = j.at("type").get<std::string>();
    if (type == "dmrk" || type == "mrkde") {
        DmrkModel m;
        m.sigma_m = j.at("sigma_m").get<double>();
        m.theta = vector_from_json(j.at("theta"));
        m.train_x = matrix_from_json(j.at("train_x"));
        if (m.theta.size() != m.train_x.rows()) throw DataError("model file: theta/train_x mismatch");
        return m;
    }
    if (type == "krr" || type == "lad") {
        RidgeModel m;
        m.sigma_m = j.at("sigma_m").get<double>();
        m.lambda_reg = j.at("lambda_reg").get<double>();
        m.theta = vector_from_json(j.at("theta"));
        m.train_x = matrix_from_json(j.at("train_x"));
        if (m.theta.size() != m.train_x.rows()) throw DataError("model file: theta/train_x mismatch");
        return m;
    }
    if (type == "lsld") {
        LsldModel m;
        m.params.sigma_y = j.at("sigma_y").get<double>();
        m.params.sigma_x = j.at("sigma_x").get<double>();
        m.params.sigma_m = j.at("sigma_m").get<double>();
        m.lambda = j.at("lambda").get<double>();
        m.beta_const = j.at("beta_const").get<double>();
        m.alphas = vector_from_json(j.at("alphas"));
        m.train_y = vector_from_json(j.at("train_y"));
        m.train_x = matrix_from_json(j.at("train_x"));
        return m;
    }
    if (type == "dmrnn" || type == "nn-ls" || type == "nn-lad") {
        NnModel m;
        m.net = mlp_from_json(j);
        if (j.contains("standardizer")) {
            Standardizer s;
            s.x_mean = vector_from_json(j["standardizer"].at("x_mean"));
            s.x_sd = vector_from_json(j["standardizer"].at("x_sd"));
            s.y_mean = j["standardizer"].at("y_mean").get<double>();
            s.y_sd = j["standardizer"].at("y_sd").get<double>();
            m.standardizer = s;
        }
        return m;
    }
    throw DataError("model file: unknown type '" + type + "'");
}

Eigen::VectorXd predict_any(const AnyModel& model, const Eigen::MatrixXd& X) {
    if (const auto* m = std::get_if<DmrkModel>(&model)) return predict(*m, X);
    if (const auto* m = std::get_if<RidgeModel>(&model)) return predict_ridge(*m, X);
    if (const auto* m = std::get_if<NnModel>(&model)) {
        Eigen::VectorXd out(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            Eigen::VectorXd x = X.row(i).transpose();
            if (m->standardizer)
                x = ((x - m->standardizer->x_mean).array() / m->standardizer->x_sd.array())
                        .matrix();
            out(i) = mlp_forward(m->net, x)(0);
        }
        if (m->standardizer) return m->standardizer->invert_predictions(out);
        return out;
    }
    throw DataError("predict: a score model cannot produce predictions");
}

std::string model_type(const AnyModel& model) {
    if (std::holds_alternative<DmrkModel>(model)) return "dmrk";
    if (std::holds_alternative<RidgeModel>(model)) return "ridge";
    if (std::holds_alternative<NnModel>(model)) return "nn";
    return "lsld";
}

}  // namespace modereg
