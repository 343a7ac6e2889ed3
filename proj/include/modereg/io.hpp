#pragma once

#include <string>
#include <variant>

#include "modereg/baselines.hpp"
#include "modereg/dmrk.hpp"
#include "modereg/lsld.hpp"
#include "modereg/nn.hpp"

namespace modereg {

/// Regressor wrapper so the CLI can load any saved model and predict. The
/// standardizer, when present, maps raw inputs into the training units and
/// predictions back out.
struct NnModel {
    Mlp net;
    std::optional<Standardizer> standardizer;
};

using AnyModel = std::variant<DmrkModel, RidgeModel, LsldModel, NnModel>;

void save_model(const DmrkModel& model, const std::string& path, const std::string& kind = "dmrk");
void save_model(const RidgeModel& model, const std::string& path, const std::string& kind);
void save_model(const LsldModel& model, const std::string& path);
void save_model(const NnModel& model, const std::string& path, const std::string& kind = "dmrnn");

/// Dispatches on the file's "type" field.
AnyModel load_model(const std::string& path);

/// Predictions for any loaded model; LsldModel is rejected (it is a score
/// model, not a regressor).
Eigen::VectorXd predict_any(const AnyModel& model, const Eigen::MatrixXd& X);

std::string model_type(const AnyModel& model);

}  // namespace modereg
