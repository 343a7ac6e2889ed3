#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "modereg/data.hpp"
#include "modereg/rng.hpp"

namespace modereg {

enum class Act { Relu, Sigmoid, Identity };

struct Layer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;
    Act act = Act::Identity;
};

struct Mlp {
    std::vector<Layer> layers;

    /// dims = {in, hidden..., out}; acts has one entry per layer. Weights are
    /// Glorot-uniform, biases zero.
    static Mlp make(const std::vector<int>& dims, const std::vector<Act>& acts, CounterRng& rng);

    Eigen::Index input_dim() const { return layers.front().W.cols(); }
    Eigen::Index output_dim() const { return layers.back().W.rows(); }
    Eigen::Index param_count() const;
};

struct MlpCache {
    std::vector<Eigen::VectorXd> inputs;   // input to each layer
    std::vector<Eigen::VectorXd> preacts;  // W x + b per layer
};

struct MlpGrads {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;

    static MlpGrads zeros_like(const Mlp& net);
    void scale(double s);
};

/// Layered affine + activation evaluation; fills the cache when given.
Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::Ref<const Eigen::VectorXd>& x,
                            MlpCache* cache = nullptr);

/// Accumulates exact reverse-mode gradients of out_grad . output into grads.
/// Throws NumericError if the cache does not match the network.
void mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::VectorXd& out_grad,
                  MlpGrads& grads);

Eigen::VectorXd flatten_params(const Mlp& net);
void unflatten_params(Mlp& net, const Eigen::Ref<const Eigen::VectorXd>& flat);
Eigen::VectorXd flatten_grads(const MlpGrads& grads);

struct AdamState {
    Eigen::VectorXd m, v;
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    static AdamState init(Eigen::Index dim, double lr, double weight_decay = 0.0);
};

enum class StepDirection { Ascent, Descent };

/// Bias-corrected Adam with decoupled weight decay. Ascent flips the moment
/// step; the decay term always shrinks the parameters.
Eigen::VectorXd adam_step(const Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                          AdamState& state, StepDirection direction);

/// Gaussian-bump score model: r(y,x) = sum_k w_k exp(-(y - mu_k(x))^2 / (2 sigma_k^2)).
/// The centers come from one trunk network with K outputs; the widths are
/// fixed after construction, so r decays to zero for large |y| by shape.
struct ScoreNet {
    Eigen::VectorXd w;      // K trainable weights
    Eigen::VectorXd sigma;  // K fixed widths
    Mlp trunk;              // x -> K centers

    /// K widths log-spaced on [1, 10]; trunk d -> 2K -> K -> K with sigmoid
    /// hidden units. w starts at zero.
    static ScoreNet make(int d, int K, CounterRng& rng);

    Eigen::Index bumps() const { return w.size(); }
    Eigen::Index param_count() const { return w.size() + trunk.param_count(); }
};

/// Returns (r, dr/dy) at (y, x).
std::pair<double, double> score_eval(const ScoreNet& net, double y,
                                     const Eigen::Ref<const Eigen::VectorXd>& x);

enum class PretrainMode { Lad, Ls, None };

struct TrainConfig {
    int epochs = 500;
    int batch = 128;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    PretrainMode pretrain = PretrainMode::Lad;
    double weight_decay = 1e-4;
    int score_bumps = 0;  // 0 = pick 50 (d < 30) or 100 automatically
};

struct EpochRecord {
    std::string phase;
    int epoch = 0;
    double loss = 0.0;
    double holdout = 0.0;  // NaN when the phase has no held-out split
};

struct TrainLog {
    std::vector<EpochRecord> records;
};

/// Per-sample Fisher criterion r^2/2 + dr/dy and its exact gradient with
/// respect to (w, trunk parameters), flattened in that order. Returns the
/// loss; grad may be null.
double score_fisher_loss(const ScoreNet& net, double y,
                         const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::VectorXd* grad);

Eigen::VectorXd score_params_flat(const ScoreNet& net);
void score_set_params_flat(ScoreNet& net, const Eigen::Ref<const Eigen::VectorXd>& flat);

/// Minibatch training of the score model on the empirical Fisher criterion
/// (1/B) sum [ r^2/2 + dr/dy ]; a fifth of the data is held out and its loss
/// recorded each epoch. Throws NumericError on a non-finite loss.
ScoreNet train_score_net(const Dataset& data, ScoreNet net, const TrainConfig& config,
                         AdamState adam, TrainLog* log = nullptr);

/// Minibatch Adam on mean absolute (Lad) or squared (Ls) error.
Mlp pretrain_regressor(const Dataset& data, Mlp net, const TrainConfig& config, AdamState adam,
                       TrainLog* log = nullptr);

/// Regression network: hidden sizes (2d, d) with ReLU, floored at (16, 8) so
/// low-dimensional nets keep enough live units.
Mlp make_regressor(int d, CounterRng& rng);

/// Risk-ascent gradient over a batch: mean of (d f/d params) * r(f(x), x).
Eigen::VectorXd dmrnn_gradient(const Eigen::MatrixXd& X_batch, const Mlp& f_net,
                               const ScoreNet& score);

struct DmrnnResult {
    Mlp regressor;
    ScoreNet score;
    TrainLog log;
};

/// Full pipeline: pretrain the regressor, fit the score model, then run
/// Adam ascent on the plug-in risk gradient. Deterministic given the seed.
DmrnnResult fit_dmrnn(const Dataset& data, const TrainConfig& config);

}  // namespace modereg
