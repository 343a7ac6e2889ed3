#include "modereg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace modereg {

namespace {

double activate(double v, Act act) {
    switch (act) {
        case Act::Relu: return v > 0.0 ? v : 0.0;
        case Act::Sigmoid: return 1.0 / (1.0 + std::exp(-v));
        default: return v;
    }
}

double activate_grad(double pre, Act act) {
    switch (act) {
        case Act::Relu: return pre > 0.0 ? 1.0 : 0.0;
        case Act::Sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-pre));
            return s * (1.0 - s);
        }
        default: return 1.0;
    }
}

std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, CounterRng& rng) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.bounded(i))]);
    return idx;
}

void check_finite(double loss, const char* phase, int epoch, int batch) {
    if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << phase << ": non-finite loss at epoch " << epoch << ", batch " << batch;
        throw NumericError(msg.str());
    }
}

}  // namespace

Mlp Mlp::make(const std::vector<int>& dims, const std::vector<Act>& acts, CounterRng& rng) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
        throw ConfigError("Mlp::make: dims/acts mismatch");
    Mlp net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer;
        const int fan_in = dims[l], fan_out = dims[l + 1];
        if (fan_in < 1 || fan_out < 1) throw ConfigError("Mlp::make: non-positive layer size");
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        layer.W.resize(fan_out, fan_in);
        for (Eigen::Index i = 0; i < layer.W.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.W.cols(); ++j) layer.W(i, j) = rng.uniform(-a, a);
        layer.b = Eigen::VectorXd::Zero(fan_out);
        layer.act = acts[l];
        net.layers.push_back(std::move(layer));
    }
    return net;
}

Eigen::Index Mlp::param_count() const {
    Eigen::Index count = 0;
    for (const auto& l : layers) count += l.W.size() + l.b.size();
    return count;
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
    MlpGrads g;
    for (const auto& l : net.layers) {
        g.dW.emplace_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
        g.db.emplace_back(Eigen::VectorXd::Zero(l.b.size()));
    }
    return g;
}

void MlpGrads::scale(double s) {
    for (auto& m : dW) m *= s;
    for (auto& v : db) v *= s;
}

Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::Ref<const Eigen::VectorXd>& x,
                            MlpCache* cache) {
    if (x.size() != net.input_dim()) throw DataError("mlp_forward: dimension mismatch");
    if (cache) {
        cache->inputs.clear();
        cache->preacts.clear();
    }
    Eigen::VectorXd cur = x;
    for (const auto& layer : net.layers) {
        if (cache) cache->inputs.push_back(cur);
        Eigen::VectorXd pre = layer.W * cur + layer.b;
        if (cache) cache->preacts.push_back(pre);
        cur.resize(pre.size());
        for (Eigen::Index i = 0; i < pre.size(); ++i) cur(i) = activate(pre(i), layer.act);
    }
    return cur;
}

void mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::VectorXd& out_grad,
                  MlpGrads& grads) {
    const std::size_t L = net.layers.size();
    if (cache.inputs.size() != L || cache.preacts.size() != L)
        throw NumericError("mlp_backward: stale cache");
    for (std::size_t l = 0; l < L; ++l)
        if (cache.inputs[l].size() != net.layers[l].W.cols() ||
            cache.preacts[l].size() != net.layers[l].W.rows())
            throw NumericError("mlp_backward: stale cache");
    if (out_grad.size() != net.output_dim()) throw DataError("mlp_backward: bad out_grad size");

    Eigen::VectorXd delta = out_grad;
    for (std::size_t l = L; l-- > 0;) {
        const Layer& layer = net.layers[l];
        Eigen::VectorXd dpre(delta.size());
        for (Eigen::Index i = 0; i < delta.size(); ++i)
            dpre(i) = delta(i) * activate_grad(cache.preacts[l](i), layer.act);
        grads.dW[l].noalias() += dpre * cache.inputs[l].transpose();
        grads.db[l] += dpre;
        if (l > 0) delta = layer.W.transpose() * dpre;
    }
}

Eigen::VectorXd flatten_params(const Mlp& net) {
    Eigen::VectorXd flat(net.param_count());
    Eigen::Index pos = 0;
    for (const auto& l : net.layers) {
        flat.segment(pos, l.W.size()) = Eigen::Map<const Eigen::VectorXd>(l.W.data(), l.W.size());
        pos += l.W.size();
        flat.segment(pos, l.b.size()) = l.b;
        pos += l.b.size();
    }
    return flat;
}

void unflatten_params(Mlp& net, const Eigen::Ref<const Eigen::VectorXd>& flat) {
    if (flat.size() != net.param_count()) throw DataError("unflatten_params: size mismatch");
    Eigen::Index pos = 0;
    for (auto& l : net.layers) {
        Eigen::Map<Eigen::VectorXd>(l.W.data(), l.W.size()) = flat.segment(pos, l.W.size());
        pos += l.W.size();
        l.b = flat.segment(pos, l.b.size());
        pos += l.b.size();
    }
}

Eigen::VectorXd flatten_grads(const MlpGrads& grads) {
    Eigen::Index total = 0;
    for (std::size_t l = 0; l < grads.dW.size(); ++l)
        total += grads.dW[l].size() + grads.db[l].size();
    Eigen::VectorXd flat(total);
    Eigen::Index pos = 0;
    for (std::size_t l = 0; l < grads.dW.size(); ++l) {
        flat.segment(pos, grads.dW[l].size()) =
            Eigen::Map<const Eigen::VectorXd>(grads.dW[l].data(), grads.dW[l].size());
        pos += grads.dW[l].size();
        flat.segment(pos, grads.db[l].size()) = grads.db[l];
        pos += grads.db[l].size();
    }
    return flat;
}

AdamState AdamState::init(Eigen::Index dim, double lr_, double weight_decay_) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(dim);
    s.v = Eigen::VectorXd::Zero(dim);
    s.lr = lr_;
    s.weight_decay = weight_decay_;
    return s;
}

Eigen::VectorXd adam_step(const Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                          AdamState& state, StepDirection direction) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw DataError("adam_step: shape mismatch");
    ++state.step;
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const Eigen::ArrayXd mhat = state.m.array() / bc1;
    const Eigen::ArrayXd vhat = state.v.array() / bc2;
    const double sign = direction == StepDirection::Descent ? -1.0 : 1.0;
    Eigen::VectorXd out =
        params.array() + sign * state.lr * mhat / (vhat.sqrt() + state.eps) -
        state.lr * state.weight_decay * params.array();
    return out;
}

ScoreNet ScoreNet::make(int d, int K, CounterRng& rng) {
    if (K < 1) throw ConfigError("ScoreNet::make: need at least one bump");
    ScoreNet net;
    net.w = Eigen::VectorXd::Zero(K);
    net.sigma.resize(K);
    for (int k = 0; k < K; ++k)
        net.sigma(k) = K == 1 ? 1.0
                              : std::pow(10.0, static_cast<double>(k) / static_cast<double>(K - 1));
    net.trunk = Mlp::make({d, 2 * K, K, K}, {Act::Sigmoid, Act::Sigmoid, Act::Identity}, rng);
    return net;
}

std::pair<double, double> score_eval(const ScoreNet& net, double y,
                                     const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::VectorXd mu = mlp_forward(net.trunk, x);
    double r = 0.0, dr = 0.0;
    for (Eigen::Index k = 0; k < net.bumps(); ++k) {
        const double s2 = net.sigma(k) * net.sigma(k);
        const double t = (y - mu(k)) / s2;
        const double e = std::exp(-(y - mu(k)) * (y - mu(k)) / (2.0 * s2));
        r += net.w(k) * e;
        dr += -net.w(k) * t * e;
    }
    return {r, dr};
}

namespace {

// Per-sample Fisher loss and gradients for the score model. Returns the loss;
// accumulates d/dw into gw and backpropagates d/dmu through the trunk.
double score_sample_grad(const ScoreNet& net, double y, const Eigen::Ref<const Eigen::VectorXd>& x,
                         Eigen::VectorXd& gw, MlpGrads& gtrunk) {
    MlpCache cache;
    const Eigen::VectorXd mu = mlp_forward(net.trunk, x, &cache);
    const Eigen::Index K = net.bumps();
    Eigen::VectorXd e(K), t(K);
    double r = 0.0, dr = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
        const double s2 = net.sigma(k) * net.sigma(k);
        t(k) = (y - mu(k)) / s2;
        e(k) = std::exp(-(y - mu(k)) * (y - mu(k)) / (2.0 * s2));
        r += net.w(k) * e(k);
        dr += -net.w(k) * t(k) * e(k);
    }
    const double loss = 0.5 * r * r + dr;

    Eigen::VectorXd dmu(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        const double s2 = net.sigma(k) * net.sigma(k);
        // d loss / d w_k: r e_k from the squared term, -t_k e_k from dr/dy.
        gw(k) += r * e(k) - t(k) * e(k);
        // d loss / d mu_k: r w_k e_k t_k + w_k e_k (1/s2 - t_k^2).
        dmu(k) = r * net.w(k) * e(k) * t(k) + net.w(k) * e(k) * (1.0 / s2 - t(k) * t(k));
    }
    mlp_backward(net.trunk, cache, dmu, gtrunk);
    return loss;
}

double score_dataset_loss(const ScoreNet& net, const Dataset& data,
                          const std::vector<Eigen::Index>& idx) {
    double sum = 0.0;
    for (const Eigen::Index i : idx) {
        const auto [r, dr] = score_eval(net, data.y(i), data.X.row(i).transpose());
        sum += 0.5 * r * r + dr;
    }
    return idx.empty() ? 0.0 : sum / static_cast<double>(idx.size());
}

}  // namespace

Eigen::VectorXd score_params_flat(const ScoreNet& net) {
    Eigen::VectorXd flat(net.param_count());
    flat.head(net.w.size()) = net.w;
    flat.tail(net.trunk.param_count()) = flatten_params(net.trunk);
    return flat;
}

void score_set_params_flat(ScoreNet& net, const Eigen::Ref<const Eigen::VectorXd>& flat) {
    net.w = flat.head(net.w.size());
    unflatten_params(net.trunk, flat.tail(net.trunk.param_count()));
}

double score_fisher_loss(const ScoreNet& net, double y,
                         const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::VectorXd* grad) {
    if (!grad) {
        const auto [r, dr] = score_eval(net, y, x);
        return 0.5 * r * r + dr;
    }
    Eigen::VectorXd gw = Eigen::VectorXd::Zero(net.bumps());
    MlpGrads gtrunk = MlpGrads::zeros_like(net.trunk);
    const double loss = score_sample_grad(net, y, x, gw, gtrunk);
    grad->resize(net.param_count());
    grad->head(net.bumps()) = gw;
    grad->tail(net.trunk.param_count()) = flatten_grads(gtrunk);
    return loss;
}

ScoreNet train_score_net(const Dataset& data, ScoreNet net, const TrainConfig& config,
                         AdamState adam, TrainLog* log) {
    if (config.epochs < 1 || config.batch < 1)
        throw ConfigError("train_score_net: epochs and batch size must be positive");
    const Eigen::Index n = data.n();
    CounterRng split_rng(config.seed, stream_id("score-holdout"));
    std::vector<Eigen::Index> order = shuffled_indices(n, split_rng);
    const Eigen::Index n_holdout = n / 5;
    std::vector<Eigen::Index> holdout(order.begin(), order.begin() + n_holdout);
    std::vector<Eigen::Index> train(order.begin() + n_holdout, order.end());
    if (train.empty()) throw DataError("train_score_net: empty training split");

    if (adam.m.size() != net.param_count())
        adam = AdamState::init(net.param_count(), config.lr, config.weight_decay);

    CounterRng shuffle_rng(config.seed, stream_id("score-shuffle"));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<Eigen::Index> perm = train;
        for (std::size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1], perm[static_cast<std::size_t>(shuffle_rng.bounded(i))]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < perm.size(); start += config.batch) {
            const std::size_t stop = std::min(perm.size(), start + config.batch);
            const double bsize = static_cast<double>(stop - start);
            Eigen::VectorXd gw = Eigen::VectorXd::Zero(net.bumps());
            MlpGrads gtrunk = MlpGrads::zeros_like(net.trunk);
            double batch_loss = 0.0;
            for (std::size_t p = start; p < stop; ++p)
                batch_loss +=
                    score_sample_grad(net, data.y(perm[p]), data.X.row(perm[p]).transpose(), gw,
                                      gtrunk);
            batch_loss /= bsize;
            check_finite(batch_loss, "train_score_net", epoch, batches);
            gw /= bsize;
            gtrunk.scale(1.0 / bsize);

            Eigen::VectorXd g(net.param_count());
            g.head(net.w.size()) = gw;
            g.tail(net.trunk.param_count()) = flatten_grads(gtrunk);
            score_set_params_flat(net,
                                  adam_step(score_params_flat(net), g, adam,
                                            StepDirection::Descent));
            epoch_loss += batch_loss;
            ++batches;
        }
        if (log) {
            EpochRecord rec;
            rec.phase = "score";
            rec.epoch = epoch;
            rec.loss = epoch_loss / std::max(batches, 1);
            rec.holdout = holdout.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : score_dataset_loss(net, data, holdout);
            log->records.push_back(rec);
        }
    }
    return net;
}

Mlp pretrain_regressor(const Dataset& data, Mlp net, const TrainConfig& config, AdamState adam,
                       TrainLog* log) {
    if (config.pretrain == PretrainMode::None) return net;
    if (config.epochs < 1 || config.batch < 1)
        throw ConfigError("pretrain_regressor: epochs and batch size must be positive");
    const bool lad = config.pretrain == PretrainMode::Lad;
    const Eigen::Index n = data.n();
    if (adam.m.size() != net.param_count())
        adam = AdamState::init(net.param_count(), config.lr, config.weight_decay);

    CounterRng shuffle_rng(config.seed, stream_id("pretrain-shuffle"));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<Eigen::Index> perm = shuffled_indices(n, shuffle_rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < perm.size(); start += config.batch) {
            const std::size_t stop = std::min(perm.size(), start + config.batch);
            const double bsize = static_cast<double>(stop - start);
            MlpGrads grads = MlpGrads::zeros_like(net);
            double batch_loss = 0.0;
            for (std::size_t p = start; p < stop; ++p) {
                const Eigen::Index i = perm[p];
                MlpCache cache;
                const double f = mlp_forward(net, data.X.row(i).transpose(), &cache)(0);
                const double resid = data.y(i) - f;
                double dloss_df;
                if (lad) {
                    batch_loss += std::abs(resid);
                    dloss_df = resid > 0.0 ? -1.0 : (resid < 0.0 ? 1.0 : 0.0);
                } else {
                    batch_loss += resid * resid;
                    dloss_df = -2.0 * resid;
                }
                Eigen::VectorXd og(1);
                og(0) = dloss_df;
                mlp_backward(net, cache, og, grads);
            }
            batch_loss /= bsize;
            check_finite(batch_loss, "pretrain_regressor", epoch, batches);
            grads.scale(1.0 / bsize);
            unflatten_params(net, adam_step(flatten_params(net), flatten_grads(grads), adam,
                                            StepDirection::Descent));
            epoch_loss += batch_loss;
            ++batches;
        }
        if (log) {
            EpochRecord rec;
            rec.phase = lad ? "pretrain-lad" : "pretrain-ls";
            rec.epoch = epoch;
            rec.loss = epoch_loss / std::max(batches, 1);
            rec.holdout = std::numeric_limits<double>::quiet_NaN();
            log->records.push_back(rec);
        }
    }
    return net;
}

Eigen::VectorXd dmrnn_gradient(const Eigen::MatrixXd& X_batch, const Mlp& f_net,
                               const ScoreNet& score) {
    if (X_batch.cols() != f_net.input_dim()) throw DataError("dmrnn_gradient: shape mismatch");
    if (X_batch.rows() < 1) throw DataError("dmrnn_gradient: empty batch");
    MlpGrads grads = MlpGrads::zeros_like(f_net);
    for (Eigen::Index b = 0; b < X_batch.rows(); ++b) {
        MlpCache cache;
        const double f = mlp_forward(f_net, X_batch.row(b).transpose(), &cache)(0);
        const auto [r, dr] = score_eval(score, f, X_batch.row(b).transpose());
        Eigen::VectorXd og(1);
        og(0) = r;
        mlp_backward(f_net, cache, og, grads);
    }
    grads.scale(1.0 / static_cast<double>(X_batch.rows()));
    return flatten_grads(grads);
}

Mlp make_regressor(int d, CounterRng& rng) {
    const int h1 = std::max(2 * d, 16);
    const int h2 = std::max(d, 8);
    return Mlp::make({d, h1, h2, 1}, {Act::Relu, Act::Relu, Act::Identity}, rng);
}

DmrnnResult fit_dmrnn(const Dataset& data, const TrainConfig& config) {
    const int d = static_cast<int>(data.d());
    const int K = config.score_bumps > 0 ? config.score_bumps : (d < 30 ? 50 : 100);

    CounterRng init_f(config.seed, stream_id("nn-init-regressor"));
    Mlp f_net = make_regressor(d, init_f);
    CounterRng init_s(config.seed, stream_id("nn-init-score"));
    ScoreNet score = ScoreNet::make(d, K, init_s);

    DmrnnResult result;
    f_net = pretrain_regressor(data, std::move(f_net), config,
                               AdamState::init(f_net.param_count(), config.lr,
                                               config.weight_decay),
                               &result.log);
    score = train_score_net(data, std::move(score), config,
                            AdamState::init(score.param_count(), config.lr, config.weight_decay),
                            &result.log);

    AdamState adam = AdamState::init(f_net.param_count(), config.lr, config.weight_decay);
    CounterRng shuffle_rng(config.seed, stream_id("ascent-shuffle"));
    const Eigen::Index n = data.n();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<Eigen::Index> perm = shuffled_indices(n, shuffle_rng);
        double score_abs = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < perm.size(); start += config.batch) {
            const std::size_t stop = std::min(perm.size(), start + config.batch);
            Eigen::MatrixXd Xb(static_cast<Eigen::Index>(stop - start), data.d());
            for (std::size_t p = start; p < stop; ++p)
                Xb.row(static_cast<Eigen::Index>(p - start)) = data.X.row(perm[p]);
            const Eigen::VectorXd g = dmrnn_gradient(Xb, f_net, score);
            check_finite(g.norm(), "fit_dmrnn", epoch, batches);
            unflatten_params(f_net,
                             adam_step(flatten_params(f_net), g, adam, StepDirection::Ascent));
            score_abs += g.lpNorm<Eigen::Infinity>();
            ++batches;
        }
        EpochRecord rec;
        rec.phase = "ascent";
        rec.epoch = epoch;
        rec.loss = score_abs / std::max(batches, 1);  // gradient magnitude proxy
        rec.holdout = std::numeric_limits<double>::quiet_NaN();
        result.log.records.push_back(rec);
    }

    result.regressor = std::move(f_net);
    result.score = std::move(score);
    return result;
}

}  // namespace modereg
