#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuseqa/metrics.hpp"
#include "fuseqa/rng.hpp"
#include "fuseqa/taxonomy.hpp"

namespace fuseqa {

using FeatureVector = std::vector<double>;
using ProbVector = std::vector<double>;
using ThresholdVector = std::vector<double>;

// Probabilities are clipped to [kProbClip, 1-kProbClip] inside the loss so
// log(0) cannot occur. The backward pass differentiates the clipped loss,
// i.e. the gradient is zero where the clip is active.
inline constexpr double kProbClip = 1e-7;

struct TrainConfig {
    double learning_rate = 0.3;
    int epochs = 100;
    int batch_size = 32;
    std::uint64_t seed = 0;
    bool weighted = true;
    int hidden_width = 64;
};

// One-hidden-layer-or-deeper perceptron; hidden layers use the rectifier,
// the output layer a logistic sigmoid per class.
struct MlpModel {
    std::vector<int> layer_sizes;               // [d_in, hidden..., d_out]
    std::vector<std::vector<double>> weights;   // per layer, row-major: out x in
    std::vector<std::vector<double>> biases;    // per layer: out

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }

    bool operator==(const MlpModel&) const = default;
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// -(1/N) * sum_j w_j * [y_j log p_j + (1-y_j) log(1-p_j)]
inline double weighted_bce_loss(const ProbVector& p, const LabelSet& y, std::span<const double> w) {
    const std::size_t n = p.size();
    if (y.size() != n || w.size() != n) throw std::invalid_argument("weighted_bce_loss: length mismatch");
    double loss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double pc = std::clamp(p[j], kProbClip, 1.0 - kProbClip);
        const double yj = y.test(j) ? 1.0 : 0.0;
        loss -= w[j] * (yj * std::log(pc) + (1.0 - yj) * std::log(1.0 - pc));
    }
    return loss / static_cast<double>(n);
}

// Glorot-uniform initialization; the draw order (layer, row, column) is
// part of the determinism contract.
inline MlpModel init_mlp(std::span<const int> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2) throw std::invalid_argument("init_mlp: need at least input and output layers");
    for (int s : layer_sizes)
        if (s <= 0) throw std::invalid_argument("init_mlp: layer sizes must be positive");
    MlpModel m;
    m.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
    Rng rng(derive_seed(seed, {kStreamInit}));
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const int fan_in = layer_sizes[l], fan_out = layer_sizes[l + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
        for (double& x : w) x = rng.uniform(-bound, bound);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(static_cast<std::size_t>(fan_out), 0.0);
    }
    return m;
}

namespace detail {

// Forward pass keeping every layer's activations; activations[0] is the
// input, the last entry holds the sigmoid outputs.
inline void forward_all(const MlpModel& m, const FeatureVector& x, std::vector<std::vector<double>>& activations) {
    const std::size_t layers = m.weights.size();
    activations.resize(layers + 1);
    activations[0] = x;
    for (std::size_t l = 0; l < layers; ++l) {
        const int in = m.layer_sizes[l], out = m.layer_sizes[l + 1];
        auto& a = activations[l + 1];
        a.assign(static_cast<std::size_t>(out), 0.0);
        const std::vector<double>& prev = activations[l];
        const double* w = m.weights[l].data();
        for (int o = 0; o < out; ++o) {
            double z = m.biases[l][static_cast<std::size_t>(o)];
            const double* row = w + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) z += row[i] * prev[static_cast<std::size_t>(i)];
            a[static_cast<std::size_t>(o)] = (l + 1 == layers) ? sigmoid(z) : std::max(0.0, z);
        }
    }
}

struct Gradients {
    std::vector<std::vector<double>> weights, biases;

    void init_like(const MlpModel& m) {
        weights.clear();
        biases.clear();
        for (std::size_t l = 0; l < m.weights.size(); ++l) {
            weights.emplace_back(m.weights[l].size(), 0.0);
            biases.emplace_back(m.biases[l].size(), 0.0);
        }
    }

    void zero() {
        for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
        for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
    }
};

// Accumulates the gradient of weighted_bce_loss for one sample. delta holds
// dLoss/dz; at the sigmoid output that is w_j*(p-y)/N wherever the clip is
// inactive, zero where it saturates.
inline void backward_one(const MlpModel& m, const std::vector<std::vector<double>>& activations,
                         const LabelSet& y, std::span<const double> w, Gradients& grads) {
    const std::size_t layers = m.weights.size();
    const int n_out = m.output_dim();
    std::vector<double> delta(static_cast<std::size_t>(n_out));
    const std::vector<double>& p = activations[layers];
    for (int j = 0; j < n_out; ++j) {
        const double pj = p[static_cast<std::size_t>(j)];
        if (pj <= kProbClip || pj >= 1.0 - kProbClip) {
            delta[static_cast<std::size_t>(j)] = 0.0;
        } else {
            const double yj = y.test(static_cast<std::size_t>(j)) ? 1.0 : 0.0;
            delta[static_cast<std::size_t>(j)] = w[static_cast<std::size_t>(j)] * (pj - yj) / n_out;
        }
    }
    for (std::size_t l = layers; l-- > 0;) {
        const int in = m.layer_sizes[l], out = m.layer_sizes[l + 1];
        const std::vector<double>& prev = activations[l];
        for (int o = 0; o < out; ++o) {
            const double d = delta[static_cast<std::size_t>(o)];
            grads.biases[l][static_cast<std::size_t>(o)] += d;
            double* grow = grads.weights[l].data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) grow[i] += d * prev[static_cast<std::size_t>(i)];
        }
        if (l == 0) break;
        std::vector<double> prev_delta(static_cast<std::size_t>(in), 0.0);
        const double* wmat = m.weights[l].data();
        for (int i = 0; i < in; ++i) {
            if (prev[static_cast<std::size_t>(i)] <= 0.0) continue;  // rectifier gate
            double s = 0.0;
            for (int o = 0; o < out; ++o) s += wmat[static_cast<std::size_t>(o) * in + i] * delta[static_cast<std::size_t>(o)];
            prev_delta[static_cast<std::size_t>(i)] = s;
        }
        delta = std::move(prev_delta);
    }
}

}  // namespace detail

inline ProbVector predict_probs(const MlpModel& m, const FeatureVector& f) {
    if (static_cast<int>(f.size()) != m.input_dim())
        throw std::invalid_argument("predict_probs: input dimension mismatch");
    std::vector<std::vector<double>> acts;
    detail::forward_all(m, f, acts);
    return acts.back();
}

// Mini-batch gradient descent with a fixed learning rate on the weighted
// binary cross-entropy. Fully deterministic: initialization, the per-epoch
// shuffle and the summation order are all fixed by the seed.
inline MlpModel train_mlp(std::span<const int> layer_sizes, std::span<const FeatureVector> features,
                          std::span<const LabelSet> labels, std::span<const double> w, const TrainConfig& cfg) {
    if (features.empty() || features.size() != labels.size())
        throw std::invalid_argument("train: dataset must be non-empty and aligned");
    const std::size_t d_in = features.front().size();
    const std::size_t n_out = labels.front().size();
    if (d_in != static_cast<std::size_t>(layer_sizes.front()) ||
        n_out != static_cast<std::size_t>(layer_sizes.back()))
        throw std::invalid_argument("train: layer sizes do not match the data");
    for (const auto& f : features)
        if (f.size() != d_in) throw std::invalid_argument("train: inconsistent feature dimensions");
    for (const auto& y : labels)
        if (y.size() != n_out) throw std::invalid_argument("train: inconsistent label dimensions");
    if (w.size() != n_out) throw std::invalid_argument("train: weight dimension mismatch");
    if (cfg.learning_rate <= 0.0 || cfg.batch_size <= 0 || cfg.epochs < 0)
        throw std::invalid_argument("train: invalid config");

    MlpModel m = init_mlp(layer_sizes, cfg.seed);
    const std::vector<double> unit(n_out, 1.0);
    std::span<const double> weights_used = cfg.weighted ? w : std::span<const double>(unit);

    std::vector<std::size_t> order(features.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, {kStreamShuffle}));

    detail::Gradients grads;
    grads.init_like(m);
    std::vector<std::vector<double>> acts;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            grads.zero();
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                detail::forward_all(m, features[i], acts);
                detail::backward_one(m, acts, labels[i], weights_used, grads);
            }
            const double step = cfg.learning_rate / static_cast<double>(end - start);
            for (std::size_t l = 0; l < m.weights.size(); ++l) {
                for (std::size_t k = 0; k < m.weights[l].size(); ++k) m.weights[l][k] -= step * grads.weights[l][k];
                for (std::size_t k = 0; k < m.biases[l].size(); ++k) m.biases[l][k] -= step * grads.biases[l][k];
            }
        }
    }
    return m;
}

// Single-modality head: [d_in, hidden, N].
inline MlpModel train_classifier(std::span<const FeatureVector> features, std::span<const LabelSet> labels,
                                 std::span<const double> w, const TrainConfig& cfg) {
    if (features.empty() || labels.empty()) throw std::invalid_argument("train_classifier: empty dataset");
    const std::vector<int> sizes = {static_cast<int>(features.front().size()), cfg.hidden_width,
                                    static_cast<int>(labels.front().size())};
    return train_mlp(sizes, features, labels, w, cfg);
}

inline FeatureVector concat(const FeatureVector& a, const FeatureVector& b) {
    FeatureVector out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

// Early fusion: one capacity-matched head over the concatenated inputs.
inline MlpModel early_fuse_train(std::span<const FeatureVector> features_a, std::span<const FeatureVector> features_b,
                                 std::span<const LabelSet> labels, std::span<const double> w,
                                 const TrainConfig& cfg) {
    if (features_a.size() != features_b.size())
        throw std::invalid_argument("early_fuse_train: modality lists must be aligned");
    std::vector<FeatureVector> joined(features_a.size());
    for (std::size_t i = 0; i < features_a.size(); ++i) joined[i] = concat(features_a[i], features_b[i]);
    return train_classifier(joined, labels, w, cfg);
}

// Late fusion: an MLP of shape [2N, hidden, N] over the concatenated
// per-modality sigmoid outputs.
inline MlpModel late_fuse_train(std::span<const ProbVector> probs_a, std::span<const ProbVector> probs_b,
                                std::span<const LabelSet> labels, std::span<const double> w,
                                const TrainConfig& cfg) {
    if (probs_a.size() != probs_b.size() || probs_a.empty())
        throw std::invalid_argument("late_fuse_train: probability lists must be aligned and non-empty");
    const std::size_t n = labels.empty() ? 0 : labels.front().size();
    for (std::size_t i = 0; i < probs_a.size(); ++i)
        if (probs_a[i].size() != n || probs_b[i].size() != n)
            throw std::invalid_argument("late_fuse_train: probability vectors must have length N");
    std::vector<FeatureVector> joined(probs_a.size());
    for (std::size_t i = 0; i < probs_a.size(); ++i) joined[i] = concat(probs_a[i], probs_b[i]);
    const std::vector<int> sizes = {static_cast<int>(2 * n), cfg.hidden_width, static_cast<int>(n)};
    return train_mlp(sizes, joined, labels, w, cfg);
}

inline ProbVector late_fuse_predict(const MlpModel& m, const ProbVector& p_a, const ProbVector& p_b) {
    if (static_cast<int>(p_a.size() + p_b.size()) != m.input_dim())
        throw std::invalid_argument("late_fuse_predict: input dimension mismatch");
    return predict_probs(m, concat(p_a, p_b));
}

// bit_j = 1 iff p_j >= t_j (inclusive at the boundary)
inline LabelSet apply_thresholds(const ProbVector& p, const ThresholdVector& t) {
    if (p.size() != t.size()) throw std::invalid_argument("apply_thresholds: length mismatch");
    LabelSet out(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) out.set(j, p[j] >= t[j]);
    return out;
}

namespace detail {

inline double f_beta_at_threshold(std::span<const ProbVector> probs, std::span<const LabelSet> labels,
                                  std::size_t j, double t, double beta) {
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs[i][j] >= t;
        const bool gt = labels[i].test(j);
        if (pred && gt) ++tp;
        else if (pred && !gt) ++fp;
        else if (!pred && gt) ++fn;
    }
    const double p = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    return f_beta(p, r, beta);
}

}  // namespace detail

// Per class, the grid threshold {g, 2g, ..., 1-g} maximizing per-class
// F_beta on the validation data. Ties go to the value closest to 0.5, then
// to the lower one, so a class with no signal falls back to 0.5.
inline ThresholdVector optimize_thresholds(std::span<const ProbVector> probs, std::span<const LabelSet> labels,
                                           double beta, double grid_step) {
    if (probs.empty() || probs.size() != labels.size())
        throw std::invalid_argument("optimize_thresholds: validation data must be aligned and non-empty");
    if (!(grid_step > 0.0 && grid_step < 1.0)) throw std::invalid_argument("optimize_thresholds: bad grid step");
    const std::size_t n = probs.front().size();
    const int k_max = static_cast<int>(std::floor((1.0 - grid_step) / grid_step + 1e-9));
    ThresholdVector out(n, 0.5);
    for (std::size_t j = 0; j < n; ++j) {
        double best_t = grid_step, best_f = -1.0;
        for (int k = 1; k <= k_max; ++k) {
            const double t = k * grid_step;
            const double f = detail::f_beta_at_threshold(probs, labels, j, t, beta);
            const bool better =
                f > best_f ||
                (f == best_f && (std::abs(t - 0.5) < std::abs(best_t - 0.5) ||
                                 (std::abs(t - 0.5) == std::abs(best_t - 0.5) && t < best_t)));
            if (better) {
                best_f = f;
                best_t = t;
            }
        }
        out[j] = best_t;
    }
    return out;
}

// Comparison mode: one shared threshold maximizing macro F_beta.
inline ThresholdVector optimize_global_threshold(std::span<const ProbVector> probs, std::span<const LabelSet> labels,
                                                 double beta, double grid_step) {
    if (probs.empty() || probs.size() != labels.size())
        throw std::invalid_argument("optimize_global_threshold: validation data must be aligned and non-empty");
    if (!(grid_step > 0.0 && grid_step < 1.0))
        throw std::invalid_argument("optimize_global_threshold: bad grid step");
    const std::size_t n = probs.front().size();
    const int k_max = static_cast<int>(std::floor((1.0 - grid_step) / grid_step + 1e-9));
    double best_t = grid_step, best_f = -1.0;
    for (int k = 1; k <= k_max; ++k) {
        const double t = k * grid_step;
        double macro = 0.0;
        for (std::size_t j = 0; j < n; ++j) macro += detail::f_beta_at_threshold(probs, labels, j, t, beta);
        macro /= static_cast<double>(n);
        const bool better =
            macro > best_f ||
            (macro == best_f && (std::abs(t - 0.5) < std::abs(best_t - 0.5) ||
                                 (std::abs(t - 0.5) == std::abs(best_t - 0.5) && t < best_t)));
        if (better) {
            best_f = macro;
            best_t = t;
        }
    }
    return ThresholdVector(n, best_t);
}

// Mean batch loss; the quantity whose gradients the training step follows.
inline double batch_loss(const MlpModel& m, std::span<const FeatureVector> features,
                         std::span<const LabelSet> labels, std::span<const double> w) {
    double total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i)
        total += weighted_bce_loss(predict_probs(m, features[i]), labels[i], w);
    return total / static_cast<double>(features.size());
}

// Compares analytic parameter gradients against central finite differences
// (h = 1e-5); returns the max relative error over all parameters.
inline double gradient_check(const MlpModel& m, std::span<const FeatureVector> features,
                             std::span<const LabelSet> labels, std::span<const double> w) {
    if (features.empty() || features.size() != labels.size())
        throw std::invalid_argument("gradient_check: batch must be aligned and non-empty");
    detail::Gradients grads;
    grads.init_like(m);
    std::vector<std::vector<double>> acts;
    for (std::size_t i = 0; i < features.size(); ++i) {
        detail::forward_all(m, features[i], acts);
        detail::backward_one(m, acts, labels[i], w, grads);
    }
    const double inv_batch = 1.0 / static_cast<double>(features.size());

    const double h = 1e-5;
    double max_rel = 0.0;
    MlpModel probe = m;
    auto check_param = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = batch_loss(probe, features, labels, w);
        param = saved - h;
        const double down = batch_loss(probe, features, labels, w);
        param = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    };
    for (std::size_t l = 0; l < probe.weights.size(); ++l) {
        for (std::size_t k = 0; k < probe.weights[l].size(); ++k)
            check_param(probe.weights[l][k], grads.weights[l][k] * inv_batch);
        for (std::size_t k = 0; k < probe.biases[l].size(); ++k)
            check_param(probe.biases[l][k], grads.biases[l][k] * inv_batch);
    }
    return max_rel;
}

// --- model file: JSON with layer sizes, row-major weights and biases ------

inline nlohmann::json model_to_json(const MlpModel& m) {
    return {{"layer_sizes", m.layer_sizes},
            {"weights", m.weights},
            {"biases", m.biases},
            {"hidden_activation", "relu"},
            {"output_activation", "sigmoid"}};
}

inline MlpModel model_from_json(const nlohmann::json& doc) {
    MlpModel m;
    m.layer_sizes = doc.at("layer_sizes").get<std::vector<int>>();
    m.weights = doc.at("weights").get<std::vector<std::vector<double>>>();
    m.biases = doc.at("biases").get<std::vector<std::vector<double>>>();
    if (doc.value("hidden_activation", "relu") != std::string("relu") ||
        doc.value("output_activation", "sigmoid") != std::string("sigmoid"))
        throw std::invalid_argument("model_from_json: unsupported activation tags");
    if (m.weights.size() + 1 != m.layer_sizes.size() || m.biases.size() != m.weights.size())
        throw std::invalid_argument("model_from_json: inconsistent layer shapes");
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        const auto rows = static_cast<std::size_t>(m.layer_sizes[l + 1]);
        const auto cols = static_cast<std::size_t>(m.layer_sizes[l]);
        if (m.weights[l].size() != rows * cols || m.biases[l].size() != rows)
            throw std::invalid_argument("model_from_json: parameter shapes do not match layer sizes");
    }
    return m;
}

inline void save_model(const MlpModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model file: " + path);
    out << model_to_json(m).dump(2) << '\n';
}

inline MlpModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    return model_from_json(nlohmann::json::parse(in));
}

}  // namespace fuseqa
