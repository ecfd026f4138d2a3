#pragma once

#include "hsq/rng.hpp"
#include "hsq/tag_semantics.hpp"
#include "hsq/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace hsq::hypersphere {

using tag_semantics::SemanticSphere;

// Single learnable layer r = tanh(W v) / ||tanh(W v)||_2 mapping V-dim
// features onto the D-dim semantic hypersphere. With normalize = false the
// division is skipped and every cosine downstream becomes an inner product.
struct TransformLayer {
    Mat weights;  // D x V
    double epsilon_norm = 1e-12;
    bool normalize = true;

    Eigen::Index semantic_dim() const { return weights.rows(); }
    Eigen::Index feature_dim() const { return weights.cols(); }
};

TransformLayer init_layer(Eigen::Index semantic_dim, Eigen::Index feature_dim,
                          std::uint64_t seed, bool normalize = true);

Vec forward(const TransformLayer& layer, const Vec& feature);

// Embeds each column; returns D x N.
Mat forward_all(const TransformLayer& layer, const Mat& features, int threads = 0);

struct TrainConfig {
    double gamma = 1.0;
    double lambda = 1e-3;
    int negatives = 1000;  // K_n, clamped to the available non-positives
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 1;        // embedding epochs per outer alternation
    int alternations = 30;
    std::uint64_t seed = 42;
    bool staged_mode = false;
    bool normalize = true;
    int threads = 0;
};

// The indices of the min(K_n, |S \ S_n|) non-positive tags with the largest
// cosine to r; ties to the smaller index. `positives` must be sorted.
std::vector<TagIndex> hard_negatives(const Vec& r, const SemanticSphere& sphere,
                                     const std::vector<TagIndex>& positives, int count);

// Delta = 2^(1-gamma) * (1 - cos)^gamma, clamped at a zero base.
double adaptive_margin_from_cos(double cos_pos_neg, double gamma);
double adaptive_margin(const Vec& s_pos, const Vec& s_neg, double gamma);

double margin_loss(const Vec& r, const SemanticSphere& sphere,
                   const std::vector<TagIndex>& positives,
                   const std::vector<TagIndex>& negatives, double gamma);

// Sum over all sphere tags of (cos(s, r) - cos(s, r_hat))^2. A zero-norm
// reconstruction contributes cos := 0 terms and bumps the flag counter.
double quantization_cosine_loss(const SemanticSphere& sphere, const Vec& r, const Vec& r_hat,
                                std::size_t* zero_recon_flags = nullptr);

struct GradientAccumulator {
    Mat grad;  // d(sum L + lambda Q)/dW, D x V
    double margin_loss = 0.0;
    double quant_loss = 0.0;
    std::size_t images = 0;
    std::size_t empty_negative_sets = 0;
    std::size_t zero_recon_flags = 0;
};

struct TrainData {
    Mat features;                                // V x N, all images
    std::vector<ImageId> trainable;              // columns with non-empty tag sets
    std::vector<std::vector<TagIndex>> tag_sets; // aligned with trainable
};

TrainData make_train_data(const Mat& features, const SemanticSphere& sphere);

// Analytic gradient of sum_n (L_n + lambda Q_n) over the batch w.r.t. W.
// `reconstructions` holds column b's quantizer reconstruction (aligned with
// `batch`); pass nullptr to drop the quantization term (stage one).
GradientAccumulator total_gradient(const std::vector<std::uint32_t>& batch,
                                   const TrainData& data, const TransformLayer& layer,
                                   const SemanticSphere& sphere, const Mat* reconstructions,
                                   const TrainConfig& config);

struct AdamState {
    Mat m;
    Mat v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

AdamState init_adam(const TransformLayer& layer);
void adam_update(TransformLayer& layer, AdamState& state, const Mat& grad, double learning_rate);

struct EpochReport {
    double mean_margin_loss = 0.0;
    double mean_quant_loss = 0.0;
    std::size_t images = 0;
    std::size_t empty_negative_sets = 0;
    std::size_t zero_recon_flags = 0;
};

// One shuffled pass of mini-batch Adam. `reconstructions` is aligned with
// data.trainable (column i reconstructs image data.trainable[i]); nullptr
// drops the quantization term.
EpochReport train_epoch(const TrainData& data, TransformLayer& layer, AdamState& adam,
                        const SemanticSphere& sphere, const Mat* reconstructions,
                        const TrainConfig& config, Rng& shuffle_rng);

} // namespace hsq::hypersphere
