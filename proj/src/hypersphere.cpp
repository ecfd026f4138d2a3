#include "hsq/hypersphere.hpp"

#include "hsq/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hsq::hypersphere {

TransformLayer init_layer(Eigen::Index semantic_dim, Eigen::Index feature_dim,
                          std::uint64_t seed, bool normalize) {
    if (semantic_dim <= 0 || feature_dim <= 0)
        throw ValidationError("transform layer dimensions must be positive");
    TransformLayer layer;
    layer.normalize = normalize;
    layer.weights.resize(semantic_dim, feature_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    Rng rng(seed);
    for (Eigen::Index j = 0; j < feature_dim; ++j)
        for (Eigen::Index i = 0; i < semantic_dim; ++i)
            layer.weights(i, j) = rng.uniform(-bound, bound);
    return layer;
}

namespace {

struct Forward {
    Vec activation;  // u = tanh(W v)
    double norm = 0.0;
    Vec embedded;    // r
};

Forward run_forward(const TransformLayer& layer, const Vec& feature) {
    if (feature.size() != layer.feature_dim())
        throw ValidationError("feature length " + std::to_string(feature.size()) +
                              " does not match layer input dim " +
                              std::to_string(layer.feature_dim()));
    Forward f;
    f.activation = (layer.weights * feature).array().tanh();
    if (!layer.normalize) {
        f.norm = 1.0;
        f.embedded = f.activation;
        return f;
    }
    f.norm = f.activation.norm();
    if (f.norm <= layer.epsilon_norm)
        throw NumericalError("degenerate input: pre-normalization activation norm " +
                             std::to_string(f.norm) + " below guard " +
                             std::to_string(layer.epsilon_norm));
    f.embedded = f.activation / f.norm;
    return f;
}

} // namespace

Vec forward(const TransformLayer& layer, const Vec& feature) {
    return run_forward(layer, feature).embedded;
}

Mat forward_all(const TransformLayer& layer, const Mat& features, int threads) {
    Mat out(layer.semantic_dim(), features.cols());
    parallel_chunks(static_cast<std::size_t>(features.cols()), resolve_threads(threads),
                    [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            out.col(static_cast<Eigen::Index>(i)) =
                forward(layer, features.col(static_cast<Eigen::Index>(i)));
    });
    return out;
}

std::vector<TagIndex> hard_negatives(const Vec& r, const SemanticSphere& sphere,
                                     const std::vector<TagIndex>& positives, int count) {
    const Vec scores = sphere.unit_tags.transpose() * r;
    std::vector<std::pair<double, TagIndex>> candidates;
    candidates.reserve(static_cast<std::size_t>(sphere.tag_count()));
    for (Eigen::Index i = 0; i < sphere.tag_count(); ++i) {
        const auto idx = static_cast<TagIndex>(i);
        if (std::binary_search(positives.begin(), positives.end(), idx)) continue;
        candidates.emplace_back(scores(i), idx);
    }
    const auto take = std::min<std::size_t>(count < 0 ? 0 : static_cast<std::size_t>(count),
                                            candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    std::vector<TagIndex> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(candidates[i].second);
    return out;
}

double adaptive_margin_from_cos(double cos_pos_neg, double gamma) {
    if (gamma <= 0.0) throw ValidationError("margin exponent gamma must be > 0");
    const double base = std::max(0.0, 1.0 - cos_pos_neg);
    return std::exp2(1.0 - gamma) * std::pow(base, gamma);
}

double adaptive_margin(const Vec& s_pos, const Vec& s_neg, double gamma) {
    return adaptive_margin_from_cos(s_pos.dot(s_neg), gamma);
}

double margin_loss(const Vec& r, const SemanticSphere& sphere,
                   const std::vector<TagIndex>& positives,
                   const std::vector<TagIndex>& negatives, double gamma) {
    const Vec scores = sphere.unit_tags.transpose() * r;
    double loss = 0.0;
    for (const TagIndex i : positives)
        for (const TagIndex j : negatives) {
            const double delta =
                adaptive_margin_from_cos(sphere.unit_tags.col(i).dot(sphere.unit_tags.col(j)), gamma);
            const double arg = delta - scores(i) + scores(j);
            if (arg > 0.0) loss += arg;
        }
    return loss;
}

double quantization_cosine_loss(const SemanticSphere& sphere, const Vec& r, const Vec& r_hat,
                                std::size_t* zero_recon_flags) {
    Vec rho;
    if (sphere.normalized) {
        const double norm = r_hat.norm();
        if (norm > 0.0) {
            rho = r_hat / norm;
        } else {
            rho = Vec::Zero(r_hat.size());
            if (zero_recon_flags) ++*zero_recon_flags;
        }
    } else {
        rho = r_hat;
    }
    const Vec err = sphere.unit_tags.transpose() * (r - rho);
    return err.squaredNorm();
}

TrainData make_train_data(const Mat& features, const SemanticSphere& sphere) {
    TrainData data;
    data.features = features;
    data.trainable.reserve(sphere.image_ids.size());
    for (std::size_t i = 0; i < sphere.image_ids.size(); ++i) {
        const ImageId id = sphere.image_ids[i];
        if (static_cast<Eigen::Index>(id) >= features.cols())
            throw ValidationError("image id " + std::to_string(id) +
                                  " has no feature record (only " +
                                  std::to_string(features.cols()) + " present)");
        data.trainable.push_back(id);
        data.tag_sets.push_back(sphere.image_sets[i]);
    }
    return data;
}

namespace {

// Per-image loss terms and gradient contribution, accumulated into `acc`.
void accumulate_image(std::uint32_t slot, const TrainData& data, const TransformLayer& layer,
                      const SemanticSphere& sphere, const Mat* reconstructions,
                      const TrainConfig& config, GradientAccumulator& acc) {
    const Vec feature = data.features.col(static_cast<Eigen::Index>(data.trainable[slot]));
    const auto fwd = run_forward(layer, feature);
    const Vec& r = fwd.embedded;
    const auto& positives = data.tag_sets[slot];

    const Vec scores = sphere.unit_tags.transpose() * r;
    Vec coeffs = Vec::Zero(sphere.tag_count());  // d loss / d scores

    const auto negatives = hard_negatives(r, sphere, positives, config.negatives);
    if (negatives.empty()) ++acc.empty_negative_sets;
    for (const TagIndex i : positives)
        for (const TagIndex j : negatives) {
            const double delta = adaptive_margin_from_cos(
                sphere.unit_tags.col(i).dot(sphere.unit_tags.col(j)), config.gamma);
            const double arg = delta - scores(i) + scores(j);
            if (arg > 0.0) {
                acc.margin_loss += arg;
                coeffs(i) -= 1.0;
                coeffs(j) += 1.0;
            }
        }

    if (reconstructions != nullptr && config.lambda != 0.0) {
        const Vec r_hat = reconstructions->col(static_cast<Eigen::Index>(slot));
        Vec rho;
        if (layer.normalize) {
            const double norm = r_hat.norm();
            if (norm > 0.0) {
                rho = r_hat / norm;
            } else {
                rho = Vec::Zero(r_hat.size());
                ++acc.zero_recon_flags;
            }
        } else {
            rho = r_hat;
        }
        const Vec err = scores - sphere.unit_tags.transpose() * rho;
        acc.quant_loss += err.squaredNorm();
        coeffs += config.lambda * 2.0 * err;
    }

    Vec grad_r = sphere.unit_tags * coeffs;
    Vec grad_u;
    if (layer.normalize) {
        grad_u = (grad_r - grad_r.dot(r) * r) / fwd.norm;
    } else {
        grad_u = std::move(grad_r);
    }
    const Vec grad_z =
        grad_u.array() * (1.0 - fwd.activation.array().square());
    acc.grad.noalias() += grad_z * feature.transpose();
    ++acc.images;
}

} // namespace

GradientAccumulator total_gradient(const std::vector<std::uint32_t>& batch,
                                   const TrainData& data, const TransformLayer& layer,
                                   const SemanticSphere& sphere, const Mat* reconstructions,
                                   const TrainConfig& config) {
    const int threads = resolve_threads(config.threads);
    std::vector<GradientAccumulator> partial(static_cast<std::size_t>(threads));
    for (auto& p : partial) p.grad = Mat::Zero(layer.semantic_dim(), layer.feature_dim());

    parallel_chunks(batch.size(), threads, [&](int worker, std::size_t begin, std::size_t end) {
        auto& acc = partial[static_cast<std::size_t>(worker)];
        for (std::size_t b = begin; b < end; ++b)
            accumulate_image(batch[b], data, layer, sphere, reconstructions, config, acc);
    });

    GradientAccumulator total;
    total.grad = Mat::Zero(layer.semantic_dim(), layer.feature_dim());
    for (const auto& p : partial) {
        total.grad += p.grad;
        total.margin_loss += p.margin_loss;
        total.quant_loss += p.quant_loss;
        total.images += p.images;
        total.empty_negative_sets += p.empty_negative_sets;
        total.zero_recon_flags += p.zero_recon_flags;
    }
    if (!total.grad.allFinite())
        throw NumericalError("non-finite gradient over batch of " +
                             std::to_string(batch.size()) + " images (margin loss " +
                             std::to_string(total.margin_loss) + ", quantization loss " +
                             std::to_string(total.quant_loss) + ")");
    return total;
}

AdamState init_adam(const TransformLayer& layer) {
    AdamState state;
    state.m = Mat::Zero(layer.semantic_dim(), layer.feature_dim());
    state.v = Mat::Zero(layer.semantic_dim(), layer.feature_dim());
    return state;
}

void adam_update(TransformLayer& layer, AdamState& state, const Mat& grad, double learning_rate) {
    ++state.step;
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
    state.v = state.beta2 * state.v.array() + (1.0 - state.beta2) * grad.array().square();
    const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    layer.weights.array() -= learning_rate * (state.m.array() / bias1) /
                             ((state.v.array() / bias2).sqrt() + state.epsilon);
}

EpochReport train_epoch(const TrainData& data, TransformLayer& layer, AdamState& adam,
                        const SemanticSphere& sphere, const Mat* reconstructions,
                        const TrainConfig& config, Rng& shuffle_rng) {
    if (data.trainable.empty()) throw ValidationError("no trainable images (all tag sets empty)");
    if (config.batch_size <= 0) throw ValidationError("batch size must be positive");

    std::vector<std::uint32_t> order(data.trainable.size());
    std::iota(order.begin(), order.end(), 0u);
    shuffle_rng.shuffle(order);

    EpochReport report;
    const auto batch_size = static_cast<std::size_t>(config.batch_size);
    std::vector<std::uint32_t> batch;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(
                                         std::min(order.size(), start + batch_size)));
        const auto acc =
            total_gradient(batch, data, layer, sphere, reconstructions, config);
        const double mean_loss =
            (acc.margin_loss + config.lambda * acc.quant_loss) / static_cast<double>(acc.images);
        if (mean_loss > 1e6)
            throw NumericalError("training diverged: mean batch loss " +
                                 std::to_string(mean_loss) + " at image offset " +
                                 std::to_string(start));
        adam_update(layer, adam, acc.grad, config.learning_rate);
        report.mean_margin_loss += acc.margin_loss;
        report.mean_quant_loss += acc.quant_loss;
        report.images += acc.images;
        report.empty_negative_sets += acc.empty_negative_sets;
        report.zero_recon_flags += acc.zero_recon_flags;
    }
    report.mean_margin_loss /= static_cast<double>(report.images);
    report.mean_quant_loss /= static_cast<double>(report.images);
    return report;
}

} // namespace hsq::hypersphere
