#pragma once

// Independent scalar-loop oracles used by the tests. These deliberately avoid
// the library's linear-algebra paths: plain loops over raw values only.

#include "hsq/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace hsq::test {

inline double dot_scalar(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += a(i) * b(i);
    return s;
}

inline double norm_scalar(const Vec& a) { return std::sqrt(dot_scalar(a, a)); }

// Full objective sum_n (L_n + lambda Q_n) with hinge bookkeeping so a
// finite-difference caller can detect kink crossings.
struct OracleEval {
    double loss = 0.0;
    std::vector<char> hinge_active;  // fixed (n, i, j) order
    double min_abs_hinge = 1e300;
};

inline OracleEval oracle_total_loss(const Mat& weights, const Mat& features,
                                    const std::vector<std::vector<TagIndex>>& tag_sets,
                                    const Mat& unit_tags, const Mat& reconstructions,
                                    double lambda, double gamma, int negatives_count) {
    OracleEval out;
    const Eigen::Index dim = weights.rows();
    const Eigen::Index tag_count = unit_tags.cols();
    for (Eigen::Index n = 0; n < features.cols(); ++n) {
        // r = tanh(W v) / ||tanh(W v)||, all scalar.
        Vec u(dim);
        for (Eigen::Index d = 0; d < dim; ++d) {
            double z = 0.0;
            for (Eigen::Index j = 0; j < weights.cols(); ++j) z += weights(d, j) * features(j, n);
            u(d) = std::tanh(z);
        }
        const double norm = norm_scalar(u);
        Vec r(dim);
        for (Eigen::Index d = 0; d < dim; ++d) r(d) = u(d) / norm;

        std::vector<double> scores(static_cast<std::size_t>(tag_count));
        for (Eigen::Index t = 0; t < tag_count; ++t)
            scores[static_cast<std::size_t>(t)] = dot_scalar(unit_tags.col(t), r);

        const auto& positives = tag_sets[static_cast<std::size_t>(n)];
        std::vector<std::pair<double, TagIndex>> candidates;
        for (Eigen::Index t = 0; t < tag_count; ++t) {
            const auto idx = static_cast<TagIndex>(t);
            if (std::find(positives.begin(), positives.end(), idx) != positives.end()) continue;
            candidates.emplace_back(scores[static_cast<std::size_t>(t)], idx);
        }
        std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        const auto take =
            std::min<std::size_t>(static_cast<std::size_t>(negatives_count), candidates.size());

        for (const TagIndex i : positives)
            for (std::size_t c = 0; c < take; ++c) {
                const TagIndex j = candidates[c].second;
                const double cos_pn = dot_scalar(unit_tags.col(i), unit_tags.col(j));
                const double delta =
                    std::exp2(1.0 - gamma) * std::pow(std::max(0.0, 1.0 - cos_pn), gamma);
                const double arg = delta - scores[i] + scores[j];
                out.hinge_active.push_back(arg > 0.0 ? 1 : 0);
                out.min_abs_hinge = std::min(out.min_abs_hinge, std::abs(arg));
                if (arg > 0.0) out.loss += arg;
            }

        if (reconstructions.size() > 0 && lambda != 0.0) {
            const Vec r_hat = reconstructions.col(n);
            const double rn = norm_scalar(r_hat);
            for (Eigen::Index t = 0; t < tag_count; ++t) {
                const double cos_hat =
                    rn > 0.0 ? dot_scalar(unit_tags.col(t), r_hat) / rn : 0.0;
                const double e = scores[static_cast<std::size_t>(t)] - cos_hat;
                out.loss += lambda * e * e;
            }
        }
    }
    return out;
}

// Brute-force AP@R used to cross-check the eval module.
inline double oracle_average_precision(const std::vector<bool>& rel, std::size_t total_relevant,
                                       std::size_t cutoff) {
    if (std::min(cutoff, total_relevant) == 0) return 0.0;
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < rel.size() && k < cutoff; ++k) {
        if (!rel[k]) continue;
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    return ap / static_cast<double>(std::min(cutoff, total_relevant));
}

} // namespace hsq::test
