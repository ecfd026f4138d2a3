#include "hsq/eval.hpp"

#include <algorithm>
#include <unordered_set>

namespace hsq::eval {

GroundTruth GroundTruth::from_rows(const std::vector<io::ImageLabels>& rows) {
    GroundTruth gt;
    for (const auto& row : rows) {
        auto labels = row.labels;
        std::sort(labels.begin(), labels.end());
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
        gt.labels[row.image] = std::move(labels);
    }
    return gt;
}

const std::vector<std::int64_t>* GroundTruth::find(ImageId id) const {
    const auto it = labels.find(id);
    return it == labels.end() ? nullptr : &it->second;
}

bool relevance(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            return true;
        }
    }
    return false;
}

double average_precision(const std::vector<bool>& rel_at_rank, std::size_t total_relevant,
                         std::size_t cutoff) {
    if (cutoff < 1) throw ValidationError("AP cutoff must be >= 1");
    const std::size_t denom = std::min(cutoff, total_relevant);
    if (denom == 0) return 0.0;
    double sum = 0.0;
    std::size_t hits = 0;
    const std::size_t limit = std::min(cutoff, rel_at_rank.size());
    for (std::size_t k = 0; k < limit; ++k) {
        if (rel_at_rank[k]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return sum / static_cast<double>(denom);
}

std::vector<std::pair<double, double>> pr_curve(const std::vector<bool>& rel_at_rank,
                                                std::size_t total_relevant) {
    std::vector<std::pair<double, double>> points;
    if (total_relevant == 0) return points;
    points.emplace_back(0.0, 1.0);
    std::size_t hits = 0;
    for (std::size_t k = 0; k < rel_at_rank.size(); ++k) {
        if (!rel_at_rank[k]) continue;
        ++hits;
        points.emplace_back(static_cast<double>(hits) / static_cast<double>(total_relevant),
                            static_cast<double>(hits) / static_cast<double>(k + 1));
    }
    if (!rel_at_rank.empty()) {
        const std::pair<double, double> tail(
            static_cast<double>(hits) / static_cast<double>(total_relevant),
            static_cast<double>(hits) / static_cast<double>(rel_at_rank.size()));
        if (points.back() != tail) points.push_back(tail);
    }
    return points;
}

std::vector<std::pair<std::size_t, double>> precision_at_n(const std::vector<bool>& rel_at_rank,
                                                           const std::vector<std::size_t>& ns) {
    std::vector<std::pair<std::size_t, double>> out;
    out.reserve(ns.size());
    for (const std::size_t n : ns) {
        if (n == 0) throw ValidationError("P@N requires n >= 1");
        std::size_t hits = 0;
        const std::size_t limit = std::min(n, rel_at_rank.size());
        for (std::size_t k = 0; k < limit; ++k)
            if (rel_at_rank[k]) ++hits;
        out.emplace_back(n, static_cast<double>(hits) / static_cast<double>(n));
    }
    return out;
}

namespace {

constexpr int kRecallLevels = 21;  // 0.00, 0.05, ..., 1.00

std::vector<std::size_t> default_ns(std::size_t cutoff) {
    std::vector<std::size_t> ns;
    for (const std::size_t n : {1ul, 2ul, 5ul, 10ul, 20ul, 50ul, 100ul, 200ul, 500ul, 1000ul,
                                2000ul, 5000ul})
        if (n <= cutoff) ns.push_back(n);
    if (ns.empty()) ns.push_back(1);
    return ns;
}

} // namespace

MetricReport evaluate(const std::vector<io::QueryResult>& results, const GroundTruth& database,
                      const GroundTruth* query_labels, const EvalOptions& opts) {
    if (results.empty()) throw ValidationError("no query results to evaluate");
    const GroundTruth& queries_gt = query_labels ? *query_labels : database;
    const std::vector<std::size_t> ns = opts.ns.empty() ? default_ns(opts.cutoff) : opts.ns;
    static const std::vector<std::int64_t> kNoLabels;

    MetricReport report;
    report.queries = results.size();
    std::vector<double> level_precision(kRecallLevels, 0.0);
    std::vector<double> pn_sum(ns.size(), 0.0);

    for (const auto& qr : results) {
        const auto* q_labels_ptr = queries_gt.find(qr.query);
        const auto& q_labels = q_labels_ptr ? *q_labels_ptr : kNoLabels;

        // Deduplicate (keep first occurrence) and optionally drop the query.
        std::vector<ImageId> ranked;
        ranked.reserve(qr.results.size());
        std::unordered_set<ImageId> seen;
        for (const auto& [id, score] : qr.results) {
            (void)score;
            if (opts.exclude_self && id == qr.query) continue;
            if (seen.insert(id).second) ranked.push_back(id);
        }

        std::vector<bool> rel(ranked.size(), false);
        for (std::size_t k = 0; k < ranked.size(); ++k) {
            const auto* x_labels = database.find(ranked[k]);
            rel[k] = x_labels && relevance(q_labels, *x_labels);
        }

        std::size_t total_relevant = 0;
        if (!q_labels.empty())
            for (const auto& [id, labels] : database.labels) {
                if (opts.exclude_self && id == qr.query) continue;
                if (relevance(q_labels, labels)) ++total_relevant;
            }

        report.map += average_precision(rel, total_relevant, opts.cutoff);

        const auto pn = precision_at_n(rel, ns);
        for (std::size_t i = 0; i < ns.size(); ++i) pn_sum[i] += pn[i].second;

        if (total_relevant > 0) {
            ++report.queries_with_relevant;
            // Precision at the first rank reaching each recall level; 0 when
            // the ranking never gets there.
            std::size_t hits = 0;
            std::vector<double> reached(kRecallLevels, 0.0);
            int level = 1;  // level 0 (recall 0) pins precision 1
            reached[0] = 1.0;
            for (std::size_t k = 0; k < rel.size() && level < kRecallLevels; ++k) {
                if (!rel[k]) continue;
                ++hits;
                const double recall =
                    static_cast<double>(hits) / static_cast<double>(total_relevant);
                const double precision =
                    static_cast<double>(hits) / static_cast<double>(k + 1);
                while (level < kRecallLevels &&
                       recall + 1e-12 >= static_cast<double>(level) / (kRecallLevels - 1)) {
                    reached[level] = precision;
                    ++level;
                }
            }
            for (int l = 0; l < kRecallLevels; ++l) level_precision[l] += reached[l];
        }
    }

    report.map /= static_cast<double>(report.queries);
    for (std::size_t i = 0; i < ns.size(); ++i)
        report.p_at_n.emplace_back(ns[i], pn_sum[i] / static_cast<double>(report.queries));
    if (report.queries_with_relevant > 0)
        for (int l = 0; l < kRecallLevels; ++l)
            report.pr_curve.emplace_back(
                static_cast<double>(l) / (kRecallLevels - 1),
                level_precision[l] / static_cast<double>(report.queries_with_relevant));
    return report;
}

} // namespace hsq::eval
