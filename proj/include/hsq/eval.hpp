#pragma once

#include "hsq/io.hpp"
#include "hsq/types.hpp"

#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hsq::eval {

// Evaluation-only labels, distinct from training tags. Images without an
// entry (or with an empty list) are never relevant.
struct GroundTruth {
    std::unordered_map<ImageId, std::vector<std::int64_t>> labels;  // sorted lists

    static GroundTruth from_rows(const std::vector<io::ImageLabels>& rows);
    const std::vector<std::int64_t>* find(ImageId id) const;
};

// True iff the two sorted label lists intersect.
bool relevance(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b);

// AP@R = sum_{k<=R} P(k) rel(k) / min(R, total relevant); 0 without relevants.
double average_precision(const std::vector<bool>& rel_at_rank, std::size_t total_relevant,
                         std::size_t cutoff);

// One (recall, precision) point per rank where a relevant item occurs, with a
// final point at the end of the list; empty when nothing is relevant.
std::vector<std::pair<double, double>> pr_curve(const std::vector<bool>& rel_at_rank,
                                                std::size_t total_relevant);

// Precision within the top n for each requested n (denominator is n even if
// the ranking is shorter).
std::vector<std::pair<std::size_t, double>> precision_at_n(const std::vector<bool>& rel_at_rank,
                                                           const std::vector<std::size_t>& ns);

struct MetricReport {
    double map = 0.0;
    std::vector<std::pair<double, double>> pr_curve;       // averaged over queries
    std::vector<std::pair<std::size_t, double>> p_at_n;    // averaged over queries
    std::size_t queries = 0;
    std::size_t queries_with_relevant = 0;
};

struct EvalOptions {
    std::size_t cutoff = 5000;               // R for MAP@R
    std::vector<std::size_t> ns;             // defaults to a log-spaced ladder
    bool exclude_self = false;               // drop result id == query id
};

// Joins ranked results with ground truth. Per-query labels default to the
// database ground truth (the usual queries-from-database protocol); pass a
// separate table when the query set is disjoint.
MetricReport evaluate(const std::vector<io::QueryResult>& results, const GroundTruth& database,
                      const GroundTruth* query_labels, const EvalOptions& opts);

} // namespace hsq::eval
