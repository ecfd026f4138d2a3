#include "hsq/retrieval.hpp"

#include "hsq/parallel.hpp"

#include <algorithm>
#include <numeric>

namespace hsq::retrieval {

SearchStats search_stats;

RetrievalIndex make_index(Codebooks books, CodeMatrix codes, std::vector<ImageId> ids) {
    if (codes.count != ids.size())
        throw ValidationError("code count " + std::to_string(codes.count) +
                              " does not match id count " + std::to_string(ids.size()));
    if (codes.num_books != books.num_books)
        throw ValidationError("code matrix book count does not match codebooks");
    for (const CodeWord c : codes.codes)
        if (c >= books.num_words) throw ValidationError("code entry out of range");
    return RetrievalIndex{std::move(books), std::move(codes), std::move(ids)};
}

LookupTable build_lookup_table(const Vec& query, const Codebooks& books) {
    if (query.size() != books.dim())
        throw ValidationError("query dim " + std::to_string(query.size()) +
                              " does not match codebook dim " + std::to_string(books.dim()));
    LookupTable table;
    table.values.resize(books.num_books, books.num_words);
    for (int m = 0; m < books.num_books; ++m)
        for (int k = 0; k < books.num_words; ++k)
            table.values(m, k) = books.word(m, k).dot(query);
    search_stats.table_flops += static_cast<std::uint64_t>(books.num_books) * books.num_words *
                                static_cast<std::uint64_t>(books.dim());
    return table;
}

double aqd_score(const LookupTable& table, const CodeWord* code) {
    double score = 0.0;
    for (Eigen::Index m = 0; m < table.values.rows(); ++m)
        score += table.values(m, code[m]);
    return score;
}

std::vector<std::pair<ImageId, double>> search(const Vec& query, const RetrievalIndex& index,
                                               std::size_t top_n, int threads) {
    if (top_n < 1) throw ValidationError("topN must be >= 1");
    const std::size_t n = index.codes.count;
    if (n == 0) return {};

    const LookupTable table = build_lookup_table(query, index.books);
    std::vector<double> scores(n);
    parallel_chunks(n, resolve_threads(threads), [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            scores[i] = aqd_score(table, index.codes.row(i));
    });
    search_stats.codes_scanned += n;

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    const std::size_t take = std::min(top_n, n);
    const auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return index.ids[a] < index.ids[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                      order.end(), better);

    std::vector<std::pair<ImageId, double>> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.emplace_back(index.ids[order[i]], scores[order[i]]);
    return out;
}

} // namespace hsq::retrieval
