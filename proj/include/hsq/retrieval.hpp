#pragma once

#include "hsq/quantizer.hpp"
#include "hsq/types.hpp"

#include <atomic>
#include <cstdint>
#include <utility>
#include <vector>

namespace hsq::retrieval {

using quantizer::Codebooks;
using quantizer::CodeMatrix;

struct RetrievalIndex {
    Codebooks books;
    CodeMatrix codes;
    std::vector<ImageId> ids;  // aligned with code rows
};

RetrievalIndex make_index(Codebooks books, CodeMatrix codes, std::vector<ImageId> ids);

// Instrumentation in the spirit of scan statistics: cheap global counters
// that tests and benchmarks can reset and read.
struct SearchStats {
    std::atomic<std::uint64_t> table_flops{0};    // multiply-adds spent on tables
    std::atomic<std::uint64_t> codes_scanned{0};  // database codes visited

    void reset() {
        table_flops = 0;
        codes_scanned = 0;
    }
};
extern SearchStats search_stats;

// M x K inner products between the query embedding and every codeword.
struct LookupTable {
    Mat values;  // M rows, K columns

    double at(int book, int word) const { return values(book, word); }
};

LookupTable build_lookup_table(const Vec& query, const Codebooks& books);

// Sum of the table entries selected by the code; double accumulation.
double aqd_score(const LookupTable& table, const CodeWord* code);

// Full scan, descending score, ties to the smaller image id.
std::vector<std::pair<ImageId, double>> search(const Vec& query, const RetrievalIndex& index,
                                               std::size_t top_n, int threads = 0);

} // namespace hsq::retrieval
