#pragma once

#include "hsq/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hsq::io {

// All binary formats are little-endian with a 5-byte ASCII magic. Payload
// floats are float32 on disk; in-memory math runs in double. Declared sizes
// must match the payload length exactly (no trailing bytes).

// "HSQV1": u32 count N, u32 dim D, then N records of D float32.
// Returned matrix is D x N, one record per column.
Mat read_embeddings(const std::filesystem::path& path, bool reject_zero = false);
void write_embeddings(const std::filesystem::path& path, const Mat& vectors);

// "HSQW1": u32 D, u32 V, then three D*V float32 blocks row-major:
// the weight matrix followed by the two Adam moment matrices.
struct Checkpoint {
    Mat weights;  // D x V
    Mat adam_m;   // D x V
    Mat adam_v;   // D x V
};
Checkpoint read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// "HSQC1": u32 M, u32 K, u32 D, then M*K*D float32 (book, then word, then dim).
struct CodebookFile {
    std::uint32_t num_books = 0;
    std::uint32_t num_words = 0;
    std::uint32_t dim = 0;
    Mat codewords;  // D x (M*K); book m occupies columns [m*K, (m+1)*K)
};
CodebookFile read_codebooks(const std::filesystem::path& path);
void write_codebooks(const std::filesystem::path& path, const CodebookFile& books);

// "HSQB1": u32 N, u32 M, u8 log2K, then N*M bytes when log2K == 8,
// otherwise ceil(M*log2K/8) bytes per point, codes packed LSB-first.
struct CodesFile {
    std::uint32_t count = 0;
    std::uint32_t num_books = 0;
    std::uint8_t log2k = 8;
    std::vector<CodeWord> codes;  // count*M entries, point-major
};
CodesFile read_codes(const std::filesystem::path& path);
void write_codes(const std::filesystem::path& path, const CodesFile& codes);

// JSON lines {"image": <id>, "tags": [<tag ids>]}.
struct ImageTags {
    ImageId image = 0;
    std::vector<TagIndex> tags;
};
std::vector<ImageTags> read_assignments(const std::filesystem::path& path);
void write_assignments(const std::filesystem::path& path, const std::vector<ImageTags>& rows);

// JSON lines {"image": <id>, "labels": [<ints>]}.
struct ImageLabels {
    ImageId image = 0;
    std::vector<std::int64_t> labels;
};
std::vector<ImageLabels> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<ImageLabels>& rows);

// JSON lines {"query": <id>, "results": [[<id>, <score>], ...]}.
struct QueryResult {
    ImageId query = 0;
    std::vector<std::pair<ImageId, double>> results;
};
std::vector<QueryResult> read_results(const std::filesystem::path& path);
void write_results(const std::filesystem::path& path, const std::vector<QueryResult>& rows);

// Optional sidecar: JSON lines {"id": <int>, "name": <string>}.
std::vector<std::string> read_names(const std::filesystem::path& path, std::size_t expected);

} // namespace hsq::io
