#pragma once

#include "hsq/hypersphere.hpp"
#include "hsq/tag_semantics.hpp"
#include "hsq/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hsq::quantizer {

using hypersphere::TrainConfig;
using hypersphere::TrainData;
using hypersphere::TransformLayer;
using tag_semantics::SemanticSphere;

struct Codebooks {
    int num_books = 0;   // M
    int num_words = 0;   // K
    Mat codewords;       // D x (M*K); book m occupies columns [m*K, (m+1)*K)

    Eigen::Index dim() const { return codewords.rows(); }
    Eigen::Index column(int book, int word) const {
        return static_cast<Eigen::Index>(book) * num_words + word;
    }
    auto word(int book, int word_index) const { return codewords.col(column(book, word_index)); }
};

struct CodeMatrix {
    std::size_t count = 0;  // N points
    int num_books = 0;      // M subcodes per point
    std::vector<CodeWord> codes;  // count * num_books, point-major

    CodeWord& at(std::size_t n, int m) { return codes[n * num_books + m]; }
    CodeWord at(std::size_t n, int m) const { return codes[n * num_books + m]; }
    const CodeWord* row(std::size_t n) const { return codes.data() + n * num_books; }
};

// Annealing for the stochastic ICM relaxation: temperature sqrt(1 - i/I),
// per-coordinate noise scale from the embedding covariance diagonal.
struct PerturbationSchedule {
    int total_iterations = 0;
    Vec coord_std;  // sqrt of diag(cov(R))
    std::uint64_t seed = 0;

    double temperature(int iteration) const;
};

// Lloyd iterations from a k-means++ style seeded start; empty clusters are
// re-seeded from the point farthest from its assigned centroid.
Mat kmeans(const Mat& points, int num_clusters, int iterations, std::uint64_t seed);

// Residual chaining: book m is k-means over the residuals left by books 1..m-1.
Codebooks init_codebooks(const Mat& embeddings, int num_books, int num_words,
                         std::uint64_t seed, int kmeans_iterations = 25);

Vec reconstruct(const Codebooks& books, const CodeWord* code);
// Column n reconstructs codes row n.
Mat reconstruct_all(const Codebooks& books, const CodeMatrix& codes, int threads = 0);

// (r - reconstruction)^T Sigma (r - reconstruction).
double encoding_cost(const Vec& r, const CodeWord* code, const Codebooks& books,
                     const Mat& sigma);

// Precomputed per-batch products: sigma_words = Sigma*C, gram = C^T Sigma C.
struct IcmTables {
    Mat sigma_words;  // D x MK
    Mat gram;         // MK x MK
    Vec self;         // diagonal of gram
};
IcmTables build_icm_tables(const Codebooks& books, const Mat& sigma);

// Coordinate descent over the M subcodes, exhaustive over each book's K
// words, ties to the smaller index. With warm == false the code is seeded
// greedily book by book. When cost_trace is given, the exact encoding cost
// is recorded after the seed and after every coordinate update.
void icm_encode(const Vec& r, const Codebooks& books, const Mat& sigma, const IcmTables& tables,
                int sweeps, CodeWord* code, bool warm = false,
                std::vector<double>* cost_trace = nullptr);

// Encodes every column of `embeddings`; warm-starts from `previous` if given.
CodeMatrix encode_all(const Mat& embeddings, const Codebooks& books, const Mat& sigma,
                      int sweeps, const CodeMatrix* previous = nullptr, int threads = 0);

// Per-coordinate population variance of the columns.
Vec covariance_diagonal(const Mat& embeddings);

PerturbationSchedule make_schedule(int total_iterations, const Mat& embeddings,
                                   std::uint64_t seed);

// C + (T(i)/M) * eps with eps ~ N(0, diag(cov R)) drawn per codeword from
// streams keyed by (iteration, book, word). At i = I the result is C exactly.
Codebooks perturb_codebooks(const Codebooks& books, int iteration,
                            const PerturbationSchedule& schedule);

// Normal-equation blocks assembled from code histograms: B B^T from uni- and
// bivariate code counts, R B^T from per-word column gathers.
struct NormalEquations {
    Mat bbt;  // MK x MK
    Mat rbt;  // D x MK
};
NormalEquations assemble_normal_equations(const Mat& embeddings, const CodeMatrix& codes,
                                          int num_words, int threads = 0);

// Closed-form C = R B^T (B B^T + delta I)^{-1}, delta = 1e-6 tr(BB^T)/(MK).
Codebooks update_codebooks(const Mat& embeddings, const CodeMatrix& codes, int num_words,
                           int threads = 0);

// Sum of encoding costs over all columns.
double quantization_objective(const Mat& embeddings, const CodeMatrix& codes,
                              const Codebooks& books, const Mat& sigma);

struct QuantConfig {
    int num_books = 4;       // M
    int num_words = 256;     // K
    int alternations = 30;   // I
    int icm_sweeps = 3;
    int kmeans_iterations = 25;
    bool perturb = true;
    std::uint64_t seed = 7;
    int threads = 0;
};

// Last-epoch training losses plus the exact weighted encoding cost after the
// iteration's code and codebook updates.
struct IterationStats {
    int iteration = 0;
    double mean_margin_loss = 0.0;
    double mean_quant_cos_loss = 0.0;
    double encode_cost = 0.0;
    double objective = 0.0;  // (mean margin + lambda * mean quant cos) * images
    std::size_t empty_negative_sets = 0;
    std::size_t zero_recon_flags = 0;
};

struct Phase {
    std::string name;
    std::vector<IterationStats> iterations;
};

struct AlternateResult {
    Codebooks books;
    CodeMatrix codes;  // rows aligned with data.trainable, final clean encode
    std::vector<Phase> phases;
    hypersphere::AdamState adam;  // optimizer state at the end of training
};

struct QuantizeOnlyResult {
    Codebooks books;
    CodeMatrix codes;  // final clean encode of every column
    Phase phase;
};

// Quantizer learning over fixed embeddings: residual-chained init, then
// repeat { perturb, ICM re-encode, closed-form codebook update }.
QuantizeOnlyResult train_quantizer(const Mat& embeddings, const Mat& sigma,
                                   const QuantConfig& cfg);

// The outer loop: repeat { update W by mini-batch Adam; update B by ICM over
// perturbed codebooks; update C in closed form }. staged_mode runs all
// embedding epochs first and then the quantizer alone.
AlternateResult alternate_optimize(const TrainData& data, TransformLayer& layer,
                                   const SemanticSphere& sphere, const TrainConfig& train_cfg,
                                   const QuantConfig& quant_cfg);

} // namespace hsq::quantizer
