#pragma once

#include "hsq/io.hpp"
#include "hsq/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hsq::tag_semantics {

struct TagEmbeddingMatrix {
    Mat vectors;                     // D x |T|, no zero columns
    std::vector<std::string> names;  // optional sidecar, empty if absent

    Eigen::Index dim() const { return vectors.rows(); }
    Eigen::Index count() const { return vectors.cols(); }
};

// Adjacency rows include the self-loop; neighbor lists are ascending.
// a_ij = 1 iff (j in NN^k(i) by cosine and cos(t_i,t_j) >= tau) or i == j.
struct CorrelationGraph {
    std::vector<std::vector<TagIndex>> neighbors;
    int k = 0;
    double tau = 0.0;
};

// Surjection old column index -> merged column index, plus the merged matrix.
struct MergeRemap {
    std::vector<TagIndex> old_to_new;
    Mat merged;  // D x |T~'|

    Eigen::Index merged_count() const { return merged.cols(); }
};

// Per-image tag sets after remapping; empty sets are dropped and their image
// ids recorded so training can skip them while encoding still covers them.
struct RefreshedSets {
    std::vector<ImageId> image_ids;             // images with non-empty sets
    std::vector<std::vector<TagIndex>> sets;    // aligned with image_ids, sorted, deduped
    std::vector<ImageId> excluded_images;
};

struct SemanticSphere {
    Mat unit_tags;    // D x |T~'|; unit columns unless normalized == false
    Mat covariance;   // D x D, sum of outer products of the columns
    std::vector<ImageId> image_ids;
    std::vector<std::vector<TagIndex>> image_sets;
    std::vector<ImageId> excluded_images;
    bool normalized = true;

    Eigen::Index dim() const { return unit_tags.rows(); }
    Eigen::Index tag_count() const { return unit_tags.cols(); }
};

TagEmbeddingMatrix load_tag_embeddings(const std::filesystem::path& path);

CorrelationGraph build_correlation_graph(const TagEmbeddingMatrix& tags, int k, double tau,
                                         int threads = 0);

// Column i of the result is the mean of the tag columns over neighbors(i).
Mat enhance(const TagEmbeddingMatrix& tags, const CorrelationGraph& graph);

// Single deterministic pass in ascending column order: each unprocessed
// anchor absorbs every unprocessed point at l2 distance < epsilon.
MergeRemap merge_sparse_tags(const Mat& enhanced, double epsilon);

RefreshedSets refresh_image_tag_sets(const std::vector<io::ImageTags>& assignments,
                                     const MergeRemap& remap);

SemanticSphere build_semantic_sphere(const Mat& merged, const RefreshedSets& refreshed,
                                     bool normalize = true);

struct SphereOptions {
    int k = 20;
    double tau = 0.75;
    double epsilon = 0.1;
    bool use_graph = true;   // false: skip enhancement and merging entirely
    bool normalize = true;   // false: keep raw magnitudes (inner-product mode)
    int threads = 0;
};

// Full path from raw tag embeddings + assignments to the sphere.
SemanticSphere build_sphere(const TagEmbeddingMatrix& tags,
                            const std::vector<io::ImageTags>& assignments,
                            const SphereOptions& opts);

void save_sphere(const std::filesystem::path& dir, const SemanticSphere& sphere);
SemanticSphere load_sphere(const std::filesystem::path& dir);

} // namespace hsq::tag_semantics
