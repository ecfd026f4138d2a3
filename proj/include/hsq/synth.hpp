#pragma once

#include "hsq/io.hpp"
#include "hsq/types.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace hsq::synth {

// Desk-scale stand-in for the tagged web-image corpora: G semantic clusters,
// noisy per-cluster tag vocabularies, images as random linear maps of the
// cluster prototypes with tunable norm variance, labels = cluster ids.
struct SynthSpec {
    int clusters = 4;             // G
    int images_per_cluster = 50;
    int queries_per_cluster = 10;
    int dim = 16;                 // D, semantic space
    int feature_dim = 32;         // V, image feature space
    int tags_per_cluster = 6;
    int min_tags_per_image = 2;
    int max_tags_per_image = 3;
    double tag_jitter = 0.05;
    double noise = 0.05;          // latent noise on image features
    double cluster_overlap = 0.0; // 0: orthogonal prototypes
    int synonym_pairs = 0;        // near-duplicate tag pairs per cluster
    double synonym_bias = 0.0;    // pulls the pair toward the next cluster
    double boundary_fraction = 0.0;  // images drawn near the cluster boundary
    double boundary_shift = 0.0;     // how far boundary latents lean over
    double scale_min = 0.5;       // feature norm variance range
    double scale_max = 2.0;
    std::uint64_t seed = 1;
};

struct SynthData {
    Mat tag_embeddings;                      // D x total tags
    std::vector<io::ImageTags> assignments;  // database images
    Mat features;                            // V x N database
    std::vector<io::ImageLabels> labels;
    Mat query_features;                      // V x Q
    std::vector<io::ImageLabels> query_labels;
};

SynthData generate(const SynthSpec& spec);

struct DatasetPaths {
    std::filesystem::path tags;
    std::filesystem::path assignments;
    std::filesystem::path features;
    std::filesystem::path labels;
    std::filesystem::path queries;
    std::filesystem::path query_labels;
};

DatasetPaths dataset_paths(const std::filesystem::path& dir);
DatasetPaths write_dataset(const std::filesystem::path& dir, const SynthData& data);

} // namespace hsq::synth
