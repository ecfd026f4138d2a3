#pragma once

#include "hsq/hypersphere.hpp"
#include "hsq/quantizer.hpp"
#include "hsq/tag_semantics.hpp"

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

namespace hsq::config {

// Every tunable in one place; defaults follow the values the modules
// document. Serialized next to every output directory for provenance.
struct PipelineConfig {
    // tag graph and sphere
    int k = 20;
    double tau = 0.75;
    double epsilon = 0.1;
    bool use_graph = true;        // false: raw tags, no enhancement or merging
    bool normalize_mode = true;   // false: inner-product everywhere (no l2)

    // embedding training
    double gamma = 1.0;
    double lambda = 1e-3;
    int negatives = 1000;         // K_n
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 1;               // embedding epochs per alternation
    bool staged_mode = false;

    // quantizer
    int num_books = 4;            // M
    int num_words = 256;          // K
    int iters = 30;               // outer alternations I
    int icm_sweeps = 3;
    int kmeans_iters = 25;
    bool perturb = true;

    // search and eval
    int top_n = 5000;
    int cutoff = 5000;            // R for MAP@R

    std::uint64_t seed = 42;
    int threads = 0;              // 0: HSQ_THREADS env, then hardware
};

// Applies recognized keys from a JSON object; unknown keys are errors.
void apply_json(PipelineConfig& cfg, const nlohmann::json& j);

// .json files are parsed as JSON; anything else as flat `key = value` lines
// with '#' comments.
PipelineConfig load_config_file(const std::filesystem::path& path);

void validate(const PipelineConfig& cfg);

nlohmann::json to_json(const PipelineConfig& cfg);

// FNV-1a over the canonical JSON dump.
std::string config_hash(const PipelineConfig& cfg);

hypersphere::TrainConfig train_config(const PipelineConfig& cfg);
quantizer::QuantConfig quant_config(const PipelineConfig& cfg);
tag_semantics::SphereOptions sphere_options(const PipelineConfig& cfg);

} // namespace hsq::config
