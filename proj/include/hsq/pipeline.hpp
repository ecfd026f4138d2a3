#pragma once

#include "hsq/config.hpp"
#include "hsq/eval.hpp"
#include "hsq/synth.hpp"

#include <filesystem>
#include <nlohmann/json.hpp>

namespace hsq::pipeline {

struct PipelinePaths {
    std::filesystem::path tags;
    std::filesystem::path assignments;
    std::filesystem::path features;
    std::filesystem::path labels;
    std::filesystem::path queries;
    std::filesystem::path query_labels;  // empty: queries come from the database
};

PipelinePaths from_dataset(const synth::DatasetPaths& paths);

struct PipelineResult {
    eval::MetricReport report;
    nlohmann::json manifest;
};

// build-sphere -> train -> quantize -> search -> eval, writing every stage
// artifact plus a provenance manifest under out_dir.
PipelineResult run(const PipelinePaths& paths, const config::PipelineConfig& cfg,
                   const std::filesystem::path& out_dir);

nlohmann::json report_to_json(const eval::MetricReport& report);

} // namespace hsq::pipeline
