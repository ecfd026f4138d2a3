#include "hsq/pipeline.hpp"

#include "hsq/hypersphere.hpp"
#include "hsq/quantizer.hpp"
#include "hsq/retrieval.hpp"

#include <fstream>
#include <numeric>

namespace hsq::pipeline {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

void write_json(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json phases_to_json(const std::vector<quantizer::Phase>& phases) {
    json out = json::array();
    for (const auto& phase : phases) {
        json p;
        p["name"] = phase.name;
        p["iterations"] = phase.iterations.size();
        if (!phase.iterations.empty()) {
            p["final_encode_cost"] = phase.iterations.back().encode_cost;
            p["final_mean_margin_loss"] = phase.iterations.back().mean_margin_loss;
        }
        out.push_back(p);
    }
    return out;
}

struct StageGuard {
    const char* stage;
    template <typename Fn>
    auto operator()(Fn&& fn) -> decltype(fn()) {
        try {
            return fn();
        } catch (ValidationError& e) {
            throw ValidationError(std::string(stage) + ": " + e.what());
        } catch (NumericalError& e) {
            throw NumericalError(std::string(stage) + ": " + e.what());
        }
    }
};

} // namespace

PipelinePaths from_dataset(const synth::DatasetPaths& paths) {
    return PipelinePaths{paths.tags,   paths.assignments,  paths.features,
                         paths.labels, paths.queries,      paths.query_labels};
}

json report_to_json(const eval::MetricReport& report) {
    json j;
    j["map"] = report.map;
    auto pr = json::array();
    for (const auto& [recall, precision] : report.pr_curve)
        pr.push_back(json::array({recall, precision}));
    j["pr_curve"] = pr;
    auto pn = json::array();
    for (const auto& [n, precision] : report.p_at_n)
        pn.push_back(json::array({n, precision}));
    j["p_at_n"] = pn;
    j["queries"] = report.queries;
    j["queries_with_relevant"] = report.queries_with_relevant;
    return j;
}

PipelineResult run(const PipelinePaths& paths, const config::PipelineConfig& cfg,
                   const std::filesystem::path& out_dir) {
    config::validate(cfg);
    std::filesystem::create_directories(out_dir);

    // Stage 1: semantic sphere from tags and assignments.
    auto sphere = StageGuard{"build-sphere"}([&] {
        const auto tags = tag_semantics::load_tag_embeddings(paths.tags);
        const auto assignments = io::read_assignments(paths.assignments);
        auto s = tag_semantics::build_sphere(tags, assignments, config::sphere_options(cfg));
        tag_semantics::save_sphere(out_dir / "sphere", s);
        return s;
    });

    // Stage 2: joint (or staged) embedding + quantizer training.
    const Mat features = StageGuard{"train"}(
        [&] { return io::read_embeddings(paths.features); });
    auto layer = hypersphere::init_layer(sphere.dim(), features.rows(), cfg.seed,
                                         cfg.normalize_mode);
    const auto data = hypersphere::make_train_data(features, sphere);
    auto trained = StageGuard{"train"}([&] {
        return quantizer::alternate_optimize(data, layer, sphere, config::train_config(cfg),
                                             config::quant_config(cfg));
    });
    io::write_checkpoint(out_dir / "checkpoint.hsqw",
                         {layer.weights, trained.adam.m, trained.adam.v});

    // Stage 3: clean encode of the whole database (tagless images included).
    const auto [books, db_codes, db_embedded] = StageGuard{"quantize"}([&] {
        const Mat embedded = hypersphere::forward_all(layer, features, cfg.threads);
        const auto codes =
            quantizer::encode_all(embedded, trained.books, sphere.covariance, cfg.icm_sweeps,
                                  nullptr, cfg.threads);
        return std::tuple(trained.books, codes, embedded);
    });
    io::write_embeddings(out_dir / "embeddings.hsqv", db_embedded);
    io::write_codebooks(out_dir / "codebooks.hsqc",
                        {static_cast<std::uint32_t>(books.num_books),
                         static_cast<std::uint32_t>(books.num_words),
                         static_cast<std::uint32_t>(books.dim()), books.codewords});
    {
        io::CodesFile cf;
        cf.count = static_cast<std::uint32_t>(db_codes.count);
        cf.num_books = static_cast<std::uint32_t>(db_codes.num_books);
        cf.log2k = static_cast<std::uint8_t>(std::countr_zero(
            static_cast<unsigned>(books.num_words)));
        cf.codes = db_codes.codes;
        io::write_codes(out_dir / "codes.hsqb", cf);
    }

    // Stage 4: AQD search for every query.
    const auto results = StageGuard{"search"}([&] {
        const Mat query_features = io::read_embeddings(paths.queries);
        Mat query_embedded;
        if (query_features.rows() == features.rows()) {
            query_embedded = hypersphere::forward_all(layer, query_features, cfg.threads);
        } else if (query_features.rows() == sphere.dim()) {
            query_embedded = query_features;  // already on the sphere
        } else {
            throw ValidationError("query dim matches neither the feature dim nor the sphere dim");
        }
        std::vector<ImageId> ids(db_codes.count);
        std::iota(ids.begin(), ids.end(), 0u);
        const auto index = retrieval::make_index(books, db_codes, ids);
        std::vector<io::QueryResult> rows;
        rows.reserve(static_cast<std::size_t>(query_embedded.cols()));
        for (Eigen::Index q = 0; q < query_embedded.cols(); ++q) {
            io::QueryResult row;
            row.query = static_cast<ImageId>(q);
            row.results = retrieval::search(query_embedded.col(q), index,
                                            static_cast<std::size_t>(cfg.top_n), cfg.threads);
            rows.push_back(std::move(row));
        }
        io::write_results(out_dir / "results.jsonl", rows);
        return rows;
    });

    // Stage 5: metrics.
    PipelineResult out;
    out.report = StageGuard{"eval"}([&] {
        const auto db_gt = eval::GroundTruth::from_rows(io::read_labels(paths.labels));
        eval::EvalOptions opts;
        opts.cutoff = static_cast<std::size_t>(cfg.cutoff);
        if (paths.query_labels.empty()) {
            opts.exclude_self = true;  // queries drawn from the database
            return eval::evaluate(results, db_gt, nullptr, opts);
        }
        const auto q_gt = eval::GroundTruth::from_rows(io::read_labels(paths.query_labels));
        return eval::evaluate(results, db_gt, &q_gt, opts);
    });
    write_json(out_dir / "report.json", report_to_json(out.report));

    out.manifest["version"] = kVersion;
    out.manifest["config"] = config::to_json(cfg);
    out.manifest["config_hash"] = config::config_hash(cfg);
    out.manifest["seed"] = cfg.seed;
    out.manifest["phases"] = phases_to_json(trained.phases);
    out.manifest["database_images"] = db_codes.count;
    out.manifest["trainable_images"] = data.trainable.size();
    out.manifest["excluded_images"] = sphere.excluded_images.size();
    out.manifest["sphere_tags"] = sphere.tag_count();
    out.manifest["queries"] = results.size();
    out.manifest["map"] = out.report.map;
    write_json(out_dir / "manifest.json", out.manifest);
    return out;
}

} // namespace hsq::pipeline
