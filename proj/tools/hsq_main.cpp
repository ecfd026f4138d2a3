#include "hsq/config.hpp"
#include "hsq/eval.hpp"
#include "hsq/hypersphere.hpp"
#include "hsq/io.hpp"
#include "hsq/parallel.hpp"
#include "hsq/pipeline.hpp"
#include "hsq/quantizer.hpp"
#include "hsq/retrieval.hpp"
#include "hsq/synth.hpp"
#include "hsq/tag_semantics.hpp"

#include <CLI11.hpp>
#include <iostream>
#include <numeric>

namespace {

using namespace hsq;

// Flags override config-file values only when explicitly passed.
struct ConfigResolver {
    std::string config_path;
    config::PipelineConfig flags;
    std::vector<std::pair<CLI::Option*,
                          std::function<void(config::PipelineConfig&,
                                             const config::PipelineConfig&)>>>
        overrides;

    template <typename T, typename Member>
    CLI::Option* add(CLI::App* app, const std::string& name, T Member::* field,
                     const std::string& desc) {
        auto* opt = app->add_option(name, flags.*field, desc);
        overrides.emplace_back(opt, [field](config::PipelineConfig& dst,
                                            const config::PipelineConfig& src) {
            dst.*field = src.*field;
        });
        return opt;
    }

    template <typename Member>
    CLI::Option* add_flag(CLI::App* app, const std::string& name, bool Member::* field,
                          const std::string& desc) {
        auto* opt = app->add_flag(name, flags.*field, desc);
        overrides.emplace_back(opt, [field](config::PipelineConfig& dst,
                                            const config::PipelineConfig& src) {
            dst.*field = src.*field;
        });
        return opt;
    }

    void add_config_option(CLI::App* app) {
        app->add_option("--config", config_path, "config file (.json or key = value lines)")
            ->check(CLI::ExistingFile);
    }

    config::PipelineConfig resolve() const {
        config::PipelineConfig cfg;
        if (!config_path.empty()) cfg = config::load_config_file(config_path);
        for (const auto& [opt, apply] : overrides)
            if (opt->count() > 0) apply(cfg, flags);
        config::validate(cfg);
        return cfg;
    }
};

void write_config_echo(const std::filesystem::path& dir, const config::PipelineConfig& cfg) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "config_used.json", std::ios::trunc);
    out << config::to_json(cfg).dump(2) << '\n';
}

io::CodesFile to_codes_file(const quantizer::CodeMatrix& codes, int num_words) {
    io::CodesFile cf;
    cf.count = static_cast<std::uint32_t>(codes.count);
    cf.num_books = static_cast<std::uint32_t>(codes.num_books);
    cf.log2k = static_cast<std::uint8_t>(std::countr_zero(static_cast<unsigned>(num_words)));
    cf.codes = codes.codes;
    return cf;
}

quantizer::CodeMatrix from_codes_file(const io::CodesFile& cf) {
    quantizer::CodeMatrix codes;
    codes.count = cf.count;
    codes.num_books = static_cast<int>(cf.num_books);
    codes.codes = cf.codes;
    return codes;
}

quantizer::Codebooks from_codebook_file(const io::CodebookFile& cb) {
    quantizer::Codebooks books;
    books.num_books = static_cast<int>(cb.num_books);
    books.num_words = static_cast<int>(cb.num_words);
    books.codewords = cb.codewords;
    return books;
}

int cmd_build_sphere(const std::string& embeddings, const std::string& assignments,
                     const std::string& out, const config::PipelineConfig& cfg) {
    const auto tags = tag_semantics::load_tag_embeddings(embeddings);
    const auto rows = io::read_assignments(assignments);
    const auto sphere = tag_semantics::build_sphere(tags, rows, config::sphere_options(cfg));
    tag_semantics::save_sphere(out, sphere);
    write_config_echo(out, cfg);
    std::cout << "sphere: " << sphere.tag_count() << " tags (" << tags.count()
              << " raw), dim " << sphere.dim() << ", " << sphere.image_ids.size()
              << " tagged images, " << sphere.excluded_images.size() << " excluded\n";
    return 0;
}

int cmd_train(const std::string& features_path, const std::string& sphere_dir,
              const std::string& out, const config::PipelineConfig& cfg) {
    const auto sphere = tag_semantics::load_sphere(sphere_dir);
    const Mat features = io::read_embeddings(features_path);
    auto layer = hypersphere::init_layer(sphere.dim(), features.rows(), cfg.seed,
                                         cfg.normalize_mode);
    const auto data = hypersphere::make_train_data(features, sphere);
    const auto result = quantizer::alternate_optimize(
        data, layer, sphere, config::train_config(cfg), config::quant_config(cfg));

    std::filesystem::create_directories(out);
    io::write_checkpoint(std::filesystem::path(out) / "checkpoint.hsqw",
                         {layer.weights, result.adam.m, result.adam.v});
    const Mat embedded = hypersphere::forward_all(layer, features, cfg.threads);
    io::write_embeddings(std::filesystem::path(out) / "embeddings.hsqv", embedded);
    io::write_codebooks(std::filesystem::path(out) / "codebooks.hsqc",
                        {static_cast<std::uint32_t>(result.books.num_books),
                         static_cast<std::uint32_t>(result.books.num_words),
                         static_cast<std::uint32_t>(result.books.dim()),
                         result.books.codewords});
    const auto db_codes = quantizer::encode_all(embedded, result.books, sphere.covariance,
                                                cfg.icm_sweeps, nullptr, cfg.threads);
    io::write_codes(std::filesystem::path(out) / "codes.hsqb",
                    to_codes_file(db_codes, result.books.num_words));
    write_config_echo(out, cfg);

    nlohmann::json report;
    for (const auto& phase : result.phases) {
        nlohmann::json p;
        p["name"] = phase.name;
        auto arr = nlohmann::json::array();
        std::size_t empty_negatives = 0;
        for (const auto& it : phase.iterations) {
            arr.push_back({{"iteration", it.iteration},
                           {"mean_margin_loss", it.mean_margin_loss},
                           {"mean_quant_cos_loss", it.mean_quant_cos_loss},
                           {"encode_cost", it.encode_cost},
                           {"objective", it.objective},
                           {"empty_negative_sets", it.empty_negative_sets},
                           {"zero_recon_flags", it.zero_recon_flags}});
            empty_negatives += it.empty_negative_sets;
        }
        if (empty_negatives > 0)
            std::cerr << "warning: " << empty_negatives << " empty negative sets in phase "
                      << phase.name << " (images whose tags cover the sphere)\n";
        p["iterations"] = arr;
        report["phases"].push_back(p);
    }
    std::ofstream(std::filesystem::path(out) / "train_report.json") << report.dump(2) << '\n';
    if (!result.phases.empty() && !result.phases.back().iterations.empty())
        std::cout << "trained: final encode cost "
                  << result.phases.back().iterations.back().encode_cost << "\n";
    return 0;
}

int cmd_quantize_train(const std::string& embeddings_path, const std::string& sphere_dir,
                       const std::string& out, const config::PipelineConfig& cfg) {
    const auto sphere = tag_semantics::load_sphere(sphere_dir);
    const Mat embeddings = io::read_embeddings(embeddings_path);
    if (embeddings.rows() != sphere.dim())
        throw ValidationError("embeddings dim does not match the sphere dim (expected on-sphere "
                              "vectors; run `hsq train` first for raw features)");
    const auto result =
        quantizer::train_quantizer(embeddings, sphere.covariance, config::quant_config(cfg));
    std::filesystem::create_directories(out);
    io::write_codebooks(std::filesystem::path(out) / "codebooks.hsqc",
                        {static_cast<std::uint32_t>(result.books.num_books),
                         static_cast<std::uint32_t>(result.books.num_words),
                         static_cast<std::uint32_t>(result.books.dim()),
                         result.books.codewords});
    io::write_codes(std::filesystem::path(out) / "codes.hsqb",
                    to_codes_file(result.codes, result.books.num_words));
    write_config_echo(out, cfg);
    std::cout << "quantizer: " << result.books.num_books << " books x "
              << result.books.num_words << " words, final cost "
              << result.phase.iterations.back().encode_cost << "\n";
    return 0;
}

int cmd_quantize_encode(const std::string& embeddings_path, const std::string& sphere_dir,
                        const std::string& out, const std::string& codebooks_path,
                        const config::PipelineConfig& cfg) {
    const auto sphere = tag_semantics::load_sphere(sphere_dir);
    const Mat embeddings = io::read_embeddings(embeddings_path);
    const auto books_file = io::read_codebooks(
        codebooks_path.empty() ? std::filesystem::path(out) / "codebooks.hsqc"
                               : std::filesystem::path(codebooks_path));
    const auto books = from_codebook_file(books_file);
    if (embeddings.rows() != books.dim())
        throw ValidationError("embeddings dim does not match the codebook dim");
    const auto codes = quantizer::encode_all(embeddings, books, sphere.covariance,
                                             cfg.icm_sweeps, nullptr, cfg.threads);
    std::filesystem::create_directories(out);
    io::write_codes(std::filesystem::path(out) / "codes.hsqb",
                    to_codes_file(codes, books.num_words));
    std::cout << "encoded " << codes.count << " points (" << books.num_books
              << " bytes-equivalent codes)\n";
    return 0;
}

int cmd_search(const std::string& index_dir, const std::string& queries_path, int top_n,
               const std::string& out, bool no_normalize, int threads) {
    const auto dir = std::filesystem::path(index_dir);
    const auto books = from_codebook_file(io::read_codebooks(dir / "codebooks.hsqc"));
    const auto codes = from_codes_file(io::read_codes(dir / "codes.hsqb"));
    std::vector<ImageId> ids(codes.count);
    std::iota(ids.begin(), ids.end(), 0u);
    const auto index = retrieval::make_index(books, codes, ids);

    Mat queries = io::read_embeddings(queries_path);
    if (queries.rows() != books.dim()) {
        const auto ckpt_path = dir / "checkpoint.hsqw";
        if (!std::filesystem::exists(ckpt_path))
            throw ValidationError("queries are not on the sphere and the index has no "
                                  "checkpoint.hsqw to embed them");
        const auto ckpt = io::read_checkpoint(ckpt_path);
        if (queries.rows() != ckpt.weights.cols())
            throw ValidationError("query dim matches neither the codebooks nor the checkpoint");
        hypersphere::TransformLayer layer;
        layer.weights = ckpt.weights;
        layer.normalize = !no_normalize;
        queries = hypersphere::forward_all(layer, queries, threads);
    }

    std::vector<io::QueryResult> rows;
    rows.reserve(static_cast<std::size_t>(queries.cols()));
    for (Eigen::Index q = 0; q < queries.cols(); ++q) {
        io::QueryResult row;
        row.query = static_cast<ImageId>(q);
        row.results = retrieval::search(queries.col(q), index,
                                        static_cast<std::size_t>(top_n), threads);
        rows.push_back(std::move(row));
    }
    io::write_results(out, rows);
    std::cout << "searched " << rows.size() << " queries over " << codes.count << " codes\n";
    return 0;
}

int cmd_eval(const std::string& results_path, const std::string& labels_path,
             const std::string& query_labels_path, int cutoff, const std::string& out,
             bool exclude_self, const std::vector<std::size_t>& ns) {
    const auto results = io::read_results(results_path);
    const auto db_gt = eval::GroundTruth::from_rows(io::read_labels(labels_path));
    eval::EvalOptions opts;
    opts.cutoff = static_cast<std::size_t>(cutoff);
    opts.exclude_self = exclude_self;
    opts.ns = ns;
    eval::MetricReport report;
    if (query_labels_path.empty()) {
        report = eval::evaluate(results, db_gt, nullptr, opts);
    } else {
        const auto q_gt = eval::GroundTruth::from_rows(io::read_labels(query_labels_path));
        report = eval::evaluate(results, db_gt, &q_gt, opts);
    }
    std::ofstream(out) << pipeline::report_to_json(report).dump(2) << '\n';
    std::cout << "MAP@" << cutoff << " = " << report.map << " over " << report.queries
              << " queries\n";
    return 0;
}

int cmd_synth(const synth::SynthSpec& spec, const std::string& out) {
    const auto data = synth::generate(spec);
    synth::write_dataset(out, data);
    nlohmann::json echo;
    echo["clusters"] = spec.clusters;
    echo["images_per_cluster"] = spec.images_per_cluster;
    echo["queries_per_cluster"] = spec.queries_per_cluster;
    echo["dim"] = spec.dim;
    echo["feature_dim"] = spec.feature_dim;
    echo["tags_per_cluster"] = spec.tags_per_cluster;
    echo["min_tags_per_image"] = spec.min_tags_per_image;
    echo["max_tags_per_image"] = spec.max_tags_per_image;
    echo["tag_jitter"] = spec.tag_jitter;
    echo["noise"] = spec.noise;
    echo["cluster_overlap"] = spec.cluster_overlap;
    echo["synonym_pairs"] = spec.synonym_pairs;
    echo["synonym_bias"] = spec.synonym_bias;
    echo["scale_min"] = spec.scale_min;
    echo["scale_max"] = spec.scale_max;
    echo["seed"] = spec.seed;
    std::ofstream(std::filesystem::path(out) / "synth_spec.json") << echo.dump(2) << '\n';
    std::cout << "synthetic dataset: " << data.features.cols() << " database images, "
              << data.query_features.cols() << " queries, " << data.tag_embeddings.cols()
              << " tags\n";
    return 0;
}

int cmd_pipeline(const pipeline::PipelinePaths& paths, const config::PipelineConfig& cfg,
                 const std::string& out) {
    const auto result = pipeline::run(paths, cfg, out);
    std::cout << "MAP@" << cfg.cutoff << " = " << result.report.map << " over "
              << result.report.queries << " queries (manifest: " << out << "/manifest.json)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hyperspherical quantization for weakly tagged image retrieval"};
    app.require_subcommand(1);

    // --- tags build-sphere ---
    auto* tags_cmd = app.add_subcommand("tags", "tag vocabulary tools");
    tags_cmd->require_subcommand(1);
    auto* sphere_cmd = tags_cmd->add_subcommand("build-sphere",
                                                "build the semantic sphere from tag embeddings");
    std::string sphere_embeddings, sphere_assignments, sphere_out;
    ConfigResolver sphere_cfg;
    sphere_cmd->add_option("--embeddings", sphere_embeddings, "tag embeddings (HSQV1)")
        ->required()->check(CLI::ExistingFile);
    sphere_cmd->add_option("--assignments", sphere_assignments, "per-image tag ids (JSON lines)")
        ->required()->check(CLI::ExistingFile);
    sphere_cmd->add_option("--out", sphere_out, "output directory")->required();
    sphere_cfg.add(sphere_cmd, "--k", &config::PipelineConfig::k, "neighbors per tag");
    sphere_cfg.add(sphere_cmd, "--tau", &config::PipelineConfig::tau, "correlation threshold");
    sphere_cfg.add(sphere_cmd, "--epsilon", &config::PipelineConfig::epsilon,
                   "merging threshold");
    sphere_cfg.add(sphere_cmd, "--use-graph", &config::PipelineConfig::use_graph,
                   "enable enhancement and merging (use =false to disable)");
    sphere_cfg.add(sphere_cmd, "--normalize", &config::PipelineConfig::normalize_mode,
                   "l2-normalize the sphere (use =false for inner-product mode)");
    sphere_cfg.add(sphere_cmd, "--threads", &config::PipelineConfig::threads, "worker cap");
    sphere_cfg.add_config_option(sphere_cmd);

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "joint embedding + quantizer training");
    std::string train_features, train_sphere, train_out;
    ConfigResolver train_cfg;
    train_cmd->add_option("--features", train_features, "image features (HSQV1)")
        ->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--sphere", train_sphere, "sphere directory")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cfg.add_config_option(train_cmd);
    train_cfg.add(train_cmd, "--gamma", &config::PipelineConfig::gamma, "margin exponent");
    train_cfg.add(train_cmd, "--lambda", &config::PipelineConfig::lambda,
                  "quantization loss weight");
    train_cfg.add(train_cmd, "--K-n", &config::PipelineConfig::negatives, "hard negatives");
    train_cfg.add(train_cmd, "--learning-rate", &config::PipelineConfig::learning_rate,
                  "Adam learning rate");
    train_cfg.add(train_cmd, "--batch-size", &config::PipelineConfig::batch_size, "batch size");
    train_cfg.add(train_cmd, "--epochs", &config::PipelineConfig::epochs,
                  "embedding epochs per alternation");
    train_cfg.add(train_cmd, "--M", &config::PipelineConfig::num_books, "codebook count");
    train_cfg.add(train_cmd, "--K", &config::PipelineConfig::num_words, "codewords per book");
    train_cfg.add(train_cmd, "--iters", &config::PipelineConfig::iters, "outer alternations");
    train_cfg.add(train_cmd, "--seed", &config::PipelineConfig::seed, "RNG seed");
    train_cfg.add_flag(train_cmd, "--staged", &config::PipelineConfig::staged_mode,
                       "two-stage training (embedding first, then quantizer)");
    train_cfg.add(train_cmd, "--threads", &config::PipelineConfig::threads, "worker cap");

    // --- quantize train|encode ---
    auto* quant_cmd = app.add_subcommand("quantize", "quantizer over fixed embeddings");
    quant_cmd->require_subcommand(1);
    auto* qtrain_cmd = quant_cmd->add_subcommand("train", "learn codebooks and codes");
    std::string qtrain_embeddings, qtrain_sphere, qtrain_out;
    ConfigResolver qtrain_cfg;
    qtrain_cmd->add_option("--embeddings", qtrain_embeddings, "on-sphere embeddings (HSQV1)")
        ->required()->check(CLI::ExistingFile);
    qtrain_cmd->add_option("--sphere", qtrain_sphere, "sphere directory")->required();
    qtrain_cmd->add_option("--out", qtrain_out, "output directory")->required();
    qtrain_cfg.add(qtrain_cmd, "--M", &config::PipelineConfig::num_books, "codebook count");
    qtrain_cfg.add(qtrain_cmd, "--K", &config::PipelineConfig::num_words, "codewords per book");
    qtrain_cfg.add(qtrain_cmd, "--iters", &config::PipelineConfig::iters, "alternations");
    qtrain_cfg.add(qtrain_cmd, "--icm-sweeps", &config::PipelineConfig::icm_sweeps,
                   "ICM sweeps per encode");
    qtrain_cfg.add(qtrain_cmd, "--seed", &config::PipelineConfig::seed, "RNG seed");
    qtrain_cfg.add(qtrain_cmd, "--threads", &config::PipelineConfig::threads, "worker cap");
    qtrain_cfg.add_config_option(qtrain_cmd);

    auto* qencode_cmd = quant_cmd->add_subcommand("encode", "encode with existing codebooks");
    std::string qenc_embeddings, qenc_sphere, qenc_out, qenc_books;
    ConfigResolver qenc_cfg;
    qencode_cmd->add_option("--embeddings", qenc_embeddings, "on-sphere embeddings (HSQV1)")
        ->required()->check(CLI::ExistingFile);
    qencode_cmd->add_option("--sphere", qenc_sphere, "sphere directory")->required();
    qencode_cmd->add_option("--out", qenc_out, "output directory")->required();
    qencode_cmd->add_option("--codebooks", qenc_books,
                            "codebook file (default: <out>/codebooks.hsqc)");
    qenc_cfg.add(qencode_cmd, "--icm-sweeps", &config::PipelineConfig::icm_sweeps,
                 "ICM sweeps per encode");
    qenc_cfg.add(qencode_cmd, "--threads", &config::PipelineConfig::threads, "worker cap");
    qenc_cfg.add_config_option(qencode_cmd);

    // --- search ---
    auto* search_cmd = app.add_subcommand("search", "AQD lookup-table search");
    std::string search_index, search_queries, search_out = "results.jsonl";
    int search_topn = 5000, search_threads = 0;
    bool search_no_normalize = false;
    search_cmd->add_option("--index", search_index, "index directory")->required();
    search_cmd->add_option("--queries", search_queries, "query features or embeddings (HSQV1)")
        ->required()->check(CLI::ExistingFile);
    search_cmd->add_option("--topN", search_topn, "results per query");
    search_cmd->add_option("--out", search_out, "results file (JSON lines)");
    search_cmd->add_flag("--no-normalize", search_no_normalize,
                         "embed raw queries without l2 normalization");
    search_cmd->add_option("--threads", search_threads, "worker cap");

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "retrieval metrics from results");
    std::string eval_results, eval_labels, eval_query_labels, eval_out = "report.json";
    int eval_cutoff = 5000;
    bool eval_exclude_self = false;
    std::vector<std::size_t> eval_ns;
    eval_cmd->add_option("--results", eval_results, "results file (JSON lines)")
        ->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--labels", eval_labels, "database labels (JSON lines)")
        ->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--query-labels", eval_query_labels,
                         "query labels (defaults to --labels)");
    eval_cmd->add_option("--R", eval_cutoff, "MAP cutoff");
    eval_cmd->add_option("--out", eval_out, "report file");
    eval_cmd->add_flag("--exclude-self", eval_exclude_self,
                       "drop each query's own id from its ranking");
    eval_cmd->add_option("--pn", eval_ns, "explicit P@N positions");

    // --- synth ---
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic tagged dataset");
    synth::SynthSpec spec;
    std::string synth_out;
    synth_cmd->add_option("--out", synth_out, "output directory")->required();
    synth_cmd->add_option("--clusters", spec.clusters, "semantic clusters");
    synth_cmd->add_option("--images", spec.images_per_cluster, "database images per cluster");
    synth_cmd->add_option("--queries", spec.queries_per_cluster, "queries per cluster");
    synth_cmd->add_option("--dim", spec.dim, "semantic dimension");
    synth_cmd->add_option("--feature-dim", spec.feature_dim, "image feature dimension");
    synth_cmd->add_option("--tags-per-cluster", spec.tags_per_cluster, "tags per cluster");
    synth_cmd->add_option("--min-tags", spec.min_tags_per_image, "min tags per image");
    synth_cmd->add_option("--max-tags", spec.max_tags_per_image, "max tags per image");
    synth_cmd->add_option("--tag-jitter", spec.tag_jitter, "tag embedding noise");
    synth_cmd->add_option("--noise", spec.noise, "image feature noise");
    synth_cmd->add_option("--overlap", spec.cluster_overlap, "prototype overlap");
    synth_cmd->add_option("--synonym-pairs", spec.synonym_pairs, "synonym pairs per cluster");
    synth_cmd->add_option("--synonym-bias", spec.synonym_bias,
                          "bias of one pair member toward the next cluster");
    synth_cmd->add_option("--scale-min", spec.scale_min, "min feature scale");
    synth_cmd->add_option("--scale-max", spec.scale_max, "max feature scale");
    synth_cmd->add_option("--seed", spec.seed, "RNG seed");

    // --- pipeline ---
    auto* pipe_cmd = app.add_subcommand("pipeline", "run all stages end to end");
    pipeline::PipelinePaths pipe_paths;
    std::string pipe_out, pipe_query_labels;
    ConfigResolver pipe_cfg;
    pipe_cmd->add_option("--tags", pipe_paths.tags, "tag embeddings (HSQV1)")
        ->required()->check(CLI::ExistingFile);
    pipe_cmd->add_option("--assignments", pipe_paths.assignments, "tag assignments (JSON lines)")
        ->required()->check(CLI::ExistingFile);
    pipe_cmd->add_option("--features", pipe_paths.features, "database features (HSQV1)")
        ->required()->check(CLI::ExistingFile);
    pipe_cmd->add_option("--labels", pipe_paths.labels, "database labels (JSON lines)")
        ->required()->check(CLI::ExistingFile);
    pipe_cmd->add_option("--queries", pipe_paths.queries, "query features (HSQV1)")
        ->required()->check(CLI::ExistingFile);
    pipe_cmd->add_option("--query-labels", pipe_query_labels, "query labels (JSON lines)");
    pipe_cmd->add_option("--out", pipe_out, "output directory")->required();
    pipe_cfg.add_config_option(pipe_cmd);
    pipe_cfg.add(pipe_cmd, "--k", &config::PipelineConfig::k, "neighbors per tag");
    pipe_cfg.add(pipe_cmd, "--tau", &config::PipelineConfig::tau, "correlation threshold");
    pipe_cfg.add(pipe_cmd, "--epsilon", &config::PipelineConfig::epsilon, "merging threshold");
    pipe_cfg.add(pipe_cmd, "--use-graph", &config::PipelineConfig::use_graph,
                 "enable enhancement and merging (use =false to disable)");
    pipe_cfg.add(pipe_cmd, "--normalize", &config::PipelineConfig::normalize_mode,
                 "l2 normalization (use =false for inner-product mode)");
    pipe_cfg.add(pipe_cmd, "--gamma", &config::PipelineConfig::gamma, "margin exponent");
    pipe_cfg.add(pipe_cmd, "--lambda", &config::PipelineConfig::lambda,
                 "quantization loss weight");
    pipe_cfg.add(pipe_cmd, "--K-n", &config::PipelineConfig::negatives, "hard negatives");
    pipe_cfg.add(pipe_cmd, "--learning-rate", &config::PipelineConfig::learning_rate,
                 "Adam learning rate");
    pipe_cfg.add(pipe_cmd, "--batch-size", &config::PipelineConfig::batch_size, "batch size");
    pipe_cfg.add(pipe_cmd, "--epochs", &config::PipelineConfig::epochs,
                 "embedding epochs per alternation");
    pipe_cfg.add(pipe_cmd, "--M", &config::PipelineConfig::num_books, "codebook count");
    pipe_cfg.add(pipe_cmd, "--K", &config::PipelineConfig::num_words, "codewords per book");
    pipe_cfg.add(pipe_cmd, "--iters", &config::PipelineConfig::iters, "outer alternations");
    pipe_cfg.add(pipe_cmd, "--topN", &config::PipelineConfig::top_n, "results per query");
    pipe_cfg.add(pipe_cmd, "--R", &config::PipelineConfig::cutoff, "MAP cutoff");
    pipe_cfg.add(pipe_cmd, "--seed", &config::PipelineConfig::seed, "RNG seed");
    pipe_cfg.add_flag(pipe_cmd, "--staged", &config::PipelineConfig::staged_mode,
                      "two-stage training");
    pipe_cfg.add(pipe_cmd, "--threads", &config::PipelineConfig::threads, "worker cap");

    try {
        app.parse(argc, argv);
        if (sphere_cmd->parsed())
            return cmd_build_sphere(sphere_embeddings, sphere_assignments, sphere_out,
                                    sphere_cfg.resolve());
        if (train_cmd->parsed())
            return cmd_train(train_features, train_sphere, train_out, train_cfg.resolve());
        if (qtrain_cmd->parsed())
            return cmd_quantize_train(qtrain_embeddings, qtrain_sphere, qtrain_out,
                                      qtrain_cfg.resolve());
        if (qencode_cmd->parsed())
            return cmd_quantize_encode(qenc_embeddings, qenc_sphere, qenc_out, qenc_books,
                                       qenc_cfg.resolve());
        if (search_cmd->parsed())
            return cmd_search(search_index, search_queries, search_topn, search_out,
                              search_no_normalize, search_threads);
        if (eval_cmd->parsed())
            return cmd_eval(eval_results, eval_labels, eval_query_labels, eval_cutoff, eval_out,
                            eval_exclude_self, eval_ns);
        if (synth_cmd->parsed()) return cmd_synth(spec, synth_out);
        if (pipe_cmd->parsed()) {
            pipe_paths.query_labels = pipe_query_labels;
            return cmd_pipeline(pipe_paths, pipe_cfg.resolve(), pipe_out);
        }
        std::cerr << "no subcommand selected\n";
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const hsq::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const hsq::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
