#include "hsq/tag_semantics.hpp"

#include "hsq/parallel.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>

namespace hsq::tag_semantics {

namespace {

std::vector<double> column_norms(const Mat& m) {
    std::vector<double> norms(m.cols());
    for (Eigen::Index i = 0; i < m.cols(); ++i) norms[static_cast<std::size_t>(i)] = m.col(i).norm();
    return norms;
}

} // namespace

TagEmbeddingMatrix load_tag_embeddings(const std::filesystem::path& path) {
    TagEmbeddingMatrix tags;
    tags.vectors = io::read_embeddings(path, /*reject_zero=*/true);
    if (tags.vectors.cols() == 0) throw ValidationError(path.string() + ": no tag records");
    auto sidecar = path;
    sidecar += ".names.jsonl";
    if (std::filesystem::exists(sidecar))
        tags.names = io::read_names(sidecar, static_cast<std::size_t>(tags.vectors.cols()));
    return tags;
}

CorrelationGraph build_correlation_graph(const TagEmbeddingMatrix& tags, int k, double tau,
                                         int threads) {
    if (k < 0) throw ValidationError("neighbor count k must be >= 0");
    if (tau < -1.0 || tau > 1.0) throw ValidationError("correlation threshold tau must be in [-1,1]");

    const Eigen::Index n = tags.count();
    const auto norms = column_norms(tags.vectors);
    for (Eigen::Index i = 0; i < n; ++i)
        if (norms[static_cast<std::size_t>(i)] == 0.0)
            throw ValidationError("zero-norm tag embedding at column " + std::to_string(i));

    CorrelationGraph graph;
    graph.k = k;
    graph.tau = tau;
    graph.neighbors.resize(static_cast<std::size_t>(n));

    parallel_chunks(static_cast<std::size_t>(n), resolve_threads(threads),
                    [&](int, std::size_t begin, std::size_t end) {
        std::vector<std::pair<double, TagIndex>> scored;
        for (std::size_t i = begin; i < end; ++i) {
            scored.clear();
            const Vec anchor = tags.vectors.col(static_cast<Eigen::Index>(i)) / norms[i];
            for (Eigen::Index j = 0; j < n; ++j) {
                if (static_cast<std::size_t>(j) == i) continue;
                const double cos = anchor.dot(tags.vectors.col(j)) /
                                   norms[static_cast<std::size_t>(j)];
                scored.emplace_back(cos, static_cast<TagIndex>(j));
            }
            // k-NN cutoff: larger cosine first, ties to the smaller index.
            const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
            std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                              scored.end(), [](const auto& a, const auto& b) {
                                  if (a.first != b.first) return a.first > b.first;
                                  return a.second < b.second;
                              });
            auto& row = graph.neighbors[i];
            row.push_back(static_cast<TagIndex>(i));
            for (std::size_t t = 0; t < take; ++t)
                if (scored[t].first >= tau) row.push_back(scored[t].second);
            std::sort(row.begin(), row.end());
        }
    });
    return graph;
}

Mat enhance(const TagEmbeddingMatrix& tags, const CorrelationGraph& graph) {
    if (graph.neighbors.size() != static_cast<std::size_t>(tags.count()))
        throw ValidationError("correlation graph was not built over this tag matrix");
    Mat out(tags.dim(), tags.count());
    for (Eigen::Index i = 0; i < tags.count(); ++i) {
        const auto& row = graph.neighbors[static_cast<std::size_t>(i)];
        Vec sum = Vec::Zero(tags.dim());
        for (const TagIndex j : row) sum += tags.vectors.col(static_cast<Eigen::Index>(j));
        out.col(i) = sum / static_cast<double>(row.size());
    }
    return out;
}

MergeRemap merge_sparse_tags(const Mat& enhanced, double epsilon) {
    if (epsilon <= 0.0) throw ValidationError("merging threshold epsilon must be > 0");
    const Eigen::Index n = enhanced.cols();
    MergeRemap remap;
    remap.old_to_new.assign(static_cast<std::size_t>(n), 0);

    std::vector<bool> processed(static_cast<std::size_t>(n), false);
    std::vector<Vec> merged_cols;
    std::vector<Eigen::Index> reachable;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (processed[static_cast<std::size_t>(i)]) continue;
        reachable.clear();
        for (Eigen::Index j = i; j < n; ++j) {
            if (processed[static_cast<std::size_t>(j)]) continue;
            if ((enhanced.col(i) - enhanced.col(j)).norm() < epsilon) reachable.push_back(j);
        }
        const auto new_index = static_cast<TagIndex>(merged_cols.size());
        Vec mean = Vec::Zero(enhanced.rows());
        for (const Eigen::Index j : reachable) {
            mean += enhanced.col(j);
            processed[static_cast<std::size_t>(j)] = true;
            remap.old_to_new[static_cast<std::size_t>(j)] = new_index;
        }
        merged_cols.push_back(mean / static_cast<double>(reachable.size()));
    }

    remap.merged.resize(enhanced.rows(), static_cast<Eigen::Index>(merged_cols.size()));
    for (std::size_t c = 0; c < merged_cols.size(); ++c)
        remap.merged.col(static_cast<Eigen::Index>(c)) = merged_cols[c];
    return remap;
}

RefreshedSets refresh_image_tag_sets(const std::vector<io::ImageTags>& assignments,
                                     const MergeRemap& remap) {
    RefreshedSets out;
    for (const auto& row : assignments) {
        std::vector<TagIndex> mapped;
        mapped.reserve(row.tags.size());
        for (const TagIndex t : row.tags) {
            if (t >= remap.old_to_new.size())
                throw ValidationError("image " + std::to_string(row.image) +
                                      ": unknown tag id " + std::to_string(t));
            mapped.push_back(remap.old_to_new[t]);
        }
        std::sort(mapped.begin(), mapped.end());
        mapped.erase(std::unique(mapped.begin(), mapped.end()), mapped.end());
        if (mapped.empty()) {
            out.excluded_images.push_back(row.image);
        } else {
            out.image_ids.push_back(row.image);
            out.sets.push_back(std::move(mapped));
        }
    }
    return out;
}

SemanticSphere build_semantic_sphere(const Mat& merged, const RefreshedSets& refreshed,
                                     bool normalize) {
    SemanticSphere sphere;
    sphere.normalized = normalize;
    sphere.unit_tags = merged;
    for (Eigen::Index i = 0; i < merged.cols(); ++i) {
        const double norm = merged.col(i).norm();
        if (norm == 0.0)
            throw ValidationError("zero-norm embedding after merging at column " +
                                  std::to_string(i));
        if (normalize) sphere.unit_tags.col(i) /= norm;
    }

    sphere.covariance = Mat::Zero(merged.rows(), merged.rows());
    sphere.covariance.selfadjointView<Eigen::Lower>().rankUpdate(sphere.unit_tags);
    sphere.covariance.triangularView<Eigen::StrictlyUpper>() =
        sphere.covariance.transpose().triangularView<Eigen::StrictlyUpper>();

    for (const auto& set : refreshed.sets)
        for (const TagIndex t : set)
            if (static_cast<Eigen::Index>(t) >= merged.cols())
                throw ValidationError("refreshed tag index " + std::to_string(t) +
                                      " out of range");
    sphere.image_ids = refreshed.image_ids;
    sphere.image_sets = refreshed.sets;
    sphere.excluded_images = refreshed.excluded_images;
    return sphere;
}

SemanticSphere build_sphere(const TagEmbeddingMatrix& tags,
                            const std::vector<io::ImageTags>& assignments,
                            const SphereOptions& opts) {
    if (opts.use_graph) {
        const auto graph = build_correlation_graph(tags, opts.k, opts.tau, opts.threads);
        const Mat enhanced = enhance(tags, graph);
        const auto remap = merge_sparse_tags(enhanced, opts.epsilon);
        const auto refreshed = refresh_image_tag_sets(assignments, remap);
        return build_semantic_sphere(remap.merged, refreshed, opts.normalize);
    }
    MergeRemap identity;
    identity.old_to_new.resize(static_cast<std::size_t>(tags.count()));
    for (std::size_t i = 0; i < identity.old_to_new.size(); ++i)
        identity.old_to_new[i] = static_cast<TagIndex>(i);
    identity.merged = tags.vectors;
    const auto refreshed = refresh_image_tag_sets(assignments, identity);
    return build_semantic_sphere(identity.merged, refreshed, opts.normalize);
}

void save_sphere(const std::filesystem::path& dir, const SemanticSphere& sphere) {
    std::filesystem::create_directories(dir);
    io::write_embeddings(dir / "sphere.hsqv", sphere.unit_tags);
    std::vector<io::ImageTags> rows;
    rows.reserve(sphere.image_ids.size());
    for (std::size_t i = 0; i < sphere.image_ids.size(); ++i)
        rows.push_back({sphere.image_ids[i], sphere.image_sets[i]});
    io::write_assignments(dir / "image_sets.jsonl", rows);

    nlohmann::json meta;
    meta["normalized"] = sphere.normalized;
    meta["tag_count"] = sphere.tag_count();
    meta["dim"] = sphere.dim();
    meta["excluded_images"] = sphere.excluded_images;
    std::ofstream out(dir / "meta.json", std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
}

SemanticSphere load_sphere(const std::filesystem::path& dir) {
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in) throw ValidationError("cannot open " + (dir / "meta.json").string());
    nlohmann::json meta = nlohmann::json::parse(meta_in, nullptr, false);
    if (meta.is_discarded()) throw ValidationError((dir / "meta.json").string() + ": bad JSON");

    Mat tags = io::read_embeddings(dir / "sphere.hsqv");
    RefreshedSets refreshed;
    for (const auto& row : io::read_assignments(dir / "image_sets.jsonl")) {
        refreshed.image_ids.push_back(row.image);
        refreshed.sets.push_back(row.tags);
    }
    if (meta.contains("excluded_images"))
        for (const auto& id : meta["excluded_images"])
            refreshed.excluded_images.push_back(id.get<ImageId>());

    const bool normalized = !meta.contains("normalized") || meta["normalized"].get<bool>();
    // Covariance is derived from the stored tags, so the round trip stays exact.
    return build_semantic_sphere(tags, refreshed, normalized);
}

} // namespace hsq::tag_semantics
