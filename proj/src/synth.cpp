#include "hsq/synth.hpp"

#include "hsq/rng.hpp"

#include <algorithm>
#include <numeric>

namespace hsq::synth {

namespace {

Vec gaussian_vec(Rng& rng, Eigen::Index dim) {
    Vec v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
    return v;
}

void validate(const SynthSpec& spec) {
    const auto require = [](bool ok, const char* what) {
        if (!ok) throw ValidationError(std::string("synth spec: ") + what);
    };
    require(spec.clusters >= 1, "cluster count must be >= 1");
    require(spec.dim >= spec.clusters, "dim must be >= cluster count");
    require(spec.feature_dim >= 1, "feature dim must be >= 1");
    require(spec.images_per_cluster >= 1, "images per cluster must be >= 1");
    require(spec.queries_per_cluster >= 0, "queries per cluster must be >= 0");
    require(spec.tags_per_cluster >= 1, "tags per cluster must be >= 1");
    require(spec.min_tags_per_image >= 1, "min tags per image must be >= 1");
    require(spec.max_tags_per_image >= spec.min_tags_per_image,
            "max tags per image must be >= min");
    require(spec.max_tags_per_image <= spec.tags_per_cluster + 2 * spec.synonym_pairs,
            "max tags per image exceeds the cluster vocabulary");
    require(spec.tag_jitter >= 0.0 && spec.noise >= 0.0, "noise levels must be >= 0");
    require(spec.synonym_pairs >= 0, "synonym pair count must be >= 0");
    require(spec.boundary_fraction >= 0.0 && spec.boundary_fraction <= 1.0,
            "boundary fraction must be in [0, 1]");
    require(spec.boundary_shift >= 0.0, "boundary shift must be >= 0");
    require(spec.scale_min > 0.0 && spec.scale_max >= spec.scale_min,
            "scale range must satisfy 0 < min <= max");
}

} // namespace

SynthData generate(const SynthSpec& spec) {
    validate(spec);
    const Eigen::Index dim = spec.dim;
    const int clusters = spec.clusters;

    // Orthonormal directions, then optionally tilted toward the next cluster.
    Rng proto_rng = Rng::keyed(spec.seed, 1);
    Mat basis(dim, clusters);
    for (int g = 0; g < clusters; ++g) {
        Vec v = gaussian_vec(proto_rng, dim);
        for (int h = 0; h < g; ++h) v -= basis.col(h).dot(v) * basis.col(h);
        const double norm = v.norm();
        if (norm < 1e-9) throw NumericalError("degenerate prototype draw");
        basis.col(g) = v / norm;
    }
    Mat prototypes(dim, clusters);
    for (int g = 0; g < clusters; ++g) {
        Vec p = basis.col(g) + spec.cluster_overlap * basis.col((g + 1) % clusters);
        prototypes.col(g) = p / p.norm();
    }

    // Per-cluster tag vocabulary: jittered copies of the prototype, plus
    // synonym pairs where the second member leans toward the next cluster.
    Rng tag_rng = Rng::keyed(spec.seed, 2);
    const int cluster_vocab = spec.tags_per_cluster + 2 * spec.synonym_pairs;
    SynthData data;
    data.tag_embeddings.resize(dim, static_cast<Eigen::Index>(clusters) * cluster_vocab);
    std::vector<std::vector<TagIndex>> cluster_tags(static_cast<std::size_t>(clusters));
    std::vector<std::vector<TagIndex>> cluster_pair_tags(static_cast<std::size_t>(clusters));
    // Clusters lean pairwise into each other (0<->1, 2<->3, ...) so biased
    // synonyms and boundary images from both sides meet between the pair.
    const auto partner = [clusters](int g) {
        const int p = g ^ 1;
        return p < clusters ? p : g;
    };

    Eigen::Index tag_col = 0;
    for (int g = 0; g < clusters; ++g) {
        const Vec next = prototypes.col(partner(g));
        for (int t = 0; t < spec.tags_per_cluster; ++t) {
            data.tag_embeddings.col(tag_col) =
                prototypes.col(g) + spec.tag_jitter * gaussian_vec(tag_rng, dim);
            cluster_tags[static_cast<std::size_t>(g)].push_back(
                static_cast<TagIndex>(tag_col));
            ++tag_col;
        }
        for (int p = 0; p < spec.synonym_pairs; ++p) {
            // Two near-copies of one direction, leaning toward the next
            // cluster: redundant and biased until enhanced and merged.
            const Vec base = prototypes.col(g) + spec.tag_jitter * gaussian_vec(tag_rng, dim) +
                             spec.synonym_bias * (next - prototypes.col(g));
            for (int copy = 0; copy < 2; ++copy) {
                data.tag_embeddings.col(tag_col) =
                    base + 0.2 * spec.tag_jitter * gaussian_vec(tag_rng, dim);
                cluster_tags[static_cast<std::size_t>(g)].push_back(
                    static_cast<TagIndex>(tag_col));
                cluster_pair_tags[static_cast<std::size_t>(g)].push_back(
                    static_cast<TagIndex>(tag_col));
                ++tag_col;
            }
        }
    }

    Rng map_rng = Rng::keyed(spec.seed, 3);
    Mat linear_map(spec.feature_dim, dim);
    for (Eigen::Index j = 0; j < dim; ++j)
        linear_map.col(j) = gaussian_vec(map_rng, spec.feature_dim) /
                            std::sqrt(static_cast<double>(dim));

    // Boundary images lean toward the next cluster and carry the synonym-pair
    // tags; core images stay near the prototype with the clean tags.
    const bool split_vocab = spec.boundary_fraction > 0.0 && spec.synonym_pairs > 0;
    std::vector<std::vector<TagIndex>> cluster_clean_tags(static_cast<std::size_t>(clusters));
    for (int g = 0; g < clusters; ++g)
        for (const TagIndex t : cluster_tags[static_cast<std::size_t>(g)])
            if (std::find(cluster_pair_tags[static_cast<std::size_t>(g)].begin(),
                          cluster_pair_tags[static_cast<std::size_t>(g)].end(),
                          t) == cluster_pair_tags[static_cast<std::size_t>(g)].end())
                cluster_clean_tags[static_cast<std::size_t>(g)].push_back(t);

    const auto make_images = [&](Rng& rng, int per_cluster, Mat& features,
                                 std::vector<io::ImageTags>* assignments,
                                 std::vector<io::ImageLabels>& labels) {
        const Eigen::Index total = static_cast<Eigen::Index>(clusters) * per_cluster;
        features.resize(spec.feature_dim, total);
        Eigen::Index col = 0;
        for (int g = 0; g < clusters; ++g) {
            const Vec next = prototypes.col(partner(g));
            for (int i = 0; i < per_cluster; ++i) {
                const bool boundary = split_vocab && rng.uniform() < spec.boundary_fraction;
                if (assignments) {
                    const auto& vocab =
                        !split_vocab ? cluster_tags[static_cast<std::size_t>(g)]
                        : boundary   ? cluster_pair_tags[static_cast<std::size_t>(g)]
                                     : cluster_clean_tags[static_cast<std::size_t>(g)];
                    const int span = spec.max_tags_per_image - spec.min_tags_per_image + 1;
                    const auto count = static_cast<std::size_t>(
                        spec.min_tags_per_image +
                        static_cast<int>(rng.bounded(static_cast<std::uint64_t>(span))));
                    std::vector<TagIndex> pick(vocab);
                    rng.shuffle(pick);
                    pick.resize(std::min(count, pick.size()));
                    std::sort(pick.begin(), pick.end());
                    assignments->push_back({static_cast<ImageId>(col), std::move(pick)});
                }
                Vec latent = prototypes.col(g) + spec.noise * gaussian_vec(rng, dim);
                if (boundary) latent += spec.boundary_shift * (next - prototypes.col(g));
                const double scale = rng.uniform(spec.scale_min, spec.scale_max);
                features.col(col) = scale * (linear_map * latent);
                labels.push_back({static_cast<ImageId>(col), {g}});
                ++col;
            }
        }
    };

    Rng image_rng = Rng::keyed(spec.seed, 4);
    make_images(image_rng, spec.images_per_cluster, data.features, &data.assignments,
                data.labels);
    Rng query_rng = Rng::keyed(spec.seed, 5);
    make_images(query_rng, spec.queries_per_cluster, data.query_features, nullptr,
                data.query_labels);
    return data;
}

DatasetPaths dataset_paths(const std::filesystem::path& dir) {
    return DatasetPaths{dir / "tags.hsqv",     dir / "assignments.jsonl",
                        dir / "features.hsqv", dir / "labels.jsonl",
                        dir / "queries.hsqv",  dir / "query_labels.jsonl"};
}

DatasetPaths write_dataset(const std::filesystem::path& dir, const SynthData& data) {
    std::filesystem::create_directories(dir);
    const auto paths = dataset_paths(dir);
    io::write_embeddings(paths.tags, data.tag_embeddings);
    io::write_assignments(paths.assignments, data.assignments);
    io::write_embeddings(paths.features, data.features);
    io::write_labels(paths.labels, data.labels);
    io::write_embeddings(paths.queries, data.query_features);
    io::write_labels(paths.query_labels, data.query_labels);
    return paths;
}

} // namespace hsq::synth
