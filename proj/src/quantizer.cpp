#include "hsq/quantizer.hpp"

#include "hsq/parallel.hpp"
#include "hsq/rng.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

namespace hsq::quantizer {

double PerturbationSchedule::temperature(int iteration) const {
    if (total_iterations <= 0) return 0.0;
    const double frac = static_cast<double>(iteration) / total_iterations;
    return std::sqrt(std::max(0.0, 1.0 - frac));
}

Mat kmeans(const Mat& points, int num_clusters, int iterations, std::uint64_t seed) {
    const Eigen::Index n = points.cols();
    const Eigen::Index dim = points.rows();
    if (num_clusters <= 0) throw ValidationError("cluster count must be positive");
    if (n < num_clusters)
        throw ValidationError("k-means needs at least " + std::to_string(num_clusters) +
                              " points, got " + std::to_string(n));

    Rng rng(seed);
    Mat centroids(dim, num_clusters);
    std::vector<bool> chosen(static_cast<std::size_t>(n), false);

    // k-means++ style seeding: squared-distance-weighted picks.
    {
        const auto first = static_cast<Eigen::Index>(rng.bounded(static_cast<std::uint64_t>(n)));
        centroids.col(0) = points.col(first);
        chosen[static_cast<std::size_t>(first)] = true;
        Vec dist2(n);
        for (Eigen::Index i = 0; i < n; ++i)
            dist2(i) = (points.col(i) - centroids.col(0)).squaredNorm();
        for (int c = 1; c < num_clusters; ++c) {
            const double total = dist2.sum();
            Eigen::Index pick = -1;
            if (total > 0.0) {
                const double target = rng.uniform() * total;
                double cum = 0.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    cum += dist2(i);
                    if (cum >= target) {
                        pick = i;
                        break;
                    }
                }
                if (pick < 0) pick = n - 1;
            } else {
                // Duplicated points: fall back to the smallest unchosen index.
                for (Eigen::Index i = 0; i < n; ++i)
                    if (!chosen[static_cast<std::size_t>(i)]) {
                        pick = i;
                        break;
                    }
                if (pick < 0) pick = 0;
            }
            centroids.col(c) = points.col(pick);
            chosen[static_cast<std::size_t>(pick)] = true;
            for (Eigen::Index i = 0; i < n; ++i)
                dist2(i) = std::min(dist2(i), (points.col(i) - centroids.col(c)).squaredNorm());
        }
    }

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    std::vector<int> prev_assign;
    for (int iter = 0; iter < iterations; ++iter) {
        prev_assign = assign;
        std::vector<double> point_dist2(static_cast<std::size_t>(n), 0.0);
        for (Eigen::Index i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (int c = 0; c < num_clusters; ++c) {
                const double d2 = (points.col(i) - centroids.col(c)).squaredNorm();
                if (d2 < best) {
                    best = d2;
                    best_c = c;
                }
            }
            assign[static_cast<std::size_t>(i)] = best_c;
            point_dist2[static_cast<std::size_t>(i)] = best;
        }

        // Re-seed empty clusters from the farthest point.
        std::vector<std::int64_t> counts(static_cast<std::size_t>(num_clusters), 0);
        for (const int a : assign) ++counts[static_cast<std::size_t>(a)];
        for (int c = 0; c < num_clusters; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) continue;
            Eigen::Index far = -1;
            double far_d2 = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto ii = static_cast<std::size_t>(i);
                if (counts[static_cast<std::size_t>(assign[ii])] <= 1) continue;
                if (point_dist2[ii] > far_d2) {
                    far_d2 = point_dist2[ii];
                    far = i;
                }
            }
            if (far < 0) continue;
            const auto fi = static_cast<std::size_t>(far);
            --counts[static_cast<std::size_t>(assign[fi])];
            assign[fi] = c;
            ++counts[static_cast<std::size_t>(c)];
            point_dist2[fi] = 0.0;
        }

        centroids.setZero();
        for (Eigen::Index i = 0; i < n; ++i)
            centroids.col(assign[static_cast<std::size_t>(i)]) += points.col(i);
        for (int c = 0; c < num_clusters; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0)
                centroids.col(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);

        if (assign == prev_assign) break;
    }
    return centroids;
}

namespace {

int nearest_column(const Vec& point, const Mat& centroids) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (Eigen::Index c = 0; c < centroids.cols(); ++c) {
        const double d2 = (point - centroids.col(c)).squaredNorm();
        if (d2 < best) {
            best = d2;
            best_c = static_cast<int>(c);
        }
    }
    return best_c;
}

} // namespace

Codebooks init_codebooks(const Mat& embeddings, int num_books, int num_words,
                         std::uint64_t seed, int kmeans_iterations) {
    if (num_books <= 0) throw ValidationError("book count must be positive");
    Codebooks books;
    books.num_books = num_books;
    books.num_words = num_words;
    books.codewords.resize(embeddings.rows(),
                           static_cast<Eigen::Index>(num_books) * num_words);
    Mat residual = embeddings;
    for (int m = 0; m < num_books; ++m) {
        const Mat centroids = kmeans(residual, num_words, kmeans_iterations, seed + m);
        books.codewords.middleCols(static_cast<Eigen::Index>(m) * num_words, num_words) =
            centroids;
        if (m + 1 == num_books) break;
        for (Eigen::Index i = 0; i < residual.cols(); ++i)
            residual.col(i) -= centroids.col(nearest_column(residual.col(i), centroids));
    }
    return books;
}

Vec reconstruct(const Codebooks& books, const CodeWord* code) {
    Vec out = Vec::Zero(books.dim());
    for (int m = 0; m < books.num_books; ++m) out += books.word(m, code[m]);
    return out;
}

Mat reconstruct_all(const Codebooks& books, const CodeMatrix& codes, int threads) {
    Mat out(books.dim(), static_cast<Eigen::Index>(codes.count));
    parallel_chunks(codes.count, resolve_threads(threads),
                    [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t n = begin; n < end; ++n)
            out.col(static_cast<Eigen::Index>(n)) = reconstruct(books, codes.row(n));
    });
    return out;
}

double encoding_cost(const Vec& r, const CodeWord* code, const Codebooks& books,
                     const Mat& sigma) {
    const Vec residual = r - reconstruct(books, code);
    return residual.dot(sigma * residual);
}

IcmTables build_icm_tables(const Codebooks& books, const Mat& sigma) {
    IcmTables tables;
    tables.sigma_words.noalias() = sigma * books.codewords;
    tables.gram.noalias() = books.codewords.transpose() * tables.sigma_words;
    tables.self = tables.gram.diagonal();
    return tables;
}

void icm_encode(const Vec& r, const Codebooks& books, const Mat& sigma, const IcmTables& tables,
                int sweeps, CodeWord* code, bool warm, std::vector<double>* cost_trace) {
    if (sweeps < 1) throw ValidationError("ICM needs at least one sweep");
    const int M = books.num_books;
    const int K = books.num_words;
    const Vec proj = tables.sigma_words.transpose() * r;  // c^T Sigma r per word

    if (!warm) {
        // Symmetric seed: each book independently takes its best standalone
        // word; the sweeps then resolve the interactions.
        for (int m = 0; m < M; ++m) {
            double best = std::numeric_limits<double>::infinity();
            int best_k = 0;
            for (int k = 0; k < K; ++k) {
                const Eigen::Index c = books.column(m, k);
                const double score = tables.self(c) - 2.0 * proj(c);
                if (score < best) {
                    best = score;
                    best_k = k;
                }
            }
            code[m] = static_cast<CodeWord>(best_k);
        }
    }
    if (cost_trace) cost_trace->push_back(encoding_cost(r, code, books, sigma));

    // cross(c) = sum over books m' != book(c) of c^T Sigma c_{m' chosen}.
    Vec cross = Vec::Zero(static_cast<Eigen::Index>(M) * K);
    for (int m2 = 0; m2 < M; ++m2) {
        const Eigen::Index chosen = books.column(m2, code[m2]);
        for (int m = 0; m < M; ++m) {
            if (m == m2) continue;
            cross.segment(static_cast<Eigen::Index>(m) * K, K) +=
                tables.gram.col(chosen).segment(static_cast<Eigen::Index>(m) * K, K);
        }
    }

    for (int sweep = 0; sweep < sweeps; ++sweep) {
        bool changed = false;
        for (int m = 0; m < M; ++m) {
            const Eigen::Index base = static_cast<Eigen::Index>(m) * K;
            double best = std::numeric_limits<double>::infinity();
            int best_k = 0;
            for (int k = 0; k < K; ++k) {
                const Eigen::Index c = base + k;
                const double score = tables.self(c) - 2.0 * proj(c) + 2.0 * cross(c);
                if (score < best) {
                    best = score;
                    best_k = k;
                }
            }
            const int old_k = code[m];
            if (best_k != old_k) {
                const Eigen::Index oldc = base + old_k;
                const Eigen::Index newc = base + best_k;
                for (int m2 = 0; m2 < M; ++m2) {
                    if (m2 == m) continue;
                    const Eigen::Index seg = static_cast<Eigen::Index>(m2) * K;
                    cross.segment(seg, K) += tables.gram.col(newc).segment(seg, K) -
                                             tables.gram.col(oldc).segment(seg, K);
                }
                code[m] = static_cast<CodeWord>(best_k);
                changed = true;
            }
            if (cost_trace) cost_trace->push_back(encoding_cost(r, code, books, sigma));
        }
        if (!changed) break;
    }
}

CodeMatrix encode_all(const Mat& embeddings, const Codebooks& books, const Mat& sigma,
                      int sweeps, const CodeMatrix* previous, int threads) {
    CodeMatrix codes;
    codes.count = static_cast<std::size_t>(embeddings.cols());
    codes.num_books = books.num_books;
    codes.codes.resize(codes.count * static_cast<std::size_t>(books.num_books));
    if (previous) {
        if (previous->count != codes.count || previous->num_books != codes.num_books)
            throw ValidationError("warm-start code matrix shape mismatch");
        for (const CodeWord c : previous->codes)
            if (c >= books.num_words)
                throw ValidationError("warm-start code entry out of range");
        codes.codes = previous->codes;
    }
    const IcmTables tables = build_icm_tables(books, sigma);
    parallel_chunks(codes.count, resolve_threads(threads),
                    [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t n = begin; n < end; ++n)
            icm_encode(embeddings.col(static_cast<Eigen::Index>(n)), books, sigma, tables,
                       sweeps, codes.codes.data() + n * static_cast<std::size_t>(books.num_books),
                       previous != nullptr);
    });
    return codes;
}

Vec covariance_diagonal(const Mat& embeddings) {
    if (embeddings.cols() == 0) throw ValidationError("covariance of an empty embedding set");
    const Vec mean = embeddings.rowwise().mean();
    Vec var = Vec::Zero(embeddings.rows());
    for (Eigen::Index i = 0; i < embeddings.cols(); ++i)
        var += (embeddings.col(i) - mean).cwiseAbs2();
    return var / static_cast<double>(embeddings.cols());
}

PerturbationSchedule make_schedule(int total_iterations, const Mat& embeddings,
                                   std::uint64_t seed) {
    if (total_iterations < 0) throw ValidationError("iteration count must be >= 0");
    PerturbationSchedule schedule;
    schedule.total_iterations = total_iterations;
    schedule.coord_std = covariance_diagonal(embeddings).cwiseSqrt();
    schedule.seed = seed;
    return schedule;
}

Codebooks perturb_codebooks(const Codebooks& books, int iteration,
                            const PerturbationSchedule& schedule) {
    if (iteration < 0 || iteration > schedule.total_iterations)
        throw ValidationError("perturbation iteration out of range");
    if (schedule.coord_std.size() != books.dim())
        throw ValidationError("perturbation schedule dim does not match codebooks");
    const double temp = schedule.temperature(iteration);
    if (temp == 0.0) return books;
    const double scale = temp / books.num_books;
    Codebooks out = books;
    for (int m = 0; m < books.num_books; ++m)
        for (int k = 0; k < books.num_words; ++k) {
            Rng rng = Rng::keyed(schedule.seed, static_cast<std::uint64_t>(iteration),
                                 static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(k));
            const Eigen::Index c = books.column(m, k);
            for (Eigen::Index d = 0; d < books.dim(); ++d)
                out.codewords(d, c) += scale * schedule.coord_std(d) * rng.normal();
        }
    return out;
}

NormalEquations assemble_normal_equations(const Mat& embeddings, const CodeMatrix& codes,
                                          int num_words, int threads) {
    const int M = codes.num_books;
    const int K = num_words;
    const auto n = codes.count;
    if (static_cast<std::size_t>(embeddings.cols()) != n)
        throw ValidationError("embedding count does not match code count");
    for (std::size_t i = 0; i < codes.codes.size(); ++i)
        if (codes.codes[i] >= K)
            throw ValidationError("code row " + std::to_string(i / M) + " has entry " +
                                  std::to_string(codes.codes[i]) + " >= K=" + std::to_string(K));

    const Eigen::Index mk = static_cast<Eigen::Index>(M) * K;
    const int workers = resolve_threads(threads);

    // Univariate and bivariate code histograms, one partial set per worker.
    std::vector<std::vector<std::int64_t>> hist_parts(
        static_cast<std::size_t>(workers),
        std::vector<std::int64_t>(static_cast<std::size_t>(mk) * mk, 0));
    std::vector<Mat> rbt_parts(static_cast<std::size_t>(workers),
                               Mat::Zero(embeddings.rows(), mk));

    parallel_chunks(n, workers, [&](int worker, std::size_t begin, std::size_t end) {
        auto& hist = hist_parts[static_cast<std::size_t>(worker)];
        auto& rbt = rbt_parts[static_cast<std::size_t>(worker)];
        for (std::size_t i = begin; i < end; ++i) {
            const CodeWord* row = codes.row(i);
            for (int a = 0; a < M; ++a) {
                const auto ca = static_cast<std::size_t>(a) * K + row[a];
                rbt.col(static_cast<Eigen::Index>(ca)) +=
                    embeddings.col(static_cast<Eigen::Index>(i));
                for (int b = 0; b < M; ++b) {
                    const auto cb = static_cast<std::size_t>(b) * K + row[b];
                    ++hist[ca * static_cast<std::size_t>(mk) + cb];
                }
            }
        }
    });

    NormalEquations eq;
    eq.bbt = Mat::Zero(mk, mk);
    eq.rbt = Mat::Zero(embeddings.rows(), mk);
    for (int w = 0; w < workers; ++w) {
        const auto& hist = hist_parts[static_cast<std::size_t>(w)];
        for (Eigen::Index a = 0; a < mk; ++a)
            for (Eigen::Index b = 0; b < mk; ++b)
                eq.bbt(a, b) += static_cast<double>(
                    hist[static_cast<std::size_t>(a) * static_cast<std::size_t>(mk) +
                         static_cast<std::size_t>(b)]);
        eq.rbt += rbt_parts[static_cast<std::size_t>(w)];
    }
    return eq;
}

Codebooks update_codebooks(const Mat& embeddings, const CodeMatrix& codes, int num_words,
                           int threads) {
    const auto eq = assemble_normal_equations(embeddings, codes, num_words, threads);
    const Eigen::Index mk = eq.bbt.rows();
    const double ridge = 1e-6 * eq.bbt.trace() / static_cast<double>(mk);
    Mat system = eq.bbt;
    system.diagonal().array() += ridge;

    const Eigen::LLT<Mat> llt(system);
    if (llt.info() != Eigen::Success)
        throw NumericalError("normal equations singular after ridge " + std::to_string(ridge) +
                             "; increase the ridge or provide more data");

    Codebooks books;
    books.num_books = codes.num_books;
    books.num_words = num_words;
    books.codewords = llt.solve(eq.rbt.transpose()).transpose();

    const double solve_residual = (eq.rbt - books.codewords * system).cwiseAbs().maxCoeff();
    const double embed_max = embeddings.size() > 0 ? embeddings.cwiseAbs().maxCoeff() : 0.0;
    if (solve_residual > 1e-6 * std::max(embed_max, 1e-12))
        throw NumericalError("codebook solve residual " + std::to_string(solve_residual) +
                             " exceeds tolerance; system is ill-conditioned");
    return books;
}

double quantization_objective(const Mat& embeddings, const CodeMatrix& codes,
                              const Codebooks& books, const Mat& sigma) {
    const Mat residual = embeddings - reconstruct_all(books, codes);
    return (residual.array() * (sigma * residual).array()).sum();
}

namespace {

IterationStats stats_from_epoch(int iteration, const hypersphere::EpochReport& report,
                                double lambda, double encode_cost) {
    IterationStats stats;
    stats.iteration = iteration;
    stats.mean_margin_loss = report.mean_margin_loss;
    stats.mean_quant_cos_loss = report.mean_quant_loss;
    stats.encode_cost = encode_cost;
    stats.objective = (report.mean_margin_loss + lambda * report.mean_quant_loss) *
                      static_cast<double>(report.images);
    stats.empty_negative_sets = report.empty_negative_sets;
    stats.zero_recon_flags = report.zero_recon_flags;
    return stats;
}

Mat trainable_features(const TrainData& data) {
    Mat out(data.features.rows(), static_cast<Eigen::Index>(data.trainable.size()));
    for (std::size_t i = 0; i < data.trainable.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) =
            data.features.col(static_cast<Eigen::Index>(data.trainable[i]));
    return out;
}

} // namespace

QuantizeOnlyResult train_quantizer(const Mat& embeddings, const Mat& sigma,
                                   const QuantConfig& cfg) {
    if (cfg.alternations < 1) throw ValidationError("alternation count must be >= 1");
    QuantizeOnlyResult result;
    result.phase.name = "quantizer";
    result.books = init_codebooks(embeddings, cfg.num_books, cfg.num_words, cfg.seed,
                                  cfg.kmeans_iterations);
    result.codes =
        encode_all(embeddings, result.books, sigma, cfg.icm_sweeps, nullptr, cfg.threads);

    for (int i = 0; i < cfg.alternations; ++i) {
        const Codebooks* encode_books = &result.books;
        Codebooks perturbed;
        if (cfg.perturb) {
            const auto schedule = make_schedule(cfg.alternations, embeddings, cfg.seed);
            perturbed = perturb_codebooks(result.books, i, schedule);
            encode_books = &perturbed;
        }
        result.codes = encode_all(embeddings, *encode_books, sigma, cfg.icm_sweeps,
                                  &result.codes, cfg.threads);
        result.books = update_codebooks(embeddings, result.codes, cfg.num_words, cfg.threads);

        IterationStats stats;
        stats.iteration = i;
        stats.encode_cost = quantization_objective(embeddings, result.codes, result.books, sigma);
        result.phase.iterations.push_back(stats);
    }

    // Database codes always come from a clean pass over unperturbed codebooks.
    result.codes = encode_all(embeddings, result.books, sigma, cfg.icm_sweeps, &result.codes,
                              cfg.threads);
    return result;
}

AlternateResult alternate_optimize(const TrainData& data, TransformLayer& layer,
                                   const SemanticSphere& sphere, const TrainConfig& train_cfg,
                                   const QuantConfig& quant_cfg) {
    if (quant_cfg.alternations < 1) throw ValidationError("alternation count must be >= 1");
    const Mat features = trainable_features(data);
    auto adam = hypersphere::init_adam(layer);
    Rng shuffle_rng(train_cfg.seed);

    AlternateResult result;

    if (train_cfg.staged_mode) {
        // Stage one: semantics-preserving embedding only; stage two: quantizer.
        Phase embed_phase;
        embed_phase.name = "embedding";
        const int stage_epochs = train_cfg.epochs * quant_cfg.alternations;
        for (int e = 0; e < stage_epochs; ++e) {
            const auto report = hypersphere::train_epoch(data, layer, adam, sphere, nullptr,
                                                         train_cfg, shuffle_rng);
            embed_phase.iterations.push_back(stats_from_epoch(e, report, 0.0, 0.0));
        }
        result.phases.push_back(std::move(embed_phase));

        const Mat embedded = hypersphere::forward_all(layer, features, train_cfg.threads);
        auto staged = train_quantizer(embedded, sphere.covariance, quant_cfg);
        result.books = std::move(staged.books);
        result.codes = std::move(staged.codes);
        result.phases.push_back(std::move(staged.phase));
        result.adam = std::move(adam);
        return result;
    }

    Mat embedded = hypersphere::forward_all(layer, features, train_cfg.threads);
    Codebooks books = init_codebooks(embedded, quant_cfg.num_books, quant_cfg.num_words,
                                     quant_cfg.seed, quant_cfg.kmeans_iterations);
    CodeMatrix codes = encode_all(embedded, books, sphere.covariance, quant_cfg.icm_sweeps,
                                  nullptr, quant_cfg.threads);

    Phase main_phase;
    main_phase.name = "joint";
    for (int i = 0; i < quant_cfg.alternations; ++i) {
        hypersphere::EpochReport report;
        if (train_cfg.epochs > 0) {
            const Mat recon = reconstruct_all(books, codes, quant_cfg.threads);
            for (int e = 0; e < train_cfg.epochs; ++e)
                report = hypersphere::train_epoch(data, layer, adam, sphere, &recon, train_cfg,
                                                  shuffle_rng);
            embedded = hypersphere::forward_all(layer, features, train_cfg.threads);
        }

        const Codebooks* encode_books = &books;
        Codebooks perturbed;
        if (quant_cfg.perturb) {
            const auto schedule =
                make_schedule(quant_cfg.alternations, embedded, quant_cfg.seed);
            perturbed = perturb_codebooks(books, i, schedule);
            encode_books = &perturbed;
        }
        codes = encode_all(embedded, *encode_books, sphere.covariance, quant_cfg.icm_sweeps,
                           &codes, quant_cfg.threads);
        books = update_codebooks(embedded, codes, quant_cfg.num_words, quant_cfg.threads);

        const double cost = quantization_objective(embedded, codes, books, sphere.covariance);
        main_phase.iterations.push_back(stats_from_epoch(i, report, train_cfg.lambda, cost));
    }
    result.phases.push_back(std::move(main_phase));

    // Database codes always come from a clean pass over unperturbed codebooks.
    result.codes = encode_all(embedded, books, sphere.covariance, quant_cfg.icm_sweeps, &codes,
                              quant_cfg.threads);
    result.books = std::move(books);
    result.adam = std::move(adam);
    return result;
}

} // namespace hsq::quantizer
