#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hsq/hypersphere.hpp"
#include "hsq/quantizer.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numeric>

using namespace hsq;
using namespace hsq::hypersphere;

TEST_CASE("forward pass") {
    SUBCASE("tanh saturation lands on the diagonal") {
        TransformLayer layer;
        layer.weights = Mat::Constant(4, 3, 50.0);
        const Vec r = forward(layer, Vec::Constant(3, 1.0));
        for (Eigen::Index d = 0; d < 4; ++d) CHECK(r(d) == doctest::Approx(0.5).epsilon(1e-9));
    }
    SUBCASE("output is always unit") {
        Rng rng(41);
        auto layer = init_layer(8, 16, 7);
        for (int t = 0; t < 20; ++t) {
            const Vec r = forward(layer, test::gaussian_vec(rng, 16));
            CHECK(std::abs(r.norm() - 1.0) < 1e-6);
        }
    }
    SUBCASE("matches a straight-line scalar recomputation") {
        Rng rng(42);
        auto layer = init_layer(8, 16, 9);
        const Vec v = test::gaussian_vec(rng, 16);
        const Vec r = forward(layer, v);
        Vec u(8);
        for (int d = 0; d < 8; ++d) {
            double z = 0.0;
            for (int j = 0; j < 16; ++j) z += layer.weights(d, j) * v(j);
            u(d) = std::tanh(z);
        }
        const double norm = test::norm_scalar(u);
        for (int d = 0; d < 8; ++d) CHECK(std::abs(r(d) - u(d) / norm) < 1e-9);
    }
    SUBCASE("dead activation is reported") {
        auto layer = init_layer(4, 4, 1);
        CHECK_THROWS_WITH_AS(forward(layer, Vec::Zero(4)), doctest::Contains("degenerate"),
                             NumericalError);
    }
    SUBCASE("normalize off returns the raw activation") {
        auto layer = init_layer(4, 4, 1, /*normalize=*/false);
        const Vec v = Vec::Constant(4, 0.3);
        const Vec r = forward(layer, v);
        CHECK((r - (layer.weights * v).array().tanh().matrix()).norm() == 0.0);
    }
}

TEST_CASE("hard negative mining") {
    Rng rng(43);
    const Mat tags = test::gaussian_mat(rng, 6, 5);
    const auto sphere = test::make_sphere(tags, {{0}});

    SUBCASE("K_n clamps to all non-positives") {
        const Vec r = test::random_unit(rng, 6);
        const auto negs = hard_negatives(r, sphere, {0}, 100);
        CHECK(negs.size() == 4);
    }
    SUBCASE("matches a full sort oracle with hand-set cosines") {
        // Tags along coordinate axes: cosines to r are just r's entries.
        const auto axis_sphere = test::make_sphere(Mat::Identity(5, 5), {{0}});
        Vec r(5);
        r << 0.9, 0.1, 0.7, 0.3, 0.5;
        r.normalize();
        const auto negs = hard_negatives(r, axis_sphere, {0}, 2);
        CHECK(negs == std::vector<TagIndex>{2, 4});
    }
    SUBCASE("dominance: selected beat excluded") {
        for (int t = 0; t < 10; ++t) {
            const Mat tags2 = test::gaussian_mat(rng, 6, 12);
            const auto sp = test::make_sphere(tags2, {{1, 3}});
            const Vec r = test::random_unit(rng, 6);
            const std::vector<TagIndex> pos = {1, 3};
            const auto negs = hard_negatives(r, sp, pos, 4);
            REQUIRE(negs.size() == 4);
            double worst_selected = 1e300;
            for (const TagIndex j : negs)
                worst_selected = std::min(worst_selected, sp.unit_tags.col(j).dot(r));
            for (TagIndex j = 0; j < 12; ++j) {
                if (j == 1 || j == 3) continue;
                if (std::find(negs.begin(), negs.end(), j) != negs.end()) continue;
                CHECK(sp.unit_tags.col(j).dot(r) <= worst_selected + 1e-12);
            }
        }
    }
    SUBCASE("positives covering every tag give an empty set") {
        const auto negs =
            hard_negatives(test::random_unit(rng, 6), sphere, {0, 1, 2, 3, 4}, 10);
        CHECK(negs.empty());
    }
}

TEST_CASE("adaptive margin") {
    SUBCASE("direct substitutions") {
        CHECK(adaptive_margin_from_cos(1.0, 0.5) == 0.0);
        CHECK(adaptive_margin_from_cos(1.0, 3.0) == 0.0);
        CHECK(adaptive_margin_from_cos(-1.0, 1.0) == doctest::Approx(2.0));
        CHECK(adaptive_margin_from_cos(0.0, 2.0) == doctest::Approx(0.5));
    }
    SUBCASE("vector form agrees") {
        Vec a = Vec::Unit(3, 0);
        Vec b(3);
        b << 0.0, 1.0, 0.0;
        CHECK(adaptive_margin(a, b, 2.0) == doctest::Approx(0.5));
    }
    SUBCASE("non-increasing in the cosine, bounded by [0, 2]") {
        for (const double gamma : {0.3, 0.5, 1.0, 2.0, 4.0}) {
            double prev = 1e300;
            for (double cos = -1.0; cos <= 1.0; cos += 0.01) {
                const double delta = adaptive_margin_from_cos(cos, gamma);
                CHECK(delta <= prev + 1e-12);
                CHECK(delta >= 0.0);
                CHECK(delta <= 2.0 + 1e-12);
                prev = delta;
            }
        }
    }
    SUBCASE("continuous in gamma") {
        for (double cos = -0.95; cos < 1.0; cos += 0.25)
            for (double gamma = 0.3; gamma < 4.0; gamma += 0.05) {
                const double a = adaptive_margin_from_cos(cos, gamma);
                const double b = adaptive_margin_from_cos(cos, gamma + 1e-7);
                CHECK(std::abs(a - b) < 1e-5);
            }
    }
    SUBCASE("gamma must be positive") {
        CHECK_THROWS_AS(adaptive_margin_from_cos(0.5, 0.0), ValidationError);
    }
}

TEST_CASE("margin loss") {
    SUBCASE("inactive hinges give exactly zero") {
        // gamma = 2 keeps the adaptive margin below the cosine gap.
        Mat tags(2, 2);
        tags.col(0) = Vec{{1.0, 0.0}};
        tags.col(1) = Vec{{0.9, std::sqrt(1.0 - 0.81)}};
        const auto sphere = test::make_sphere(tags, {{0}});
        const Vec r = Vec::Unit(2, 0);
        CHECK(margin_loss(r, sphere, {0}, {1}, 2.0) == 0.0);
    }
    SUBCASE("single pair direct substitution: 0.5 - 0.6 + 0.4 = 0.3") {
        Mat tags(3, 2);
        tags.col(0) = Vec{{0.6, 0.8, 0.0}};
        const double a = (0.5 - 0.24) / 0.8;
        tags.col(1) = Vec{{0.4, a, std::sqrt(1.0 - 0.16 - a * a)}};
        const auto sphere = test::make_sphere(tags, {{0}});
        // cos(s+, s-) = 0.5 so Delta(gamma=1) = 0.5; r = e1 gives 0.6 and 0.4.
        const Vec r = Vec::Unit(3, 0);
        CHECK(margin_loss(r, sphere, {0}, {1}, 1.0) == doctest::Approx(0.3).epsilon(1e-9));
    }
    SUBCASE("random instance matches the double-loop scalar oracle") {
        Rng rng(44);
        const Mat tags = test::gaussian_mat(rng, 8, 8);
        const auto sphere = test::make_sphere(tags, {{0, 1, 2}});
        const Vec r = test::random_unit(rng, 8);
        const std::vector<TagIndex> pos = {0, 1, 2};
        const std::vector<TagIndex> neg = {3, 4, 5, 6, 7};
        const double gamma = 1.7;
        double oracle = 0.0;
        for (const TagIndex i : pos)
            for (const TagIndex j : neg) {
                const double cos_pn =
                    test::dot_scalar(sphere.unit_tags.col(i), sphere.unit_tags.col(j));
                const double delta = std::exp2(1.0 - gamma) * std::pow(1.0 - cos_pn, gamma);
                const double arg = delta - test::dot_scalar(sphere.unit_tags.col(i), r) +
                                   test::dot_scalar(sphere.unit_tags.col(j), r);
                if (arg > 0.0) oracle += arg;
            }
        CHECK(margin_loss(r, sphere, pos, neg, gamma) == doctest::Approx(oracle).epsilon(1e-9));
    }
}

TEST_CASE("quantization cosine loss") {
    Rng rng(45);
    const Mat tags = test::gaussian_mat(rng, 6, 9);
    const auto sphere = test::make_sphere(tags, {{0}});

    SUBCASE("scale invariance: r_hat = c r gives zero") {
        const Vec r = test::random_unit(rng, 6);
        CHECK(quantization_cosine_loss(sphere, r, 3.7 * r) < 1e-18);
    }
    SUBCASE("orthogonal single tag scores one") {
        const auto one_tag = test::make_sphere(Mat::Identity(4, 4).col(0), {{0}});
        Vec r = Vec::Unit(4, 1);
        const Vec r_hat = Vec::Unit(4, 0);
        CHECK(quantization_cosine_loss(one_tag, r, r_hat) == doctest::Approx(1.0));
    }
    SUBCASE("matches the scalar loop oracle") {
        const Vec r = test::random_unit(rng, 6);
        const Vec r_hat = test::gaussian_vec(rng, 6);
        double oracle = 0.0;
        for (Eigen::Index t = 0; t < 9; ++t) {
            const double e = test::dot_scalar(sphere.unit_tags.col(t), r) -
                             test::dot_scalar(sphere.unit_tags.col(t), r_hat) /
                                 test::norm_scalar(r_hat);
            oracle += e * e;
        }
        CHECK(quantization_cosine_loss(sphere, r, r_hat) ==
              doctest::Approx(oracle).epsilon(1e-9));
    }
    SUBCASE("zero reconstruction is flagged and uses cos = 0") {
        const Vec r = test::random_unit(rng, 6);
        std::size_t flags = 0;
        const double loss = quantization_cosine_loss(sphere, r, Vec::Zero(6), &flags);
        CHECK(flags == 1);
        double oracle = 0.0;
        for (Eigen::Index t = 0; t < 9; ++t) {
            const double e = sphere.unit_tags.col(t).dot(r);
            oracle += e * e;
        }
        CHECK(loss == doctest::Approx(oracle));
    }
}

namespace {

struct GradientFixture {
    Mat features;       // V x N
    Mat unit_tags;      // D x S
    Mat reconstructions;
    std::vector<std::vector<TagIndex>> sets;
    tag_semantics::SemanticSphere sphere;
    TrainData data;
    TrainConfig config;
};

GradientFixture make_gradient_fixture(std::uint64_t seed, int dim = 6, int feat = 10,
                                      int tags = 4, int images = 3) {
    Rng rng(seed);
    GradientFixture fx;
    fx.features = test::gaussian_mat(rng, feat, images);
    const Mat raw_tags = test::gaussian_mat(rng, dim, tags);
    for (int n = 0; n < images; ++n) {
        std::vector<TagIndex> set;
        set.push_back(static_cast<TagIndex>(rng.bounded(static_cast<std::uint64_t>(tags))));
        if (rng.uniform() < 0.5) {
            const auto extra =
                static_cast<TagIndex>(rng.bounded(static_cast<std::uint64_t>(tags)));
            if (extra != set[0]) set.push_back(extra);
        }
        std::sort(set.begin(), set.end());
        fx.sets.push_back(std::move(set));
    }
    fx.sphere = test::make_sphere(raw_tags, fx.sets);
    fx.unit_tags = fx.sphere.unit_tags;

    // Reconstructions from a real M=2, K=4 quantizer draw.
    quantizer::Codebooks books;
    books.num_books = 2;
    books.num_words = 4;
    books.codewords = test::gaussian_mat(rng, dim, 8) * 0.5;
    quantizer::CodeMatrix codes;
    codes.count = static_cast<std::size_t>(images);
    codes.num_books = 2;
    for (int n = 0; n < images; ++n)
        for (int m = 0; m < 2; ++m)
            codes.codes.push_back(static_cast<CodeWord>(rng.bounded(4)));
    fx.reconstructions = quantizer::reconstruct_all(books, codes);

    fx.data = hypersphere::make_train_data(fx.features, fx.sphere);
    fx.config.gamma = 0.5 + rng.uniform() * 2.0;
    fx.config.lambda = 0.5;
    fx.config.negatives = tags;  // clamps to every non-positive: no mining kinks
    fx.config.threads = 1;
    return fx;
}

} // namespace

TEST_CASE("analytic gradient matches central finite differences") {
    int total_checked = 0, total_skipped = 0;
    double max_err = 0.0;
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        auto fx = make_gradient_fixture(seed);
        auto layer = init_layer(6, 10, seed * 31 + 1);

        const std::vector<std::uint32_t> batch = {0, 1, 2};
        const auto acc = total_gradient(batch, fx.data, layer, fx.sphere, &fx.reconstructions,
                                        fx.config);

        const double h = 1e-5;
        for (Eigen::Index a = 0; a < 6; ++a)
            for (Eigen::Index b = 0; b < 10; ++b) {
                Mat wp = layer.weights, wm = layer.weights;
                wp(a, b) += h;
                wm(a, b) -= h;
                const auto up = test::oracle_total_loss(wp, fx.features, fx.sets, fx.unit_tags,
                                                        fx.reconstructions, fx.config.lambda,
                                                        fx.config.gamma, fx.config.negatives);
                const auto um = test::oracle_total_loss(wm, fx.features, fx.sets, fx.unit_tags,
                                                        fx.reconstructions, fx.config.lambda,
                                                        fx.config.gamma, fx.config.negatives);
                // Skip coordinates whose FD interval straddles a hinge kink.
                if (up.hinge_active != um.hinge_active || up.min_abs_hinge < 1e-6 ||
                    um.min_abs_hinge < 1e-6) {
                    ++total_skipped;
                    continue;
                }
                const double fd = (up.loss - um.loss) / (2.0 * h);
                const double analytic = acc.grad(a, b);
                const double err = std::abs(analytic - fd) /
                                   std::max({std::abs(analytic), std::abs(fd), 1e-3});
                max_err = std::max(max_err, err);
                ++total_checked;
                CHECK(err < 1e-4);
            }
    }
    // The kink exclusion must not hollow out the test.
    CHECK(total_checked > 10 * total_skipped);
    MESSAGE("checked ", total_checked, " coordinates, skipped ", total_skipped,
            ", max relative error ", max_err);
}

TEST_CASE("gradient special cases") {
    SUBCASE("flat region gives a zero gradient") {
        // gamma = 2 with r exactly on the positive tag: hinge strictly inactive.
        Mat tags(2, 2);
        tags.col(0) = Vec{{1.0, 0.0}};
        tags.col(1) = Vec{{0.9, std::sqrt(0.19)}};
        const auto sphere = test::make_sphere(tags, {{0}});
        Mat features(2, 1);
        features.col(0) = Vec{{1.0, 1.0}};
        TransformLayer layer;
        layer.weights.resize(2, 2);
        layer.weights << 5.0, 5.0, 0.0, 0.0;  // r = (1, 0) exactly
        const auto data = make_train_data(features, sphere);
        TrainConfig cfg;
        cfg.gamma = 2.0;
        cfg.lambda = 0.0;
        cfg.negatives = 10;
        cfg.threads = 1;
        const auto acc = total_gradient({0}, data, layer, sphere, nullptr, cfg);
        CHECK(acc.margin_loss == 0.0);
        CHECK(acc.grad.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("null reconstructions equal margin-only gradient") {
        auto fx = make_gradient_fixture(7);
        auto layer = init_layer(6, 10, 3);
        const std::vector<std::uint32_t> batch = {0, 1, 2};
        auto margin_cfg = fx.config;
        margin_cfg.lambda = 0.0;
        const auto with_lambda_no_recon =
            total_gradient(batch, fx.data, layer, fx.sphere, nullptr, fx.config);
        const auto margin_only =
            total_gradient(batch, fx.data, layer, fx.sphere, &fx.reconstructions, margin_cfg);
        CHECK((with_lambda_no_recon.grad - margin_only.grad).cwiseAbs().maxCoeff() == 0.0);
        CHECK(with_lambda_no_recon.quant_loss == 0.0);
    }
    SUBCASE("parallel batch reduction agrees with single-threaded within 1e-6") {
        auto fx = make_gradient_fixture(17, 8, 12, 6, 24);
        auto layer = init_layer(8, 12, 19);
        std::vector<std::uint32_t> batch(24);
        std::iota(batch.begin(), batch.end(), 0u);
        auto cfg1 = fx.config, cfg4 = fx.config;
        cfg1.threads = 1;
        cfg4.threads = 4;
        const auto a = total_gradient(batch, fx.data, layer, fx.sphere, &fx.reconstructions, cfg1);
        const auto b = total_gradient(batch, fx.data, layer, fx.sphere, &fx.reconstructions, cfg4);
        CHECK(std::abs(a.margin_loss - b.margin_loss) < 1e-6);
        CHECK(std::abs(a.quant_loss - b.quant_loss) < 1e-6);
        CHECK((a.grad - b.grad).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("empty negative set is flagged and contributes nothing") {
        Rng rng(46);
        const Mat tags = test::gaussian_mat(rng, 4, 3);
        const auto sphere = test::make_sphere(tags, {{0, 1, 2}});
        const Mat features = test::gaussian_mat(rng, 5, 1);
        auto layer = init_layer(4, 5, 11);
        const auto data = make_train_data(features, sphere);
        TrainConfig cfg;
        cfg.lambda = 0.0;
        cfg.threads = 1;
        const auto acc = total_gradient({0}, data, layer, sphere, nullptr, cfg);
        CHECK(acc.empty_negative_sets == 1);
        CHECK(acc.margin_loss == 0.0);
    }
}

namespace {

struct SeparableFixture {
    tag_semantics::SemanticSphere sphere;
    TrainData data;
};

SeparableFixture separable_data(std::uint64_t seed, int dim, int tags, int images) {
    Rng rng(seed);
    SeparableFixture fx;
    Mat raw_tags(dim, tags);
    for (int t = 0; t < tags; ++t) raw_tags.col(t) = test::random_unit(rng, dim);
    std::vector<std::vector<TagIndex>> sets;
    Mat features(dim, images);
    for (int n = 0; n < images; ++n) {
        const auto tag = static_cast<TagIndex>(rng.bounded(static_cast<std::uint64_t>(tags)));
        sets.push_back({tag});
        features.col(n) = raw_tags.col(tag) + 0.05 * test::gaussian_vec(rng, dim);
    }
    fx.sphere = test::make_sphere(raw_tags, sets);
    fx.data = hypersphere::make_train_data(features, fx.sphere);
    return fx;
}

} // namespace

TEST_CASE("train epoch") {
    SUBCASE("zero learning rate leaves the weights bit for bit") {
        auto fx = separable_data(50, 8, 5, 24);
        auto layer = init_layer(8, 8, 2);
        const Mat before = layer.weights;
        auto adam = init_adam(layer);
        TrainConfig cfg;
        cfg.learning_rate = 0.0;
        cfg.batch_size = 8;
        cfg.threads = 1;
        Rng shuffle(3);
        train_epoch(fx.data, layer, adam, fx.sphere, nullptr, cfg, shuffle);
        CHECK(layer.weights == before);
    }
    SUBCASE("margin loss strictly decreases on separable data") {
        auto fx = separable_data(51, 8, 5, 40);
        auto layer = init_layer(8, 8, 4);
        auto adam = init_adam(layer);
        TrainConfig cfg;
        cfg.learning_rate = 0.01;
        cfg.batch_size = 10;
        cfg.negatives = 4;
        cfg.threads = 1;
        Rng shuffle(5);
        double prev = 1e300;
        for (int epoch = 0; epoch < 5; ++epoch) {
            const auto report =
                train_epoch(fx.data, layer, adam, fx.sphere, nullptr, cfg, shuffle);
            CHECK(report.mean_margin_loss < prev);
            prev = report.mean_margin_loss;
        }
    }
    SUBCASE("fixed seed reproduces the loss trajectory and weights") {
        const auto run = [] {
            auto fx = separable_data(52, 6, 4, 30);
            auto layer = init_layer(6, 6, 8);
            auto adam = init_adam(layer);
            TrainConfig cfg;
            cfg.learning_rate = 0.005;
            cfg.batch_size = 7;
            cfg.threads = 1;
            Rng shuffle(9);
            std::vector<double> losses;
            for (int e = 0; e < 3; ++e)
                losses.push_back(
                    train_epoch(fx.data, layer, adam, fx.sphere, nullptr, cfg, shuffle)
                        .mean_margin_loss);
            return std::pair(losses, layer.weights);
        };
        const auto a = run();
        const auto b = run();
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
    }
    SUBCASE("divergence detector aborts with diagnostics") {
        auto fx = make_gradient_fixture(53);
        auto layer = init_layer(6, 10, 5);
        auto adam = init_adam(layer);
        auto cfg = fx.config;
        cfg.lambda = 1e12;  // blows the mean loss past the detector
        cfg.batch_size = 3;
        Rng shuffle(1);
        CHECK_THROWS_WITH_AS(
            train_epoch(fx.data, layer, adam, fx.sphere, &fx.reconstructions, cfg, shuffle),
            doctest::Contains("diverged"), NumericalError);
    }
}

TEST_CASE("checkpoint serialization carries the layer") {
    test::TempDir dir("ckpt_layer");
    auto layer = init_layer(5, 7, 77);
    auto adam = init_adam(layer);
    adam.m.setConstant(0.25);
    io::write_checkpoint(dir.path() / "w.hsqw", {layer.weights, adam.m, adam.v});
    const auto loaded = io::read_checkpoint(dir.path() / "w.hsqw");
    CHECK((loaded.weights.cast<float>() - layer.weights.cast<float>()).cwiseAbs().maxCoeff() ==
          0.0f);
}
