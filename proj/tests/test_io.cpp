#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hsq/io.hpp"
#include "hsq/rng.hpp"
#include "helpers.hpp"

#include <fstream>

using namespace hsq;
using test::TempDir;

TEST_CASE("embeddings round trip is byte identical") {
    TempDir dir("io_embed");
    Rng rng(11);
    const Mat original = test::gaussian_mat(rng, 7, 13);
    const auto path = dir.path() / "a.hsqv";
    io::write_embeddings(path, original);
    const Mat loaded = io::read_embeddings(path);
    REQUIRE(loaded.rows() == 7);
    REQUIRE(loaded.cols() == 13);

    const auto path2 = dir.path() / "b.hsqv";
    io::write_embeddings(path2, loaded);
    CHECK(test::read_bytes(path) == test::read_bytes(path2));
}

TEST_CASE("embeddings reader validates header and payload") {
    TempDir dir("io_embed_bad");
    Rng rng(12);
    const Mat m = test::gaussian_mat(rng, 4, 3);
    const auto path = dir.path() / "m.hsqv";
    io::write_embeddings(path, m);

    SUBCASE("truncated by one byte") {
        auto bytes = test::read_bytes(path);
        bytes.pop_back();
        const auto bad = dir.path() / "trunc.hsqv";
        std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
        CHECK_THROWS_WITH_AS(io::read_embeddings(bad),
                             doctest::Contains("truncated payload at offset"), ValidationError);
    }
    SUBCASE("short record shows up as a dimension mismatch") {
        auto bytes = test::read_bytes(path);
        bytes.resize(bytes.size() - 4);  // one float short
        const auto bad = dir.path() / "dim.hsqv";
        std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
        CHECK_THROWS_WITH_AS(io::read_embeddings(bad), doctest::Contains("dimension mismatch"),
                             ValidationError);
    }
    SUBCASE("unknown magic") {
        auto bytes = test::read_bytes(path);
        bytes[0] = 'X';
        const auto bad = dir.path() / "magic.hsqv";
        std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
        CHECK_THROWS_WITH_AS(io::read_embeddings(bad), doctest::Contains("unknown magic"),
                             ValidationError);
    }
    SUBCASE("trailing bytes") {
        auto bytes = test::read_bytes(path);
        bytes.push_back(0);
        const auto bad = dir.path() / "trail.hsqv";
        std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
        CHECK_THROWS_WITH_AS(io::read_embeddings(bad), doctest::Contains("trailing"),
                             ValidationError);
    }
    SUBCASE("zero vector rejected when requested") {
        Mat z = m;
        z.col(1).setZero();
        const auto zp = dir.path() / "zero.hsqv";
        io::write_embeddings(zp, z);
        CHECK_THROWS_WITH_AS(io::read_embeddings(zp, true),
                             doctest::Contains("zero-norm embedding in record 1"),
                             ValidationError);
        CHECK_NOTHROW(io::read_embeddings(zp, false));
    }
}

TEST_CASE("checkpoint round trip") {
    TempDir dir("io_ckpt");
    Rng rng(13);
    io::Checkpoint ckpt{test::gaussian_mat(rng, 5, 9), test::gaussian_mat(rng, 5, 9),
                        test::gaussian_mat(rng, 5, 9).cwiseAbs()};
    const auto path = dir.path() / "w.hsqw";
    io::write_checkpoint(path, ckpt);
    const auto loaded = io::read_checkpoint(path);
    const auto path2 = dir.path() / "w2.hsqw";
    io::write_checkpoint(path2, loaded);
    CHECK(test::read_bytes(path) == test::read_bytes(path2));
    CHECK(loaded.weights.rows() == 5);
    CHECK(loaded.weights.cols() == 9);
}

TEST_CASE("codebooks round trip is byte identical") {
    TempDir dir("io_books");
    Rng rng(14);
    io::CodebookFile books{3, 4, 6, test::gaussian_mat(rng, 6, 12)};
    const auto path = dir.path() / "c.hsqc";
    io::write_codebooks(path, books);
    const auto loaded = io::read_codebooks(path);
    CHECK(loaded.num_books == 3);
    CHECK(loaded.num_words == 4);
    CHECK(loaded.dim == 6);
    const auto path2 = dir.path() / "c2.hsqc";
    io::write_codebooks(path2, loaded);
    CHECK(test::read_bytes(path) == test::read_bytes(path2));
}

TEST_CASE("codes files") {
    TempDir dir("io_codes");

    SUBCASE("byte layout for K=256") {
        io::CodesFile cf;
        cf.count = 3;
        cf.num_books = 2;
        cf.log2k = 8;
        cf.codes = {0, 255, 17, 3, 128, 9};
        const auto path = dir.path() / "c.hsqb";
        io::write_codes(path, cf);
        // 5 magic + 4 + 4 + 1 header bytes, then exactly N*M payload bytes.
        CHECK(std::filesystem::file_size(path) == 14 + 3 * 2);
        const auto loaded = io::read_codes(path);
        CHECK(loaded.codes == cf.codes);
    }
    SUBCASE("bit packed round trip for K=16") {
        Rng rng(15);
        io::CodesFile cf;
        cf.count = 50;
        cf.num_books = 3;
        cf.log2k = 4;
        for (std::size_t i = 0; i < 150; ++i)
            cf.codes.push_back(static_cast<CodeWord>(rng.bounded(16)));
        const auto path = dir.path() / "p.hsqb";
        io::write_codes(path, cf);
        // 12 bits per point, padded to 2 bytes.
        CHECK(std::filesystem::file_size(path) == 14 + 50 * 2);
        const auto loaded = io::read_codes(path);
        CHECK(loaded.codes == cf.codes);
        CHECK(loaded.log2k == 4);
    }
    SUBCASE("entry >= K rejected with the row named") {
        io::CodesFile cf;
        cf.count = 2;
        cf.num_books = 2;
        cf.log2k = 2;
        cf.codes = {0, 1, 4, 0};  // 4 >= K=4
        CHECK_THROWS_WITH_AS(io::write_codes(dir.path() / "bad.hsqb", cf),
                             doctest::Contains("row 1"), ValidationError);
    }
    SUBCASE("nonzero padding rejected") {
        io::CodesFile cf;
        cf.count = 1;
        cf.num_books = 3;
        cf.log2k = 4;
        cf.codes = {1, 2, 3};
        const auto path = dir.path() / "pad.hsqb";
        io::write_codes(path, cf);
        auto bytes = test::read_bytes(path);
        bytes.back() = static_cast<char>(bytes.back() | 0xF0);  // corrupt the pad nibble
        std::ofstream(path, std::ios::binary | std::ios::trunc)
            .write(bytes.data(), bytes.size());
        CHECK_THROWS_WITH_AS(io::read_codes(path), doctest::Contains("padding"),
                             ValidationError);
    }
}

TEST_CASE("json lines round trips") {
    TempDir dir("io_jsonl");
    const std::vector<io::ImageTags> tags = {{0, {1, 2, 3}}, {5, {}}, {7, {0}}};
    io::write_assignments(dir.path() / "a.jsonl", tags);
    const auto tags2 = io::read_assignments(dir.path() / "a.jsonl");
    REQUIRE(tags2.size() == 3);
    CHECK(tags2[0].tags == std::vector<TagIndex>{1, 2, 3});
    CHECK(tags2[1].tags.empty());
    CHECK(tags2[2].image == 7);

    const std::vector<io::ImageLabels> labels = {{0, {3, -1}}, {1, {2}}};
    io::write_labels(dir.path() / "l.jsonl", labels);
    const auto labels2 = io::read_labels(dir.path() / "l.jsonl");
    REQUIRE(labels2.size() == 2);
    CHECK(labels2[0].labels == std::vector<std::int64_t>{3, -1});

    const std::vector<io::QueryResult> results = {{9, {{1, 0.5}, {2, -0.25}}}};
    io::write_results(dir.path() / "r.jsonl", results);
    const auto results2 = io::read_results(dir.path() / "r.jsonl");
    REQUIRE(results2.size() == 1);
    CHECK(results2[0].query == 9);
    CHECK(results2[0].results[1].second == doctest::Approx(-0.25));

    std::ofstream(dir.path() / "bad.jsonl") << "{\"image\": 1}\n";
    CHECK_THROWS_AS(io::read_assignments(dir.path() / "bad.jsonl"), ValidationError);
}
