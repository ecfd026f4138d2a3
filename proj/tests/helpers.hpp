#pragma once

#include "hsq/rng.hpp"
#include "hsq/tag_semantics.hpp"
#include "hsq/types.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace hsq::test {

inline Vec gaussian_vec(Rng& rng, Eigen::Index dim) {
    Vec v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
    return v;
}

inline Vec random_unit(Rng& rng, Eigen::Index dim) {
    Vec v = gaussian_vec(rng, dim);
    return v / v.norm();
}

inline Mat gaussian_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
    return m;
}

inline Mat random_psd(Rng& rng, Eigen::Index dim) {
    const Mat a = gaussian_mat(rng, dim, dim);
    return a * a.transpose() / static_cast<double>(dim);
}

// Sphere over the given raw tag columns with one image per provided set.
inline tag_semantics::SemanticSphere make_sphere(const Mat& raw_tags,
                                                 std::vector<std::vector<TagIndex>> sets,
                                                 bool normalize = true) {
    tag_semantics::RefreshedSets refreshed;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        refreshed.image_ids.push_back(static_cast<ImageId>(i));
        auto set = sets[i];
        std::sort(set.begin(), set.end());
        refreshed.sets.push_back(std::move(set));
    }
    return tag_semantics::build_semantic_sphere(raw_tags, refreshed, normalize);
}

class TempDir {
public:
    explicit TempDir(const std::string& name) {
        path_ = std::filesystem::temp_directory_path() /
                ("hsq_test_" + name + "_" + std::to_string(counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }

private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path path_;
};

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

} // namespace hsq::test
