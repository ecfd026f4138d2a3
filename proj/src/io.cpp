#include "hsq/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

namespace hsq::io {

namespace {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "byte-swapping writers are not implemented for big-endian hosts");

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<char> buf(size);
    if (size > 0 && !in.read(buf.data(), static_cast<std::streamsize>(size)))
        throw ValidationError("cannot read " + path.string());
    return buf;
}

void spit(const std::filesystem::path& path, const std::vector<char>& buf) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ValidationError("short write to " + path.string());
}

class Reader {
public:
    Reader(const std::filesystem::path& path, std::vector<char> buf)
        : path_(path.string()), buf_(std::move(buf)) {}

    void expect_magic(const char* magic) {
        if (buf_.size() < 5 || std::memcmp(buf_.data(), magic, 5) != 0)
            throw ValidationError(path_ + ": unknown magic, expected " + std::string(magic));
        pos_ = 5;
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, buf_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }

    std::uint8_t u8(const char* what) {
        need(1, what);
        const auto v = static_cast<std::uint8_t>(buf_[pos_]);
        pos_ += 1;
        return v;
    }

    void floats(float* dst, std::size_t n, const char* what) {
        need(n * 4, what);
        std::memcpy(dst, buf_.data() + pos_, n * 4);
        pos_ += n * 4;
    }

    void bytes(std::uint8_t* dst, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }

    void expect_end() {
        if (pos_ != buf_.size())
            throw ValidationError(path_ + ": " + std::to_string(buf_.size() - pos_) +
                                  " trailing bytes at offset " + std::to_string(pos_));
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (pos_ + n > buf_.size())
            throw ValidationError(path_ + ": truncated payload at offset " +
                                  std::to_string(pos_) + " while reading " + what);
    }

    std::string path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

class Writer {
public:
    void magic(const char* m) { buf_.insert(buf_.end(), m, m + 5); }

    void u32(std::uint32_t v) {
        const char* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + 4);
    }

    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void floats(const float* src, std::size_t n) {
        const char* p = reinterpret_cast<const char*>(src);
        buf_.insert(buf_.end(), p, p + n * 4);
    }

    void bytes(const std::uint8_t* src, std::size_t n) {
        const char* p = reinterpret_cast<const char*>(src);
        buf_.insert(buf_.end(), p, p + n);
    }

    const std::vector<char>& buffer() const { return buf_; }

private:
    std::vector<char> buf_;
};

json parse_line(const std::string& line, const std::filesystem::path& path, std::size_t lineno) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                              ": malformed JSON object");
    return j;
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        fn(parse_line(line, path, lineno), lineno);
    }
}

ImageId require_id(const json& j, const char* key, const std::filesystem::path& path,
                   std::size_t lineno) {
    if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<std::int64_t>() < 0)
        throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                              ": missing or invalid \"" + key + "\"");
    return static_cast<ImageId>(j[key].get<std::int64_t>());
}

} // namespace

Mat read_embeddings(const std::filesystem::path& path, bool reject_zero) {
    Reader r(path, slurp(path));
    r.expect_magic("HSQV1");
    const std::uint32_t count = r.u32("count");
    const std::uint32_t dim = r.u32("dim");
    if (dim == 0) throw ValidationError(path.string() + ": dim must be positive");
    const std::size_t needed = static_cast<std::size_t>(count) * dim * 4;
    if (r.remaining() < needed)
        throw ValidationError(path.string() + ": truncated payload at offset " +
                              std::to_string(r.offset() + r.remaining()) + ": " +
                              std::to_string(count) + " records of " + std::to_string(dim) +
                              " dims need " + std::to_string(needed) + " payload bytes, found " +
                              std::to_string(r.remaining()) +
                              " (dimension mismatch or truncated file)");
    Mat out(dim, count);
    std::vector<float> rec(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        r.floats(rec.data(), dim, "embedding record");
        double norm2 = 0.0;
        for (std::uint32_t d = 0; d < dim; ++d) {
            out(d, i) = static_cast<double>(rec[d]);
            norm2 += out(d, i) * out(d, i);
        }
        if (!std::isfinite(norm2))
            throw ValidationError(path.string() + ": non-finite values in record " +
                                  std::to_string(i));
        if (reject_zero && norm2 == 0.0)
            throw ValidationError(path.string() + ": zero-norm embedding in record " +
                                  std::to_string(i));
    }
    r.expect_end();
    return out;
}

void write_embeddings(const std::filesystem::path& path, const Mat& vectors) {
    Writer w;
    w.magic("HSQV1");
    w.u32(static_cast<std::uint32_t>(vectors.cols()));
    w.u32(static_cast<std::uint32_t>(vectors.rows()));
    std::vector<float> rec(vectors.rows());
    for (Eigen::Index i = 0; i < vectors.cols(); ++i) {
        for (Eigen::Index d = 0; d < vectors.rows(); ++d)
            rec[static_cast<std::size_t>(d)] = static_cast<float>(vectors(d, i));
        w.floats(rec.data(), rec.size());
    }
    spit(path, w.buffer());
}

namespace {

void read_matrix_rowmajor(Reader& r, Mat& m, const char* what) {
    std::vector<float> row(m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        r.floats(row.data(), row.size(), what);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = static_cast<double>(row[static_cast<std::size_t>(j)]);
    }
}

void write_matrix_rowmajor(Writer& w, const Mat& m) {
    std::vector<float> row(m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row[static_cast<std::size_t>(j)] = static_cast<float>(m(i, j));
        w.floats(row.data(), row.size());
    }
}

} // namespace

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    Reader r(path, slurp(path));
    r.expect_magic("HSQW1");
    const std::uint32_t dim = r.u32("dim");
    const std::uint32_t feat = r.u32("feature dim");
    if (dim == 0 || feat == 0) throw ValidationError(path.string() + ": zero shape");
    Checkpoint ckpt;
    ckpt.weights.resize(dim, feat);
    ckpt.adam_m.resize(dim, feat);
    ckpt.adam_v.resize(dim, feat);
    read_matrix_rowmajor(r, ckpt.weights, "weights");
    read_matrix_rowmajor(r, ckpt.adam_m, "first moment");
    read_matrix_rowmajor(r, ckpt.adam_v, "second moment");
    r.expect_end();
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (ckpt.adam_m.rows() != ckpt.weights.rows() || ckpt.adam_m.cols() != ckpt.weights.cols() ||
        ckpt.adam_v.rows() != ckpt.weights.rows() || ckpt.adam_v.cols() != ckpt.weights.cols())
        throw ValidationError("checkpoint moment shape does not match weights");
    Writer w;
    w.magic("HSQW1");
    w.u32(static_cast<std::uint32_t>(ckpt.weights.rows()));
    w.u32(static_cast<std::uint32_t>(ckpt.weights.cols()));
    write_matrix_rowmajor(w, ckpt.weights);
    write_matrix_rowmajor(w, ckpt.adam_m);
    write_matrix_rowmajor(w, ckpt.adam_v);
    spit(path, w.buffer());
}

CodebookFile read_codebooks(const std::filesystem::path& path) {
    Reader r(path, slurp(path));
    r.expect_magic("HSQC1");
    CodebookFile cb;
    cb.num_books = r.u32("book count");
    cb.num_words = r.u32("word count");
    cb.dim = r.u32("dim");
    if (cb.num_books == 0 || cb.num_words == 0 || cb.dim == 0)
        throw ValidationError(path.string() + ": zero shape");
    cb.codewords.resize(cb.dim, static_cast<Eigen::Index>(cb.num_books) * cb.num_words);
    std::vector<float> word(cb.dim);
    for (Eigen::Index c = 0; c < cb.codewords.cols(); ++c) {
        r.floats(word.data(), word.size(), "codeword");
        for (std::uint32_t d = 0; d < cb.dim; ++d)
            cb.codewords(d, c) = static_cast<double>(word[d]);
    }
    r.expect_end();
    return cb;
}

void write_codebooks(const std::filesystem::path& path, const CodebookFile& books) {
    if (books.codewords.rows() != static_cast<Eigen::Index>(books.dim) ||
        books.codewords.cols() !=
            static_cast<Eigen::Index>(books.num_books) * books.num_words)
        throw ValidationError("codebook matrix shape does not match header");
    Writer w;
    w.magic("HSQC1");
    w.u32(books.num_books);
    w.u32(books.num_words);
    w.u32(books.dim);
    std::vector<float> word(books.dim);
    for (Eigen::Index c = 0; c < books.codewords.cols(); ++c) {
        for (std::uint32_t d = 0; d < books.dim; ++d)
            word[d] = static_cast<float>(books.codewords(d, c));
        w.floats(word.data(), word.size());
    }
    spit(path, w.buffer());
}

CodesFile read_codes(const std::filesystem::path& path) {
    Reader r(path, slurp(path));
    r.expect_magic("HSQB1");
    CodesFile cf;
    cf.count = r.u32("count");
    cf.num_books = r.u32("book count");
    cf.log2k = r.u8("log2K");
    if (cf.num_books == 0) throw ValidationError(path.string() + ": zero book count");
    if (cf.log2k < 1 || cf.log2k > 16)
        throw ValidationError(path.string() + ": log2K out of range [1,16]");
    cf.codes.resize(static_cast<std::size_t>(cf.count) * cf.num_books);
    if (cf.log2k == 8) {
        std::vector<std::uint8_t> row(cf.num_books);
        for (std::uint32_t n = 0; n < cf.count; ++n) {
            r.bytes(row.data(), row.size(), "code row");
            for (std::uint32_t m = 0; m < cf.num_books; ++m)
                cf.codes[static_cast<std::size_t>(n) * cf.num_books + m] = row[m];
        }
    } else {
        const std::size_t bits = static_cast<std::size_t>(cf.num_books) * cf.log2k;
        const std::size_t stride = (bits + 7) / 8;
        std::vector<std::uint8_t> row(stride);
        for (std::uint32_t n = 0; n < cf.count; ++n) {
            const std::size_t row_offset = r.offset();
            r.bytes(row.data(), row.size(), "code row");
            for (std::uint32_t m = 0; m < cf.num_books; ++m) {
                std::uint32_t value = 0;
                for (std::uint32_t b = 0; b < cf.log2k; ++b) {
                    const std::size_t bit = static_cast<std::size_t>(m) * cf.log2k + b;
                    value |= static_cast<std::uint32_t>((row[bit / 8] >> (bit % 8)) & 1u) << b;
                }
                cf.codes[static_cast<std::size_t>(n) * cf.num_books + m] =
                    static_cast<CodeWord>(value);
            }
            for (std::size_t bit = bits; bit < stride * 8; ++bit) {
                if ((row[bit / 8] >> (bit % 8)) & 1u)
                    throw ValidationError(path.string() + ": nonzero padding bits in row " +
                                          std::to_string(n) + " at offset " +
                                          std::to_string(row_offset));
            }
        }
    }
    r.expect_end();
    return cf;
}

void write_codes(const std::filesystem::path& path, const CodesFile& codes) {
    if (codes.log2k < 1 || codes.log2k > 16)
        throw ValidationError("log2K out of range [1,16]");
    if (codes.codes.size() != static_cast<std::size_t>(codes.count) * codes.num_books)
        throw ValidationError("code matrix size does not match header");
    const std::uint32_t num_words = 1u << codes.log2k;
    for (std::uint32_t n = 0; n < codes.count; ++n)
        for (std::uint32_t m = 0; m < codes.num_books; ++m) {
            const CodeWord c = codes.codes[static_cast<std::size_t>(n) * codes.num_books + m];
            if (c >= num_words)
                throw ValidationError("code row " + std::to_string(n) + " book " +
                                      std::to_string(m) + " has entry " + std::to_string(c) +
                                      " >= K=" + std::to_string(num_words));
        }
    Writer w;
    w.magic("HSQB1");
    w.u32(codes.count);
    w.u32(codes.num_books);
    w.u8(codes.log2k);
    if (codes.log2k == 8) {
        std::vector<std::uint8_t> row(codes.num_books);
        for (std::uint32_t n = 0; n < codes.count; ++n) {
            for (std::uint32_t m = 0; m < codes.num_books; ++m)
                row[m] = static_cast<std::uint8_t>(
                    codes.codes[static_cast<std::size_t>(n) * codes.num_books + m]);
            w.bytes(row.data(), row.size());
        }
    } else {
        const std::size_t bits = static_cast<std::size_t>(codes.num_books) * codes.log2k;
        const std::size_t stride = (bits + 7) / 8;
        std::vector<std::uint8_t> row(stride);
        for (std::uint32_t n = 0; n < codes.count; ++n) {
            std::fill(row.begin(), row.end(), 0);
            for (std::uint32_t m = 0; m < codes.num_books; ++m) {
                const std::uint32_t value =
                    codes.codes[static_cast<std::size_t>(n) * codes.num_books + m];
                for (std::uint32_t b = 0; b < codes.log2k; ++b) {
                    if ((value >> b) & 1u) {
                        const std::size_t bit = static_cast<std::size_t>(m) * codes.log2k + b;
                        row[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
                    }
                }
            }
            w.bytes(row.data(), row.size());
        }
    }
    spit(path, w.buffer());
}

std::vector<ImageTags> read_assignments(const std::filesystem::path& path) {
    std::vector<ImageTags> rows;
    for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
        ImageTags row;
        row.image = require_id(j, "image", path, lineno);
        if (!j.contains("tags") || !j["tags"].is_array())
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": missing or invalid \"tags\"");
        for (const auto& t : j["tags"]) {
            if (!t.is_number_integer() || t.get<std::int64_t>() < 0)
                throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                      ": invalid tag id");
            row.tags.push_back(static_cast<TagIndex>(t.get<std::int64_t>()));
        }
        rows.push_back(std::move(row));
    });
    return rows;
}

void write_assignments(const std::filesystem::path& path, const std::vector<ImageTags>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    for (const auto& row : rows) {
        json j;
        j["image"] = row.image;
        j["tags"] = row.tags;
        out << j.dump() << '\n';
    }
}

std::vector<ImageLabels> read_labels(const std::filesystem::path& path) {
    std::vector<ImageLabels> rows;
    for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
        ImageLabels row;
        row.image = require_id(j, "image", path, lineno);
        if (!j.contains("labels") || !j["labels"].is_array())
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": missing or invalid \"labels\"");
        for (const auto& l : j["labels"]) {
            if (!l.is_number_integer())
                throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                      ": invalid label");
            row.labels.push_back(l.get<std::int64_t>());
        }
        rows.push_back(std::move(row));
    });
    return rows;
}

void write_labels(const std::filesystem::path& path, const std::vector<ImageLabels>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    for (const auto& row : rows) {
        json j;
        j["image"] = row.image;
        j["labels"] = row.labels;
        out << j.dump() << '\n';
    }
}

std::vector<QueryResult> read_results(const std::filesystem::path& path) {
    std::vector<QueryResult> rows;
    for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
        QueryResult row;
        row.query = require_id(j, "query", path, lineno);
        if (!j.contains("results") || !j["results"].is_array())
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": missing or invalid \"results\"");
        for (const auto& pair : j["results"]) {
            if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
                !pair[1].is_number())
                throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                      ": result entries must be [id, score]");
            row.results.emplace_back(static_cast<ImageId>(pair[0].get<std::int64_t>()),
                                     pair[1].get<double>());
        }
        rows.push_back(std::move(row));
    });
    return rows;
}

void write_results(const std::filesystem::path& path, const std::vector<QueryResult>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    for (const auto& row : rows) {
        json j;
        j["query"] = row.query;
        auto arr = json::array();
        for (const auto& [id, score] : row.results) arr.push_back(json::array({id, score}));
        j["results"] = arr;
        out << j.dump() << '\n';
    }
}

std::vector<std::string> read_names(const std::filesystem::path& path, std::size_t expected) {
    std::vector<std::string> names(expected);
    for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
        const ImageId id = require_id(j, "id", path, lineno);
        if (id >= expected)
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": id out of range");
        if (!j.contains("name") || !j["name"].is_string())
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": missing \"name\"");
        names[id] = j["name"].get<std::string>();
    });
    return names;
}

} // namespace hsq::io
