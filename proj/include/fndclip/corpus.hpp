#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fndclip/errors.hpp"

namespace fndclip {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

struct CorpusDims {
    std::uint32_t n_bert = 768;
    std::uint32_t n_resnet = 2048;
    std::uint32_t n_clip = 512;

    friend bool operator==(const CorpusDims&, const CorpusDims&) = default;
};

/// One news item: four frozen embeddings, stored as 32-bit reals.
/// label: 0 = real, 1 = fake.
struct EmbeddingRecord {
    std::string id;
    int label = 0;
    std::vector<float> f_bert;
    std::vector<float> f_resnet;
    std::vector<float> f_clip_t;
    std::vector<float> f_clip_i;

    friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

inline constexpr std::array<char, 4> kCorpusMagic{'F', 'N', 'D', 'E'};
inline constexpr std::uint16_t kCorpusVersion = 1;
inline constexpr std::size_t kCorpusHeaderBytes = 4 + 2 + 3 * 4 + 8;

struct CorpusHeader {
    std::array<char, 4> magic = kCorpusMagic;
    std::uint16_t version = kCorpusVersion;
    CorpusDims dims;
    std::uint64_t record_count = 0;
};

struct Corpus {
    CorpusHeader header;
    std::vector<EmbeddingRecord> records;

    const CorpusDims& dims() const noexcept { return header.dims; }
    std::size_t size() const noexcept { return records.size(); }
};

inline Corpus make_corpus(const CorpusDims& dims, std::vector<EmbeddingRecord> records) {
    Corpus c;
    c.header.dims = dims;
    c.header.record_count = records.size();
    c.records = std::move(records);
    return c;
}

namespace detail {

inline void check_dims_positive(const CorpusDims& d) {
    if (d.n_bert == 0 || d.n_resnet == 0 || d.n_clip == 0) {
        throw FormatError("corpus dims must be positive, got (" + std::to_string(d.n_bert) + ", " +
                          std::to_string(d.n_resnet) + ", " + std::to_string(d.n_clip) + ")");
    }
}

inline bool is_zero_vector(std::span<const float> v) {
    for (float x : v) {
        if (x != 0.0f) return false;
    }
    return true;
}

template <typename T>
void put_le(std::string& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(u & 0xFFu));
        u = static_cast<U>(u >> 8);
    }
}

inline void put_f32(std::string& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
public:
    explicit ByteReader(std::string bytes, std::string context = "corpus")
        : bytes_(std::move(bytes)), context_(std::move(context)) {}

    template <typename T>
    T get_le(const char* what) {
        need(sizeof(T), what);
        using U = std::make_unsigned_t<T>;
        U u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
        }
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }

    float get_f32(const char* what) { return std::bit_cast<float>(get_le<std::uint32_t>(what)); }

    std::string get_bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const noexcept { return pos_ == bytes_.size(); }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("truncated " + context_ + " file while reading " + what);
        }
    }

    std::string bytes_;
    std::string context_;
    std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw NotFoundError("file '" + path.string() + "' does not exist");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

} // namespace detail

/// Checks one record against the corpus dims: lengths, label, finiteness.
inline void validate_record(const EmbeddingRecord& r, const CorpusDims& d) {
    auto check_len = [&](std::span<const float> v, std::uint32_t want, const char* field) {
        if (v.size() != want) {
            throw DimensionError("record '" + r.id + "': " + field + " has length " +
                                 std::to_string(v.size()) + ", expected " + std::to_string(want));
        }
        for (float x : v) {
            if (!std::isfinite(x)) throw FormatError("record '" + r.id + "': non-finite value in " + field);
        }
    };
    check_len(r.f_bert, d.n_bert, "f_bert");
    check_len(r.f_resnet, d.n_resnet, "f_resnet");
    check_len(r.f_clip_t, d.n_clip, "f_clip_t");
    check_len(r.f_clip_i, d.n_clip, "f_clip_i");
    if (r.label != 0 && r.label != 1) {
        throw LabelError("record '" + r.id + "': label " + std::to_string(r.label) + " is not in {0,1}");
    }
}

/// Structural checks plus what the model needs: no zero CLIP vector, since
/// the similarity gate is undefined there.
inline void validate_corpus(const Corpus& c) {
    detail::check_dims_positive(c.dims());
    for (const auto& r : c.records) {
        validate_record(r, c.dims());
        if (detail::is_zero_vector(r.f_clip_t) || detail::is_zero_vector(r.f_clip_i)) {
            throw SimilarityError("record '" + r.id + "': zero CLIP vector");
        }
    }
}

// ---------------------------------------------------------------------------
// Binary .fnde
//
//   header:  "FNDE" | u16 version | u32 n_bert | u32 n_resnet | u32 n_clip | u64 record_count
//   record:  u32 id_len | id bytes (UTF-8) | u8 label |
//            f32 × n_bert | f32 × n_resnet | f32 × n_clip (text) | f32 × n_clip (image)
//   All integers and floats little-endian.

inline std::string encode_corpus(const CorpusDims& dims, std::span<const EmbeddingRecord> records) {
    detail::check_dims_positive(dims);
    for (const auto& r : records) validate_record(r, dims);

    std::string out;
    const std::size_t floats = dims.n_bert + dims.n_resnet + 2ull * dims.n_clip;
    out.reserve(kCorpusHeaderBytes + records.size() * (4 * floats + 16));
    out.append(kCorpusMagic.data(), kCorpusMagic.size());
    detail::put_le<std::uint16_t>(out, kCorpusVersion);
    detail::put_le<std::uint32_t>(out, dims.n_bert);
    detail::put_le<std::uint32_t>(out, dims.n_resnet);
    detail::put_le<std::uint32_t>(out, dims.n_clip);
    detail::put_le<std::uint64_t>(out, records.size());
    for (const auto& r : records) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.id.size()));
        out.append(r.id);
        out.push_back(static_cast<char>(r.label));
        for (const auto* v : {&r.f_bert, &r.f_resnet, &r.f_clip_t, &r.f_clip_i}) {
            for (float x : *v) detail::put_f32(out, x);
        }
    }
    return out;
}

inline Corpus decode_corpus(std::string bytes) {
    detail::ByteReader in(std::move(bytes));
    Corpus c;
    const std::string magic = in.get_bytes(4, "magic");
    if (std::memcmp(magic.data(), kCorpusMagic.data(), 4) != 0) throw FormatError("bad corpus magic");
    c.header.version = in.get_le<std::uint16_t>("version");
    if (c.header.version != kCorpusVersion) {
        throw FormatError("unsupported corpus version " + std::to_string(c.header.version));
    }
    c.header.dims.n_bert = in.get_le<std::uint32_t>("n_bert");
    c.header.dims.n_resnet = in.get_le<std::uint32_t>("n_resnet");
    c.header.dims.n_clip = in.get_le<std::uint32_t>("n_clip");
    c.header.record_count = in.get_le<std::uint64_t>("record_count");
    detail::check_dims_positive(c.header.dims);

    const auto& d = c.header.dims;
    const std::uint64_t min_record = 4 + 1 + 4ull * (d.n_bert + d.n_resnet + 2ull * d.n_clip);
    if (c.header.record_count > in.remaining() / min_record) {
        throw FormatError("truncated corpus file: header claims " + std::to_string(c.header.record_count) +
                          " records");
    }
    c.records.reserve(c.header.record_count);
    auto read_vec = [&](std::uint32_t n, const char* what) {
        std::vector<float> v(n);
        for (auto& x : v) x = in.get_f32(what);
        return v;
    };
    for (std::uint64_t i = 0; i < c.header.record_count; ++i) {
        EmbeddingRecord r;
        const auto len = in.get_le<std::uint32_t>("id length");
        r.id = in.get_bytes(len, "id");
        r.label = static_cast<unsigned char>(in.get_bytes(1, "label")[0]);
        r.f_bert = read_vec(d.n_bert, "f_bert");
        r.f_resnet = read_vec(d.n_resnet, "f_resnet");
        r.f_clip_t = read_vec(d.n_clip, "f_clip_t");
        r.f_clip_i = read_vec(d.n_clip, "f_clip_i");
        validate_record(r, d);
        c.records.push_back(std::move(r));
    }
    if (!in.at_end()) throw FormatError("trailing bytes after last corpus record");
    return c;
}

inline void write_corpus(const std::filesystem::path& path, const CorpusDims& dims,
                         std::span<const EmbeddingRecord> records) {
    detail::write_file_bytes(path, encode_corpus(dims, records));
}

inline void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
    write_corpus(path, corpus.dims(), corpus.records);
}

inline Corpus read_corpus(const std::filesystem::path& path) {
    return decode_corpus(detail::read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// JSONL: a header object, then one object per record.

inline void write_corpus_jsonl(const std::filesystem::path& path, const CorpusDims& dims,
                               std::span<const EmbeddingRecord> records) {
    detail::check_dims_positive(dims);
    std::string out;
    nlohmann::json head = {{"format", "fnde-jsonl"},
                           {"version", kCorpusVersion},
                           {"n_bert", dims.n_bert},
                           {"n_resnet", dims.n_resnet},
                           {"n_clip", dims.n_clip},
                           {"record_count", records.size()}};
    out += head.dump() + "\n";
    for (const auto& r : records) {
        validate_record(r, dims);
        // Widened to double so the decimal text round-trips the float exactly.
        auto widen = [](const std::vector<float>& v) { return std::vector<double>(v.begin(), v.end()); };
        nlohmann::json j = {{"id", r.id},
                            {"label", r.label},
                            {"f_bert", widen(r.f_bert)},
                            {"f_resnet", widen(r.f_resnet)},
                            {"f_clip_t", widen(r.f_clip_t)},
                            {"f_clip_i", widen(r.f_clip_i)}};
        out += j.dump() + "\n";
    }
    detail::write_file_bytes(path, out);
}

inline Corpus read_corpus_jsonl(const std::filesystem::path& path) {
    std::istringstream in(detail::read_file_bytes(path));
    std::string line;
    Corpus c;
    bool have_header = false;
    std::size_t line_no = 0;
    try {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (!have_header) {
                if (j.value("format", "") != "fnde-jsonl") throw FormatError("missing fnde-jsonl header line");
                c.header.version = j.at("version").get<std::uint16_t>();
                if (c.header.version != kCorpusVersion) {
                    throw FormatError("unsupported corpus version " + std::to_string(c.header.version));
                }
                c.header.dims = {j.at("n_bert").get<std::uint32_t>(), j.at("n_resnet").get<std::uint32_t>(),
                                 j.at("n_clip").get<std::uint32_t>()};
                detail::check_dims_positive(c.header.dims);
                have_header = true;
                continue;
            }
            auto narrow = [&](const char* key) {
                const auto v = j.at(key).get<std::vector<double>>();
                return std::vector<float>(v.begin(), v.end());
            };
            EmbeddingRecord r;
            r.id = j.at("id").get<std::string>();
            r.label = j.at("label").get<int>();
            r.f_bert = narrow("f_bert");
            r.f_resnet = narrow("f_resnet");
            r.f_clip_t = narrow("f_clip_t");
            r.f_clip_i = narrow("f_clip_i");
            validate_record(r, c.header.dims);
            c.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) throw FormatError("empty jsonl corpus (no header line)");
    c.header.record_count = c.records.size();
    return c;
}

/// Dispatches on extension: ".jsonl" is JSONL, anything else binary. The
/// result is validated for model use.
inline Corpus load_corpus(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw NotFoundError("corpus file '" + path.string() + "' does not exist");
    Corpus c = path.extension() == ".jsonl" ? read_corpus_jsonl(path) : read_corpus(path);
    validate_corpus(c);
    return c;
}

inline void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
    if (path.extension() == ".jsonl") {
        write_corpus_jsonl(path, corpus.dims(), corpus.records);
    } else {
        write_corpus(path, corpus);
    }
}

} // namespace fndclip
