#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fndclip/config.hpp"
#include "fndclip/corpus.hpp"
#include "fndclip/errors.hpp"
#include "fndclip/model.hpp"

namespace fndclip {

// Layout, all little-endian:
//   "FNDC" u16 version
//   u32 meta_len, meta JSON ({"model": ..., plus caller-supplied sections})
//   u32 entry_count, then per entry:
//     u16 name_len, name, u8 kind (0 param, 1 buffer), u64 rows, u64 cols, u64 step_count, u64 offset
//   f64 data; offsets count doubles from the start of the data block.
//   A param stores value, adam_m, adam_v back to back; a buffer stores its values.

inline constexpr std::array<char, 4> kCheckpointMagic{'F', 'N', 'D', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    bool is_param = true;
    std::uint64_t rows = 0, cols = 0, step_count = 0, offset = 0;
};

struct Checkpoint {
    FusionModel model;
    nlohmann::json meta;  // everything except "model" as supplied at save time
};

namespace detail {

inline void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

} // namespace detail

inline std::string encode_checkpoint(FusionModel& model, const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json head = meta.is_object() ? meta : nlohmann::json::object();
    head["model"] = to_json(model.config());
    const std::string head_text = head.dump();

    std::vector<CheckpointEntry> toc;
    std::vector<const std::vector<double>*> blocks;
    std::uint64_t offset = 0;
    for (Param* p : model.parameters()) {
        toc.push_back({p->name, true, p->value.rows(), p->value.cols(), p->step_count, offset});
        for (const Tensor2* t : {&p->value, &p->adam_m, &p->adam_v}) blocks.push_back(&t->data());
        offset += 3 * p->value.size();
    }
    std::vector<std::vector<double>> buffer_copies;
    const auto bufs = model.buffers();
    buffer_copies.reserve(bufs.size());
    for (const auto& b : bufs) {
        toc.push_back({b.name, false, 1, b.values.size(), 0, offset});
        buffer_copies.emplace_back(b.values.begin(), b.values.end());
        offset += b.values.size();
    }
    for (const auto& c : buffer_copies) blocks.push_back(&c);

    std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_le(out, kCheckpointVersion);
    detail::put_le(out, static_cast<std::uint32_t>(head_text.size()));
    out += head_text;
    detail::put_le(out, static_cast<std::uint32_t>(toc.size()));
    for (const auto& e : toc) {
        detail::put_le(out, static_cast<std::uint16_t>(e.name.size()));
        out += e.name;
        out.push_back(static_cast<char>(e.is_param ? 0 : 1));
        detail::put_le(out, e.rows);
        detail::put_le(out, e.cols);
        detail::put_le(out, e.step_count);
        detail::put_le(out, e.offset);
    }
    for (const auto* block : blocks) {
        for (double v : *block) detail::put_f64(out, v);
    }
    return out;
}

inline Checkpoint decode_checkpoint(std::string bytes) {
    detail::ByteReader in(std::move(bytes), "checkpoint");
    const std::string magic = in.get_bytes(4, "magic");
    if (magic != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end())) {
        throw FormatError("not a checkpoint file (bad magic)");
    }
    const auto version = in.get_le<std::uint16_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto head_len = in.get_le<std::uint32_t>("meta length");
    nlohmann::json head;
    try {
        head = nlohmann::json::parse(in.get_bytes(head_len, "meta"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint meta is not valid JSON: ") + e.what());
    }
    if (!head.is_object() || !head.contains("model")) throw FormatError("checkpoint meta lacks a model section");

    FusionConfig config;
    try {
        config = fusion_config_from_json(head.at("model"));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint model config: ") + e.what());
    }
    Checkpoint ck{FusionModel(config), head};
    ck.meta.erase("model");

    const auto count = in.get_le<std::uint32_t>("entry count");
    std::vector<CheckpointEntry> toc;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const auto len = in.get_le<std::uint16_t>("entry name length");
        e.name = in.get_bytes(len, "entry name");
        const auto kind = static_cast<unsigned char>(in.get_bytes(1, "entry kind")[0]);
        if (kind > 1) throw FormatError("checkpoint entry '" + e.name + "' has unknown kind");
        e.is_param = kind == 0;
        e.rows = in.get_le<std::uint64_t>("entry rows");
        e.cols = in.get_le<std::uint64_t>("entry cols");
        e.step_count = in.get_le<std::uint64_t>("entry step count");
        e.offset = in.get_le<std::uint64_t>("entry offset");
        toc.push_back(std::move(e));
    }
    const std::size_t n_doubles = in.remaining() / 8;
    if (in.remaining() % 8 != 0) throw FormatError("checkpoint data block is not a whole number of f64 values");
    std::vector<double> data(n_doubles);
    for (auto& v : data) v = std::bit_cast<double>(in.get_le<std::uint64_t>("data"));

    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : toc) {
        if (!by_name.emplace(e.name, &e).second) throw FormatError("duplicate checkpoint entry '" + e.name + "'");
    }
    auto fetch = [&](const std::string& name, bool is_param, std::size_t rows, std::size_t cols) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint is missing '" + name + "'");
        const auto& e = *it->second;
        if (e.is_param != is_param || e.rows != rows || e.cols != cols) {
            throw FormatError("checkpoint entry '" + name + "' has the wrong kind or shape");
        }
        const std::size_t len = (is_param ? 3 : 1) * rows * cols;
        if (e.offset > n_doubles || n_doubles - e.offset < len) {
            throw FormatError("checkpoint entry '" + name + "' points past the data block");
        }
        by_name.erase(it);
        return std::pair{&e, data.begin() + static_cast<std::ptrdiff_t>(e.offset)};
    };

    for (Param* p : ck.model.parameters()) {
        const std::size_t n = p->value.size();
        auto [e, src] = fetch(p->name, true, p->value.rows(), p->value.cols());
        std::copy(src, src + n, p->value.data().begin());
        std::copy(src + n, src + 2 * n, p->adam_m.data().begin());
        std::copy(src + 2 * n, src + 3 * n, p->adam_v.data().begin());
        p->step_count = e->step_count;
    }
    for (auto& b : ck.model.buffers()) {
        auto [e, src] = fetch(b.name, false, 1, b.values.size());
        std::copy(src, src + static_cast<std::ptrdiff_t>(b.values.size()), b.values.begin());
    }
    if (!by_name.empty()) {
        throw FormatError("checkpoint has entry '" + by_name.begin()->first + "' the model does not use");
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, FusionModel& model,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    detail::write_file_bytes(path, encode_checkpoint(model, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file_bytes(path));
}

} // namespace fndclip
