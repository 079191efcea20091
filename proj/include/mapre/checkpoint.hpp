#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mapre/model.hpp"
#include "mapre/optim.hpp"
#include "mapre/tensor.hpp"

namespace mapre {

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, magic, version, truncated, checksum, format };

    CheckpointError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

namespace detail {

// CRC-32 (IEEE), reflected, as used by zip/png.
inline std::uint32_t crc32(const unsigned char* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline constexpr char kCheckpointMagic[6] = {'M', 'A', 'P', 'R', 'E', '\x01'};
inline constexpr int kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

// Versioned container of named parameter arrays plus configuration and
// step metadata.
struct Checkpoint {
    json config = json::object();
    long step = 0;
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const {
        for (const NamedArray& a : arrays) {
            if (a.name == name) return &a;
        }
        return nullptr;
    }
};

// Layout: magic, u32 metadata length, metadata JSON (format version, config,
// step, manifest with names/shapes/offsets), raw little-endian float64
// arrays in manifest order, u32 CRC-32 of everything prior.
inline void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    json manifest = json::array();
    std::size_t offset = 0;
    for (const NamedArray& a : checkpoint.arrays) {
        if (shape_numel(a.shape) != a.values.size()) {
            throw CheckpointError(CheckpointError::Kind::format, "checkpoint: shape/value mismatch for " + a.name);
        }
        manifest.push_back(json{{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
        offset += a.values.size() * sizeof(double);
    }
    const json meta = {{"format_version", kCheckpointVersion},
                       {"config", checkpoint.config},
                       {"step", checkpoint.step},
                       {"manifest", manifest}};
    const std::string meta_str = meta.dump();

    std::vector<unsigned char> buffer;
    buffer.reserve(sizeof(kCheckpointMagic) + 4 + meta_str.size() + offset + 4);
    buffer.insert(buffer.end(), kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic));
    detail::put_u32(buffer, static_cast<std::uint32_t>(meta_str.size()));
    buffer.insert(buffer.end(), meta_str.begin(), meta_str.end());
    for (const NamedArray& a : checkpoint.arrays) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(a.values.data());
        buffer.insert(buffer.end(), bytes, bytes + a.values.size() * sizeof(double));
    }
    detail::put_u32(buffer, detail::crc32(buffer.data(), buffer.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: cannot open " + path);
    std::vector<unsigned char> buffer((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buffer.size() < sizeof(kCheckpointMagic) + 4 + 4) {
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint: file too short: " + path);
    }
    if (std::memcmp(buffer.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw CheckpointError(CheckpointError::Kind::magic, "checkpoint: bad magic bytes in " + path);
    }

    // structural bounds are validated before the CRC so a cut-off file is
    // reported as truncation rather than a checksum failure
    const std::size_t meta_len = detail::get_u32(buffer.data() + sizeof(kCheckpointMagic));
    const std::size_t meta_start = sizeof(kCheckpointMagic) + 4;
    if (meta_start + meta_len + 4 > buffer.size()) {
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint: metadata extends past end of " + path);
    }
    json meta;
    try {
        meta = json::parse(buffer.begin() + static_cast<std::ptrdiff_t>(meta_start),
                           buffer.begin() + static_cast<std::ptrdiff_t>(meta_start + meta_len));
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::format, std::string("checkpoint: metadata parse: ") + e.what());
    }
    if (!meta.contains("format_version") || meta["format_version"].get<int>() != kCheckpointVersion) {
        throw CheckpointError(CheckpointError::Kind::version,
                              "checkpoint: unsupported format version in " + path);
    }

    const std::size_t data_start = meta_start + meta_len;
    const std::size_t data_len = buffer.size() - 4 - data_start;
    for (const json& entry : meta.at("manifest")) {
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        const std::size_t count = entry.at("count").get<std::size_t>();
        if (offset + count * sizeof(double) > data_len) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "checkpoint: array data extends past end of " + path);
        }
    }
    const std::uint32_t stored_crc = detail::get_u32(buffer.data() + buffer.size() - 4);
    const std::uint32_t actual_crc = detail::crc32(buffer.data(), buffer.size() - 4);
    if (stored_crc != actual_crc) {
        throw CheckpointError(CheckpointError::Kind::checksum, "checkpoint: CRC mismatch in " + path);
    }

    Checkpoint checkpoint;
    checkpoint.config = meta.value("config", json::object());
    checkpoint.step = meta.value("step", 0L);
    for (const json& entry : meta.at("manifest")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.shape = entry.at("shape").get<Shape>();
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        const std::size_t count = entry.at("count").get<std::size_t>();
        if (count != shape_numel(a.shape)) {
            throw CheckpointError(CheckpointError::Kind::format, "checkpoint: manifest count mismatch for " + a.name);
        }
        a.values.resize(count);
        std::memcpy(a.values.data(), buffer.data() + data_start + offset, count * sizeof(double));
        checkpoint.arrays.push_back(std::move(a));
    }
    return checkpoint;
}

// --- model <-> checkpoint -------------------------------------------------

inline json encoder_config_to_json(const EncoderConfig& c) {
    return json{{"num_layers", c.num_layers},
                {"model_dim", c.model_dim},
                {"num_heads", c.num_heads},
                {"feedforward_dim", c.feedforward_dim},
                {"vocab_size", c.vocab_size},
                {"max_sequence_length", c.max_sequence_length},
                {"dropout_rate", c.dropout_rate}};
}

inline EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.feedforward_dim = j.at("feedforward_dim").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_sequence_length = j.at("max_sequence_length").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    return c;
}

inline Checkpoint make_checkpoint(MapREModel& model, json run_config, long step, const AdamW* optimizer = nullptr) {
    Checkpoint checkpoint;
    checkpoint.step = step;
    checkpoint.config = json{{"run", std::move(run_config)},
                             {"model",
                              {{"encoder", encoder_config_to_json(model.config())},
                               {"share_encoders", model.shared_encoders()},
                               {"seed", model.seed()},
                               {"head_l_size", model.has_head_l() ? model.head_l().bias.size() : 0},
                               {"has_head_r", model.has_head_r()}}}};
    for (NamedParam& p : model.parameters()) {
        checkpoint.arrays.push_back({p.name, p.tensor.shape(), p.tensor.data()});
    }
    if (optimizer != nullptr) {
        json steps = json::object();
        const auto& params = const_cast<AdamW*>(optimizer)->params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            checkpoint.arrays.push_back({"optim.m." + params[i].name, params[i].tensor.shape(),
                                         optimizer->first_moment(i)});
            checkpoint.arrays.push_back({"optim.v." + params[i].name, params[i].tensor.shape(),
                                         optimizer->second_moment(i)});
            steps[params[i].name] = optimizer->param_step(i);
        }
        checkpoint.config["optimizer"] = json{{"param_steps", steps}, {"step_count", optimizer->step_count()}};
    }
    return checkpoint;
}

inline MapREModel model_from_checkpoint(const Checkpoint& checkpoint) {
    const json& mj = checkpoint.config.at("model");
    EncoderConfig config = encoder_config_from_json(mj.at("encoder"));
    MapREModel model = MapREModel::init(config, mj.at("share_encoders").get<bool>(),
                                        mj.at("seed").get<std::uint64_t>());
    const std::size_t head_l_size = mj.value("head_l_size", std::size_t{0});
    if (head_l_size > 0) model.ensure_head_l(head_l_size);
    if (mj.value("has_head_r", false)) model.ensure_head_r();

    for (NamedParam& p : model.parameters()) {
        const NamedArray* a = checkpoint.find(p.name);
        if (a == nullptr) {
            throw CheckpointError(CheckpointError::Kind::format, "checkpoint: missing parameter " + p.name);
        }
        if (a->shape != p.tensor.shape()) {
            throw CheckpointError(CheckpointError::Kind::format, "checkpoint: shape mismatch for " + p.name);
        }
        p.tensor.data() = a->values;
    }
    return model;
}

inline void restore_optimizer(const Checkpoint& checkpoint, AdamW& optimizer) {
    if (!checkpoint.config.contains("optimizer")) {
        throw CheckpointError(CheckpointError::Kind::format, "checkpoint: no optimizer state stored");
    }
    const json& steps = checkpoint.config.at("optimizer").at("param_steps");
    auto& params = optimizer.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const NamedArray* m = checkpoint.find("optim.m." + params[i].name);
        const NamedArray* v = checkpoint.find("optim.v." + params[i].name);
        if (m == nullptr || v == nullptr) {
            throw CheckpointError(CheckpointError::Kind::format,
                                  "checkpoint: missing optimizer state for " + params[i].name);
        }
        optimizer.restore_state(i, m->values, v->values, steps.at(params[i].name).get<long>());
    }
}

}  // namespace mapre
