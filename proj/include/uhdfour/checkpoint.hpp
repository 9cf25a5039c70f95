#pragma once

// Binary checkpoints. Layout (all integers little-endian):
//   "UHDF" | u32 version = 1 | u32 tensor count |
//   per tensor: u16 name length | name bytes | u8 rank | u32 dims[rank] | f32 data[]
// Besides the parameters a file holds "meta.config" (architecture) and, when
// saved from training, "optim.step" plus "optim.m/<name>" / "optim.v/<name>".

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <span>
#include <type_traits>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "uhdfour/adam.hpp"
#include "uhdfour/model.hpp"

namespace uhdfour {

class CheckpointError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

inline constexpr char kCheckpointMagic[4] = {'U', 'H', 'D', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
   public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    template <class U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

   private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::string bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint32_t> dims_of(const Shape& s) {
    return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
            static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
}

inline Shape shape_of(const std::vector<std::uint32_t>& dims) {
    if (dims.empty() || dims.size() > 4) throw CheckpointError("unsupported tensor rank " + std::to_string(dims.size()));
    std::size_t d[4] = {1, 1, 1, 1};
    for (std::size_t i = 0; i < dims.size(); ++i) d[4 - dims.size() + i] = dims[i];
    return {d[0], d[1], d[2], d[3]};
}

template <class T>
CheckpointEntry entry_from(const std::string& name, const Shape& shape, std::span<const T> values) {
    return {name, dims_of(shape), std::vector<float>(values.begin(), values.end())};
}

inline std::vector<float> encode_config(const ModelConfig& c) {
    const auto& f = c.flags;
    return {1.0f, float(c.width), float(c.scale), float(c.channels), float(c.hr_kernel),
            float(f.fouspa_fourier), float(f.fouspa_spatial), float(f.fouspa_residual),
            float(f.adjust_fourier), float(f.amplitude_modulation), float(f.phase_guidance),
            float(f.adjust_spatial), float(f.adjust_residual), float(f.add_lr_output)};
}

inline ModelConfig decode_config(const std::vector<float>& v) {
    if (v.size() != 14 || v[0] != 1.0f) throw CheckpointError("unrecognized meta.config layout");
    auto n = [&](std::size_t i) { return static_cast<std::size_t>(v[i]); };
    ModelConfig c;
    c.width = n(1);
    c.scale = n(2);
    c.channels = n(3);
    c.hr_kernel = n(4);
    c.flags = {v[5] != 0, n(6), v[7] != 0, v[8] != 0, v[9] != 0, v[10] != 0, n(11), v[12] != 0, v[13] != 0};
    validate(c);
    return c;
}

}  // namespace detail

inline std::string serialize_checkpoint(const std::vector<CheckpointEntry>& entries) {
    std::string out(kCheckpointMagic, 4);
    detail::put_le(out, kCheckpointVersion);
    detail::put_le(out, static_cast<std::uint32_t>(entries.size()));
    std::unordered_set<std::string> seen;
    for (const auto& e : entries) {
        if (!seen.insert(e.name).second) throw CheckpointError("duplicate tensor name " + e.name);
        if (e.name.size() > 0xFFFF) throw CheckpointError("tensor name too long: " + e.name);
        std::size_t count = 1;
        for (auto d : e.dims) count *= d;
        if (count != e.data.size() || e.dims.size() > 0xFF) throw CheckpointError("inconsistent tensor " + e.name);
        detail::put_le(out, static_cast<std::uint16_t>(e.name.size()));
        out += e.name;
        out.push_back(static_cast<char>(e.dims.size()));
        for (auto d : e.dims) detail::put_le(out, d);
        for (float v : e.data) detail::put_le(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

inline std::vector<CheckpointEntry> parse_checkpoint(std::string bytes) {
    detail::Reader in(std::move(bytes));
    if (in.take(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("not a checkpoint (bad magic)");
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>();
    std::vector<CheckpointEntry> entries;
    std::unordered_set<std::string> seen;
    for (std::uint32_t k = 0; k < count; ++k) {
        CheckpointEntry e;
        e.name = in.take(in.get<std::uint16_t>());
        if (!seen.insert(e.name).second) throw CheckpointError("duplicate tensor name " + e.name);
        const auto rank = in.get<std::uint8_t>();
        std::size_t size = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            e.dims.push_back(in.get<std::uint32_t>());
            size *= e.dims.back();
        }
        e.data.resize(size);
        for (auto& v : e.data) v = std::bit_cast<float>(in.get<std::uint32_t>());
        entries.push_back(std::move(e));
    }
    if (!in.done()) throw CheckpointError("trailing bytes after last tensor");
    return entries;
}

inline void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
    const auto bytes = serialize_checkpoint(entries);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    std::string bytes{std::istreambuf_iterator<char>(in), {}};
    try {
        return parse_checkpoint(std::move(bytes));
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

/// Parameters are stored as float32, so 64-bit models round on save.
template <class T>
std::vector<CheckpointEntry> checkpoint_entries(const Model<T>& m, const AdamState<T>* optim = nullptr) {
    std::vector<CheckpointEntry> out;
    const auto cfg = detail::encode_config(m.config);
    out.push_back({"meta.config", {static_cast<std::uint32_t>(cfg.size())}, cfg});
    const auto& names = m.store.names();
    const auto& tensors = m.store.tensors();
    for (std::size_t i = 0; i < names.size(); ++i)
        out.push_back(detail::entry_from<T>(names[i], tensors[i].shape(), tensors[i].data()));
    if (optim && !optim->m.empty()) {
        require(optim->m.size() == names.size(), "checkpoint: optimizer state does not match model");
        out.push_back({"optim.step", {1}, {static_cast<float>(optim->step)}});
        for (std::size_t i = 0; i < names.size(); ++i) {
            out.push_back(detail::entry_from<T>("optim.m/" + names[i], tensors[i].shape(), optim->m[i]));
            out.push_back(detail::entry_from<T>("optim.v/" + names[i], tensors[i].shape(), optim->v[i]));
        }
    }
    return out;
}

template <class T>
void save_checkpoint(const Model<T>& m, const std::filesystem::path& path, const AdamState<T>* optim = nullptr) {
    write_checkpoint(path, checkpoint_entries(m, optim));
}

template <class T>
struct LoadedCheckpoint {
    Model<T> model;
    std::optional<AdamState<T>> optim;
};

template <class T>
LoadedCheckpoint<T> model_from_entries(const std::vector<CheckpointEntry>& entries) {
    const CheckpointEntry* meta = nullptr;
    const CheckpointEntry* step = nullptr;
    std::unordered_map<std::string, const CheckpointEntry*> m_state, v_state;
    std::vector<std::string> names;
    std::vector<Tensor<float>> values;
    for (const auto& e : entries) {
        if (e.name == "meta.config") meta = &e;
        else if (e.name == "optim.step") step = &e;
        else if (e.name.starts_with("optim.m/")) m_state[e.name.substr(8)] = &e;
        else if (e.name.starts_with("optim.v/")) v_state[e.name.substr(8)] = &e;
        else {
            names.push_back(e.name);
            values.emplace_back(detail::shape_of(e.dims), e.data);
        }
    }
    if (!meta) throw CheckpointError("checkpoint has no meta.config");
    LoadedCheckpoint<T> out{build_model<T>(detail::decode_config(meta->data)), std::nullopt};
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (out.model.store.contains(names[i]) &&
            !(detail::shape_of(detail::dims_of(out.model.store.get(names[i]).shape())) == values[i].shape())) {
            throw CheckpointError("shape mismatch for " + names[i]);
        }
    }
    try {
        assign_parameters(out.model, names, values);
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint does not match its config: ") + e.what());
    }
    if (step) {
        AdamState<T> st;
        st.step = static_cast<std::uint64_t>(step->data.at(0));
        for (const auto& name : out.model.store.names()) {
            const auto mi = m_state.find(name), vi = v_state.find(name);
            if (mi == m_state.end() || vi == v_state.end()) throw CheckpointError("missing optimizer state for " + name);
            st.m.emplace_back(mi->second->data.begin(), mi->second->data.end());
            st.v.emplace_back(vi->second->data.begin(), vi->second->data.end());
        }
        out.optim = std::move(st);
    }
    return out;
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    return model_from_entries<T>(read_checkpoint(path));
}

}  // namespace uhdfour
