#pragma once

// Binary checkpoint, little-endian throughout:
//
//   "XIQA" | u16 version | u64 payload bytes that follow
//   model config   : u32 x7 (image, patch, channels, embed, heads, enc depth, dec depth)
//                    f64 mlp_ratio | u8 wiring
//   parameters     : u32 count, then per entry
//                    u16 name length | name | u8 rank | u32 extents | f32 values
//   optimizer      : u8 present; if 1: f64 lr, beta1, beta2, eps, weight decay | u64 step
//                    u32 count, then per entry u16 name length | name | u64 n | f32 m[n] | f32 v[n]
//   rng state      : u32 length | text
//   training       : u32 epoch | u32 count | f64 losses
//   metadata       : u32 count, then per entry u16 key length | key | u32 value length | value

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xiqa/adamw.hpp"
#include "xiqa/vit.hpp"

namespace xiqa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'X', 'I', 'Q', 'A'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct ParamRecord {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct OptimRecord {
    AdamWOptions options;
    std::uint64_t step = 0;
    std::vector<std::string> names;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

struct Checkpoint {
    ModelConfig config;
    std::vector<ParamRecord> params;
    std::optional<OptimRecord> optim;
    std::string rng_state;
    std::uint32_t epoch = 0;
    std::vector<double> loss_history;
    std::map<std::string, std::string> meta;

    const ParamRecord* find(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return &p;
        return nullptr;
    }
};

namespace detail {

class ByteWriter {
public:
    template <class U>
    void put(U v) {
        char buf[sizeof(U)];
        std::memcpy(buf, &v, sizeof(U));
        bytes_.insert(bytes_.end(), buf, buf + sizeof(U));
    }
    void put_bytes(const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        bytes_.insert(bytes_.end(), c, c + n);
    }
    void put_name(const std::string& s) {
        if (s.size() > 0xFFFF) throw Error(Errc::InvalidConfig, "name too long for checkpoint");
        put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    void put_text(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    void put_floats(const std::vector<float>& v) { put_bytes(v.data(), v.size() * sizeof(float)); }
    std::vector<char>& bytes() { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}

    template <class U>
    U get() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, data_ + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    std::string get_string(std::size_t n) {
        need(n);
        std::string s(data_ + pos_, n);
        pos_ += n;
        return s;
    }
    std::string get_name() { return get_string(get<std::uint16_t>()); }
    std::string get_text() { return get_string(get<std::uint32_t>()); }
    std::vector<float> get_floats(std::uint64_t n) {
        if (n > (size_ - pos_) / sizeof(float)) throw Error(Errc::TruncatedFile, "value block runs past end of file");
        std::vector<float> v(n);
        std::memcpy(v.data(), data_ + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
        return v;
    }
    bool at_end() const { return pos_ == size_; }

private:
    void need(std::size_t n) const {
        if (n > size_ - pos_) throw Error(Errc::TruncatedFile, "checkpoint ends early");
    }
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
    detail::ByteWriter w;
    const auto& c = ck.config;
    for (std::size_t v : {c.image_size, c.patch_size, c.channels, c.embed_dim, c.num_heads, c.encoder_depth, c.decoder_depth})
        w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
    w.put<double>(c.mlp_ratio);
    w.put<std::uint8_t>(c.wiring == CrossWiring::Transfer ? 0 : 1);

    w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& p : ck.params) {
        if (shape_numel(p.shape) != p.values.size()) throw Error(Errc::ShapeTableMismatch, "shape/value count mismatch for " + p.name);
        w.put_name(p.name);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(p.shape.size()));
        for (auto e : p.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
        w.put_floats(p.values);
    }

    w.put<std::uint8_t>(ck.optim ? 1 : 0);
    if (ck.optim) {
        const auto& o = *ck.optim;
        w.put<double>(o.options.learning_rate);
        w.put<double>(o.options.beta1);
        w.put<double>(o.options.beta2);
        w.put<double>(o.options.eps);
        w.put<double>(o.options.weight_decay);
        w.put<std::uint64_t>(o.step);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(o.names.size()));
        for (std::size_t i = 0; i < o.names.size(); ++i) {
            w.put_name(o.names[i]);
            w.put<std::uint64_t>(o.m[i].size());
            w.put_floats(o.m[i]);
            w.put_floats(o.v[i]);
        }
    }

    w.put_text(ck.rng_state);
    w.put<std::uint32_t>(ck.epoch);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.loss_history.size()));
    for (double l : ck.loss_history) w.put<double>(l);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
        w.put_name(k);
        w.put_text(v);
    }

    detail::ByteWriter out;
    out.put_bytes(kCheckpointMagic, 4);
    out.put<std::uint16_t>(kCheckpointVersion);
    out.put<std::uint64_t>(w.bytes().size());
    out.put_bytes(w.bytes().data(), w.bytes().size());
    return std::move(out.bytes());
}

inline Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
    if (bytes.size() < 4) throw Error(Errc::TruncatedFile, "file shorter than the magic");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw Error(Errc::BadMagic, "not an XIQA checkpoint");
    detail::ByteReader head(bytes.data() + 4, bytes.size() - 4);
    const auto version = head.get<std::uint16_t>();
    if (version != kCheckpointVersion) throw Error(Errc::VersionUnsupported, "checkpoint version " + std::to_string(version));
    const auto payload = head.get<std::uint64_t>();
    constexpr std::size_t header = 4 + 2 + 8;
    if (payload != bytes.size() - header) {
        throw Error(Errc::TruncatedFile, "payload length " + std::to_string(payload) + " but file holds " +
                                             std::to_string(bytes.size() - header));
    }
    detail::ByteReader r(bytes.data() + header, bytes.size() - header);

    Checkpoint ck;
    auto& c = ck.config;
    c.image_size = r.get<std::uint32_t>();
    c.patch_size = r.get<std::uint32_t>();
    c.channels = r.get<std::uint32_t>();
    c.embed_dim = r.get<std::uint32_t>();
    c.num_heads = r.get<std::uint32_t>();
    c.encoder_depth = r.get<std::uint32_t>();
    c.decoder_depth = r.get<std::uint32_t>();
    c.mlp_ratio = r.get<double>();
    const auto wiring = r.get<std::uint8_t>();
    if (wiring > 1) throw Error(Errc::ShapeTableMismatch, "unknown cross wiring tag");
    c.wiring = wiring == 0 ? CrossWiring::Transfer : CrossWiring::Swap;

    std::map<std::string, std::size_t> numel_by_name;
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        ParamRecord p;
        p.name = r.get_name();
        const auto rank = r.get<std::uint8_t>();
        std::uint64_t n = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            const auto e = r.get<std::uint32_t>();
            p.shape.push_back(e);
            n *= e;
            if (n > bytes.size()) throw Error(Errc::ShapeTableMismatch, "extent product of " + p.name + " exceeds file size");
        }
        p.values = r.get_floats(n);
        if (!numel_by_name.emplace(p.name, n).second) throw Error(Errc::ShapeTableMismatch, "duplicate parameter " + p.name);
        ck.params.push_back(std::move(p));
    }

    if (r.get<std::uint8_t>() != 0) {
        OptimRecord o;
        o.options.learning_rate = r.get<double>();
        o.options.beta1 = r.get<double>();
        o.options.beta2 = r.get<double>();
        o.options.eps = r.get<double>();
        o.options.weight_decay = r.get<double>();
        o.step = r.get<std::uint64_t>();
        const auto entries = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < entries; ++i) {
            o.names.push_back(r.get_name());
            const auto n = r.get<std::uint64_t>();
            auto it = numel_by_name.find(o.names.back());
            if (it == numel_by_name.end() || it->second != n) {
                throw Error(Errc::ShapeTableMismatch, "optimizer entry " + o.names.back() + " has no matching parameter");
            }
            o.m.push_back(r.get_floats(n));
            o.v.push_back(r.get_floats(n));
        }
        ck.optim = std::move(o);
    }

    ck.rng_state = r.get_text();
    ck.epoch = r.get<std::uint32_t>();
    const auto losses = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < losses; ++i) ck.loss_history.push_back(r.get<double>());
    const auto metas = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < metas; ++i) {
        auto key = r.get_name();
        ck.meta[key] = r.get_text();
    }
    if (!r.at_end()) throw Error(Errc::TruncatedFile, "trailing bytes after metadata");
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::UnwritableDestination, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::UnwritableDestination, "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::UnreadableFile, "cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

/// Captures all model parameters (as 32-bit values).
template <class T>
Checkpoint make_checkpoint(CrossIqaModel<T>& model) {
    Checkpoint ck;
    ck.config = model.config;
    model.for_each_param([&](const std::string& name, Tensor<T>& t) {
        ck.params.push_back({name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())});
    });
    return ck;
}

/// Rebuilds a model; every expected parameter must be present with its expected shape.
template <class T>
CrossIqaModel<T> model_from_checkpoint(const Checkpoint& ck) {
    ck.config.validate();
    CrossIqaModel<T> model = init_params<T>(ck.config, 0);
    std::set<std::string> used;
    model.for_each_param([&](const std::string& name, Tensor<T>& t) {
        const ParamRecord* rec = ck.find(name);
        if (!rec) throw Error(Errc::ShapeTableMismatch, "checkpoint lacks parameter " + name);
        if (rec->shape != t.shape()) {
            throw Error(Errc::ShapeTableMismatch, name + " has shape " + shape_str(rec->shape) + ", model expects " +
                                                      shape_str(t.shape()));
        }
        t = Tensor<T>(rec->shape, std::vector<T>(rec->values.begin(), rec->values.end()), true);
        used.insert(name);
    });
    if (used.size() != ck.params.size()) throw Error(Errc::ShapeTableMismatch, "checkpoint holds parameters the model does not know");
    return model;
}

template <class T>
OptimRecord to_record(const OptimState<T>& s) {
    OptimRecord o;
    o.options = s.options;
    o.step = s.step;
    o.names = s.names;
    for (const auto& m : s.m) o.m.emplace_back(m.begin(), m.end());
    for (const auto& v : s.v) o.v.emplace_back(v.begin(), v.end());
    return o;
}

template <class T>
OptimState<T> from_record(const OptimRecord& o) {
    OptimState<T> s;
    s.options = o.options;
    s.step = o.step;
    s.names = o.names;
    for (const auto& m : o.m) s.m.emplace_back(m.begin(), m.end());
    for (const auto& v : o.v) s.v.emplace_back(v.begin(), v.end());
    return s;
}

} // namespace xiqa
