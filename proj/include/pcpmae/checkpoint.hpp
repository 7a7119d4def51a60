#pragma once

#include <cstring>
#include <fstream>

#include "pcpmae/config_json.hpp"
#include "pcpmae/training.hpp"

namespace pcpmae {

// Versioned little-endian checkpoint.
//
//   magic "PCPM", u32 version, then four sections in order:
//   config snapshot / named parameters / optimizer state / rng + loop state.
//   Every section is framed the same way: u64 tensor count, then per tensor
//   { u16 name length, name bytes, u8 rank, u64 dims..., f32 data }.
//
// Byte payloads (the config JSON and the serialized generator state) ride in
// the same framing with one byte value per f32 element.

inline constexpr char kCheckpointMagic[4] = {'P', 'C', 'P', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct RawTensor {
    std::string name;
    Shape dims;
    std::vector<float> data;
};
using RawSection = std::vector<RawTensor>;

namespace detail {

template <class T>
void put_raw(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw std::runtime_error("checkpoint truncated while reading " + std::string(what) +
                                     ": expected " + std::to_string(pos + n) +
                                     " bytes, file has " + std::to_string(buf.size()));
    }
    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string get_str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline RawTensor bytes_tensor(const std::string& name, const std::string& bytes) {
    RawTensor t;
    t.name = name;
    t.dims = {static_cast<std::int64_t>(bytes.size())};
    t.data.reserve(bytes.size());
    for (unsigned char c : bytes) t.data.push_back(static_cast<float>(c));
    return t;
}

inline std::string tensor_bytes(const RawTensor& t) {
    std::string out;
    out.reserve(t.data.size());
    for (float v : t.data) out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    return out;
}

inline RawTensor scalar_tensor(const std::string& name, double v) {
    return RawTensor{name, {1}, {static_cast<float>(v)}};
}

}  // namespace detail

inline void write_checkpoint_sections(const std::string& path,
                                      const std::vector<RawSection>& sections) {
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put_raw<std::uint32_t>(out, kCheckpointVersion);
    for (const auto& sec : sections) {
        detail::put_raw<std::uint64_t>(out, sec.size());
        for (const auto& t : sec) {
            detail::put_raw<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
            out.append(t.name);
            detail::put_raw<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
            for (auto d : t.dims) detail::put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(d));
            const std::size_t bytes = t.data.size() * sizeof(float);
            const std::size_t at = out.size();
            out.resize(at + bytes);
            std::memcpy(out.data() + at, t.data.data(), bytes);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: write failure on '" + path + "'");
}

inline std::vector<RawSection> read_checkpoint_sections(const std::string& path,
                                                        std::size_t expected_sections = 4) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::ByteReader r{buf};

    const std::string magic = r.get_str(4, "magic");
    if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
        throw std::runtime_error("checkpoint: magic '" + magic + "' does not match 'PCPM'");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: file version " + std::to_string(version) +
                                 ", this build reads version " +
                                 std::to_string(kCheckpointVersion));

    std::vector<RawSection> sections;
    for (std::size_t s = 0; s < expected_sections; ++s) {
        const auto count = r.get<std::uint64_t>("tensor count");
        RawSection sec;
        sec.reserve(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            RawTensor t;
            const auto name_len = r.get<std::uint16_t>("name length");
            t.name = r.get_str(name_len, "name");
            const auto rank = r.get<std::uint8_t>("rank");
            std::int64_t numel = 1;
            for (std::uint8_t d = 0; d < rank; ++d) {
                t.dims.push_back(static_cast<std::int64_t>(r.get<std::uint64_t>("dim")));
                numel *= t.dims.back();
            }
            r.need(static_cast<std::size_t>(numel) * sizeof(float), t.name.c_str());
            t.data.resize(static_cast<std::size_t>(numel));
            std::memcpy(t.data.data(), buf.data() + r.pos,
                        static_cast<std::size_t>(numel) * sizeof(float));
            r.pos += static_cast<std::size_t>(numel) * sizeof(float);
            sec.push_back(std::move(t));
        }
        sections.push_back(std::move(sec));
    }
    if (r.pos != buf.size())
        throw std::runtime_error("checkpoint: " + std::to_string(buf.size() - r.pos) +
                                 " trailing bytes after the final section");
    return sections;
}

template <class Real>
void save_checkpoint(const TrainState<Real>& st, const std::string& path) {
    RawSection config_sec;
    config_sec.push_back(detail::bytes_tensor("config.json", config_to_json(st.cfg).dump()));

    RawSection params;
    params.reserve(st.weights.store.size());
    for (const auto& e : st.weights.store.entries()) {
        RawTensor t;
        t.name = e.name;
        t.dims = e.tensor.shape();
        t.data.reserve(e.tensor.data().size());
        for (Real v : e.tensor.data()) t.data.push_back(static_cast<float>(v));
        params.push_back(std::move(t));
    }

    RawSection optim;
    optim.push_back(detail::scalar_tensor("optim.step", static_cast<double>(st.optim.step)));
    for (std::size_t i = 0; i < st.weights.store.size(); ++i) {
        const auto& name = st.weights.store.entries()[i].name;
        RawTensor m{"adam.m." + name, st.weights.store.entries()[i].tensor.shape(), {}};
        RawTensor v{"adam.v." + name, st.weights.store.entries()[i].tensor.shape(), {}};
        m.data.reserve(st.optim.m[i].size());
        v.data.reserve(st.optim.v[i].size());
        for (Real x : st.optim.m[i]) m.data.push_back(static_cast<float>(x));
        for (Real x : st.optim.v[i]) v.data.push_back(static_cast<float>(x));
        optim.push_back(std::move(m));
        optim.push_back(std::move(v));
    }

    RawSection loop;
    loop.push_back(detail::bytes_tensor("rng.state", st.rng.serialize()));
    RawTensor perm{"loop.perm", {static_cast<std::int64_t>(st.perm.size())}, {}};
    perm.data.reserve(st.perm.size());
    for (auto i : st.perm) perm.data.push_back(static_cast<float>(i));
    loop.push_back(std::move(perm));
    loop.push_back(detail::scalar_tensor("loop.perm_pos", static_cast<double>(st.perm_pos)));
    loop.push_back(detail::scalar_tensor("loop.step", static_cast<double>(st.step)));

    write_checkpoint_sections(path, {config_sec, params, optim, loop});
}

// Reads only the config snapshot of a checkpoint.
inline TrainConfig read_checkpoint_config(const std::string& path) {
    auto sections = read_checkpoint_sections(path);
    if (sections[0].empty() || sections[0][0].name != "config.json")
        throw std::runtime_error("checkpoint: missing config snapshot in '" + path + "'");
    return config_from_json(nlohmann::json::parse(detail::tensor_bytes(sections[0][0])));
}

template <class Real>
TrainState<Real> load_checkpoint(const std::string& path) {
    auto sections = read_checkpoint_sections(path);
    if (sections[0].empty() || sections[0][0].name != "config.json")
        throw std::runtime_error("checkpoint: missing config snapshot in '" + path + "'");
    TrainConfig cfg =
        config_from_json(nlohmann::json::parse(detail::tensor_bytes(sections[0][0])));
    TrainState<Real> st = init_train_state<Real>(cfg);

    const auto& params = sections[1];
    if (params.size() != st.weights.store.size())
        throw std::runtime_error("checkpoint: holds " + std::to_string(params.size()) +
                                 " parameter tensors, model expects " +
                                 std::to_string(st.weights.store.size()));
    for (const auto& t : params) {
        auto& dst = st.weights.store.get(t.name);
        if (dst.shape() != t.dims)
            throw std::runtime_error("checkpoint: parameter '" + t.name + "' has shape " +
                                     shape_str(t.dims) + ", model expects " +
                                     shape_str(dst.shape()));
        for (std::size_t i = 0; i < t.data.size(); ++i)
            dst.data()[i] = static_cast<Real>(t.data[i]);
    }

    std::size_t cursor = 0;
    const auto& optim = sections[2];
    auto next_optim = [&](const std::string& want) -> const RawTensor& {
        if (cursor >= optim.size() || optim[cursor].name != want)
            throw std::runtime_error("checkpoint: optimizer section missing '" + want + "'");
        return optim[cursor++];
    };
    st.optim.step = static_cast<std::int64_t>(next_optim("optim.step").data[0]);
    for (std::size_t i = 0; i < st.weights.store.size(); ++i) {
        const auto& name = st.weights.store.entries()[i].name;
        const auto& m = next_optim("adam.m." + name);
        const auto& v = next_optim("adam.v." + name);
        for (std::size_t j = 0; j < m.data.size(); ++j)
            st.optim.m[i][j] = static_cast<Real>(m.data[j]);
        for (std::size_t j = 0; j < v.data.size(); ++j)
            st.optim.v[i][j] = static_cast<Real>(v.data[j]);
    }

    for (const auto& t : sections[3]) {
        if (t.name == "rng.state") {
            st.rng.deserialize(detail::tensor_bytes(t));
        } else if (t.name == "loop.perm") {
            st.perm.clear();
            for (float v : t.data) st.perm.push_back(static_cast<std::size_t>(v));
        } else if (t.name == "loop.perm_pos") {
            st.perm_pos = static_cast<std::size_t>(t.data[0]);
        } else if (t.name == "loop.step") {
            st.step = static_cast<std::int64_t>(t.data[0]);
        } else {
            throw std::runtime_error("checkpoint: unexpected loop tensor '" + t.name + "'");
        }
    }
    return st;
}

}  // namespace pcpmae
