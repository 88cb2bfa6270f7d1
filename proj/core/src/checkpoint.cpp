// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout: "SW3D1", then until EOF one blob per tensor:
//   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 data[...]
// all little-endian.

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "swin3d/backbone.hpp"
#include "swin3d/errors.hpp"

namespace swin3d {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'S', 'W', '3', 'D', '1'};

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw ParseError(fmt::format("checkpoint: truncated while reading {}", what), 0);
    }
    return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const NamedTensors& tensors) {
    out.write(kMagic, sizeof(kMagic));
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

NamedTensors read_checkpoint(std::istream& in) {
    char magic[5] = {};
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ParseError("checkpoint: missing SW3D1 header", 0);
    }
    NamedTensors out;
    while (in.peek() != std::char_traits<char>::eof()) {
        const auto len = get<std::uint32_t>(in, "name length");
        if (len > (1u << 16)) throw ParseError("checkpoint: implausible name length", 0);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw ParseError("checkpoint: truncated name", 0);
        const auto rank = get<std::uint32_t>(in, "rank");
        if (rank > 8) throw ParseError(fmt::format("checkpoint: '{}' has implausible rank {}", name, rank), 0);
        Shape shape;
        std::uint64_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape.push_back(get<std::uint64_t>(in, "dimension"));
            count *= shape.back();
        }
        if (count > (1ull << 32)) throw ParseError(fmt::format("checkpoint: '{}' is implausibly large", name), 0);
        Tensor t = Tensor::zeros(shape);
        if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
            throw ParseError(fmt::format("checkpoint: truncated data for '{}'", name), 0);
        }
        if (!out.emplace(name, std::move(t)).second) {
            throw ParseError(fmt::format("checkpoint: duplicate entry '{}'", name), 0);
        }
    }
    return out;
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write checkpoint '{}'", path));
    write_checkpoint(out, tensors);
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(fmt::format("cannot open checkpoint '{}'", path));
    return read_checkpoint(in);
}

NamedTensors model_state(Backbone& model) {
    NamedTensors state;
    model.visit([&](Parameter& p) { state.emplace(p.name, p.value); });
    state.emplace("embed.bn.running_mean", model.embed.running.mean);
    state.emplace("embed.bn.running_var", model.embed.running.var);
    return state;
}

namespace {

void assign(Tensor& dst, const NamedTensors& state, const std::string& name) {
    const auto it = state.find(name);
    if (it == state.end()) throw InputError(fmt::format("checkpoint: missing entry '{}'", name));
    if (it->second.shape() != dst.shape()) {
        throw InputError(fmt::format("checkpoint: '{}' has shape {}, model expects {}", name,
                                     shape_string(it->second.shape()), shape_string(dst.shape())));
    }
    dst = it->second;
}

}  // namespace

void load_model_state(Backbone& model, const NamedTensors& state) {
    model.visit([&](Parameter& p) { assign(p.value, state, p.name); });
    assign(model.embed.running.mean, state, "embed.bn.running_mean");
    assign(model.embed.running.var, state, "embed.bn.running_var");
}

}  // namespace swin3d
