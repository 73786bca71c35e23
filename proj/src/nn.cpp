// SPDX-License-Identifier: Apache-2.0

#include "regformer/nn.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>

namespace regformer {

Tensor truncated_normal(Shape shape, double std, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) {
        double z = dist(rng);
        while (std::abs(z) > 2.0) z = dist(rng);
        v = z * std;
    }
    return Tensor(std::move(shape), std::move(values), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double std)
    : weight(truncated_normal({in, out}, std, rng)), bias(Tensor::zeros({out}, true)) {}

void Linear::collect(const std::string& prefix, NamedParameters& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::size_t width) : gamma(Tensor::full({width}, 1.0, true)), beta(Tensor::zeros({width}, true)) {}

void LayerNorm::collect(const std::string& prefix, NamedParameters& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

void zero_parameters(const NamedParameters& params) {
    for (auto [name, t] : params) {
        auto v = t.mutable_values();
        std::fill(v.begin(), v.end(), 0.0);
    }
}

namespace {

constexpr char kMagic[4] = {'R', 'G', 'F', 'C'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("checkpoint " + path.string() + ": truncated");
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedParameters& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os.write(kMagic, 4);
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
        for (double v : t.values()) write_f32(os, static_cast<float>(v));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, const NamedParameters& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
    }
    const std::uint32_t version = read_u32(is, path);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = read_u32(is, path);
    std::map<std::string, std::pair<Shape, std::vector<double>>> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = read_u32(is, path);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw std::runtime_error("checkpoint " + path.string() + ": truncated name");
        const std::uint32_t rank = read_u32(is, path);
        Shape shape(rank);
        for (auto& d : shape) d = read_u32(is, path);
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) {
            const std::uint32_t bits = read_u32(is, path);
            float f;
            std::memcpy(&f, &bits, 4);
            v = f;
        }
        entries.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
    }
    if (entries.size() != params.size()) {
        throw std::runtime_error("checkpoint " + path.string() + ": holds " + std::to_string(entries.size()) +
                                 " tensors, model expects " + std::to_string(params.size()));
    }
    for (auto [name, t] : params) {
        auto it = entries.find(name);
        if (it == entries.end()) throw std::runtime_error("checkpoint " + path.string() + ": missing " + name);
        if (it->second.first != t.shape()) {
            throw std::runtime_error("checkpoint " + path.string() + ": shape mismatch for " + name + " (" +
                                     shape_string(it->second.first) + " vs " + shape_string(t.shape()) + ")");
        }
        auto dst = t.mutable_values();
        std::copy(it->second.second.begin(), it->second.second.end(), dst.begin());
    }
}

}  // namespace regformer
