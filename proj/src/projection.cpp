// SPDX-License-Identifier: Apache-2.0

#include "regformer/projection.hpp"
#include "regformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <tuple>

namespace regformer {

GridPreset parse_grid_preset(const std::string& name) {
    if (name == "kitti64x1792") return GridPreset::kitti64x1792;
    if (name == "desk16x64") return GridPreset::desk16x64;
    if (name == "custom") return GridPreset::custom;
    throw std::invalid_argument("unknown grid preset '" + name + "' (expected kitti64x1792, desk16x64 or custom)");
}

std::string grid_preset_name(GridPreset preset) {
    switch (preset) {
        case GridPreset::kitti64x1792: return "kitti64x1792";
        case GridPreset::desk16x64: return "desk16x64";
        case GridPreset::custom: return "custom";
    }
    return "custom";
}

namespace {

void validate(const ProjectionGrid& g) {
    if (g.height == 0 || g.width == 0) {
        throw std::invalid_argument("projection grid must have positive height and width, got " +
                                    std::to_string(g.height) + "x" + std::to_string(g.width));
    }
    if (!(g.dtheta > 0.0) || !(g.dphi > 0.0)) {
        throw std::invalid_argument("projection grid angular resolutions must be positive");
    }
}

}  // namespace

ProjectionGrid make_grid(std::size_t height, std::size_t width, double fov_down_deg, double fov_up_deg) {
    if (height == 0 || width == 0) {
        throw std::invalid_argument("projection grid must have positive height and width, got " +
                                    std::to_string(height) + "x" + std::to_string(width));
    }
    if (!(fov_up_deg > fov_down_deg)) throw std::invalid_argument("vertical field of view is empty");
    constexpr double kDeg = std::numbers::pi / 180.0;
    ProjectionGrid g;
    g.height = height;
    g.width = width;
    g.dtheta = 2.0 * std::numbers::pi / static_cast<double>(width);
    const double span = (fov_up_deg - fov_down_deg) * kDeg;
    g.dphi = height > 1 ? span / static_cast<double>(height - 1) : span;
    g.v_offset = -fov_down_deg * kDeg / g.dphi;
    return g;
}

ProjectionGrid build_default_grid(GridPreset preset, const ProjectionGrid& custom_grid) {
    switch (preset) {
        case GridPreset::kitti64x1792: return make_grid(64, 1792, -24.8, 2.0);
        case GridPreset::desk16x64: return make_grid(16, 64, -30.0, 10.0);
        case GridPreset::custom: validate(custom_grid); return custom_grid;
    }
    throw std::invalid_argument("unknown grid preset");
}

std::size_t ProjectionMask::valid_count() const {
    std::size_t n = 0;
    for (double v : values) n += v == 0.0 ? 1 : 0;
    return n;
}

Vec3 PseudoImage::at(std::size_t r, std::size_t c) const {
    const std::size_t i = (r * grid.width + c) * 3;
    return {xyz[i], xyz[i + 1], xyz[i + 2]};
}

bool pixel_of(const ProjectionGrid& grid, const Vec3& p, PixelCoord& out) {
    const double range = norm(p);
    if (range == 0.0) return false;
    const auto w = static_cast<std::int64_t>(grid.width);
    // Round half up after applying the offsets.
    std::int64_t u = static_cast<std::int64_t>(std::floor(std::atan2(p[1], p[0]) / grid.dtheta + grid.u_offset() + 0.5));
    u = ((u % w) + w) % w;
    const double elevation = std::asin(std::clamp(p[2] / range, -1.0, 1.0));
    const auto v = static_cast<std::int64_t>(std::floor(elevation / grid.dphi + grid.v_offset + 0.5));
    if (v < 0 || v >= static_cast<std::int64_t>(grid.height)) return false;
    out.row = v;
    out.col = u;
    return true;
}

Projection project_cylindrical(const PointCloud& pc, const ProjectionGrid& grid) {
    validate(grid);
    const std::size_t pixels = grid.height * grid.width;
    Projection out;
    out.image.grid = grid;
    out.image.xyz.assign(pixels * 3, 0.0);
    out.mask.rows = grid.height;
    out.mask.cols = grid.width;
    out.mask.values.assign(pixels, kMaskValue);
    out.pixel_index.assign(pc.size(), -1);

    std::vector<std::int64_t> winner(pixels, -1);
    auto key = [&](std::size_t i) {
        const Vec3& p = pc.points[i];
        return std::make_tuple(norm(p), p[0], p[1], p[2]);
    };
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const Vec3& p = pc.points[i];
        if (norm(p) == 0.0) {
            ++out.stats.dropped_zero_range;
            continue;
        }
        PixelCoord px;
        if (!pixel_of(grid, p, px)) {
            ++out.stats.dropped_out_of_fov;
            continue;
        }
        const auto pix = static_cast<std::size_t>(px.row) * grid.width + static_cast<std::size_t>(px.col);
        out.pixel_index[i] = static_cast<std::int64_t>(pix);
        std::int64_t& w = winner[pix];
        if (w < 0) {
            w = static_cast<std::int64_t>(i);
        } else {
            ++out.stats.occluded;
            if (key(i) < key(static_cast<std::size_t>(w))) w = static_cast<std::int64_t>(i);
        }
    }
    for (std::size_t pix = 0; pix < pixels; ++pix) {
        if (winner[pix] < 0) continue;
        const Vec3& p = pc.points[static_cast<std::size_t>(winner[pix])];
        std::copy(p.begin(), p.end(), out.image.xyz.begin() + static_cast<std::ptrdiff_t>(pix * 3));
        out.mask.values[pix] = 0.0;
        ++out.stats.landed;
    }
    return out;
}

ProjectionMask downsample_mask(const ProjectionMask& mask, std::size_t factor_rows, std::size_t factor_cols) {
    if (factor_rows == 0 || factor_cols == 0 || mask.rows % factor_rows != 0 || mask.cols % factor_cols != 0) {
        throw std::invalid_argument("mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                                    " is not divisible by factors " + std::to_string(factor_rows) + "x" +
                                    std::to_string(factor_cols));
    }
    ProjectionMask out;
    out.rows = mask.rows / factor_rows;
    out.cols = mask.cols / factor_cols;
    out.stage = mask.stage + 1;
    out.values.assign(out.rows * out.cols, kMaskValue);
    for (std::size_t r = 0; r < mask.rows; ++r) {
        for (std::size_t c = 0; c < mask.cols; ++c) {
            if (mask.valid(r, c)) out.values[(r / factor_rows) * out.cols + c / factor_cols] = 0.0;
        }
    }
    return out;
}

TokenCentroids token_centroids(const PseudoImage& img, const ProjectionMask& mask, std::size_t patch_rows,
                               std::size_t patch_cols) {
    if (patch_rows == 0 || patch_cols == 0 || img.height() % patch_rows != 0 || img.width() % patch_cols != 0) {
        throw std::invalid_argument("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                    " is not divisible by patch " + std::to_string(patch_rows) + "x" +
                                    std::to_string(patch_cols));
    }
    TokenCentroids out;
    out.rows = img.height() / patch_rows;
    out.cols = img.width() / patch_cols;
    out.xyz.assign(out.rows * out.cols, Vec3{0.0, 0.0, 0.0});
    out.pixel_counts.assign(out.rows * out.cols, 0);
    for (std::size_t r = 0; r < img.height(); ++r) {
        for (std::size_t c = 0; c < img.width(); ++c) {
            if (!mask.valid(r, c)) continue;
            const std::size_t t = (r / patch_rows) * out.cols + c / patch_cols;
            out.xyz[t] = out.xyz[t] + img.at(r, c);
            ++out.pixel_counts[t];
        }
    }
    for (std::size_t t = 0; t < out.xyz.size(); ++t) {
        if (out.pixel_counts[t] > 0) out.xyz[t] = (1.0 / static_cast<double>(out.pixel_counts[t])) * out.xyz[t];
    }
    return out;
}

TokenCentroids merge_centroids(const TokenCentroids& in) {
    if (in.rows % 2 != 0 || in.cols % 2 != 0) {
        throw std::invalid_argument("cannot merge a " + std::to_string(in.rows) + "x" + std::to_string(in.cols) +
                                    " token grid (dimensions must be even)");
    }
    TokenCentroids out;
    out.rows = in.rows / 2;
    out.cols = in.cols / 2;
    out.xyz.assign(out.rows * out.cols, Vec3{0.0, 0.0, 0.0});
    out.pixel_counts.assign(out.rows * out.cols, 0);
    for (std::size_t r = 0; r < in.rows; ++r) {
        for (std::size_t c = 0; c < in.cols; ++c) {
            const std::size_t s = r * in.cols + c;
            const std::size_t t = (r / 2) * out.cols + c / 2;
            out.xyz[t] = out.xyz[t] + static_cast<double>(in.pixel_counts[s]) * in.xyz[s];
            out.pixel_counts[t] += in.pixel_counts[s];
        }
    }
    for (std::size_t t = 0; t < out.xyz.size(); ++t) {
        if (out.pixel_counts[t] > 0) out.xyz[t] = (1.0 / static_cast<double>(out.pixel_counts[t])) * out.xyz[t];
    }
    return out;
}

RoundTripStats check_round_trip(const PseudoImage& img, const ProjectionMask& mask) {
    RoundTripStats s;
    for (std::size_t r = 0; r < img.height(); ++r) {
        for (std::size_t c = 0; c < img.width(); ++c) {
            const Vec3 p = img.at(r, c);
            const bool zero = p[0] == 0.0 && p[1] == 0.0 && p[2] == 0.0;
            if (mask.valid(r, c) == zero) ++s.mask_mismatches;
            if (!mask.valid(r, c)) continue;
            ++s.valid_pixels;
            PixelCoord px;
            if (pixel_of(img.grid, p, px) && px.row == static_cast<std::int64_t>(r) &&
                px.col == static_cast<std::int64_t>(c)) {
                ++s.reprojected_ok;
            }
        }
    }
    return s;
}

void write_projection_dump(const std::filesystem::path& path, const PseudoImage& img, const ProjectionMask& mask) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    auto put_u32 = [&](std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(static_cast<std::uint32_t>(static_cast<std::int32_t>(img.height())));
    put_u32(static_cast<std::uint32_t>(static_cast<std::int32_t>(img.width())));
    for (double v : img.xyz) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(bits);
    }
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
        const char b = mask.valid(i) ? 1 : 0;
        os.put(b);
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace regformer
