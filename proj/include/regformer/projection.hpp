// SPDX-License-Identifier: Apache-2.0
//
// Cylindrical projection of raw points into a coordinate-filled pseudo image,
// its validity mask, and per-token centroids.

#pragma once

#include "regformer/pointcloud.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace regformer {

/// Angular layout of a pseudo image. Columns use u_offset = width / 2.
struct ProjectionGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    double dtheta = 0.0;    // radians per column
    double dphi = 0.0;      // radians per row
    double v_offset = 0.0;  // row of zero elevation (may be fractional)

    double u_offset() const { return static_cast<double>(width) / 2.0; }
};

enum class GridPreset { kitti64x1792, desk16x64, custom };

GridPreset parse_grid_preset(const std::string& name);
std::string grid_preset_name(GridPreset preset);

/// Uniform rows over [fov_down, fov_up] degrees, the lowest elevation landing on row 0.
ProjectionGrid make_grid(std::size_t height, std::size_t width, double fov_down_deg, double fov_up_deg);

/// KITTI: 64 x 1792 over [-24.8, +2.0] deg. Desk: 16 x 64 over [-30, +10] deg.
/// `custom` returns `custom_grid` after validation.
ProjectionGrid build_default_grid(GridPreset preset, const ProjectionGrid& custom_grid = {});

/// Per-position validity in additive form: 0 for valid, kMaskValue for invalid.
struct ProjectionMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t stage = 0;
    std::vector<double> values;

    bool valid(std::size_t index) const { return values[index] == 0.0; }
    bool valid(std::size_t r, std::size_t c) const { return valid(r * cols + c); }
    std::size_t valid_count() const;
};

struct PseudoImage {
    ProjectionGrid grid;
    std::vector<double> xyz;  // height * width * 3, row-major; invalid pixels hold (0, 0, 0)

    std::size_t height() const { return grid.height; }
    std::size_t width() const { return grid.width; }
    Vec3 at(std::size_t r, std::size_t c) const;
};

struct ProjectionStats {
    std::size_t landed = 0;
    std::size_t dropped_zero_range = 0;
    std::size_t dropped_out_of_fov = 0;
    std::size_t occluded = 0;  // lost a pixel collision to a nearer point
};

struct Projection {
    PseudoImage image;
    ProjectionMask mask;
    std::vector<std::int64_t> pixel_index;  // per input point: row * width + col, or -1 when dropped
    ProjectionStats stats;
};

struct PixelCoord {
    std::int64_t row = -1;
    std::int64_t col = -1;
};

/// Pixel a point maps to; false for zero range or rows outside [0, height).
bool pixel_of(const ProjectionGrid& grid, const Vec3& p, PixelCoord& out);

/// Nearest-range point wins each pixel; ties resolved by coordinates, so the
/// result does not depend on input order.
Projection project_cylindrical(const PointCloud& pc, const ProjectionGrid& grid);

/// Output position is valid iff any covered input position is valid.
ProjectionMask downsample_mask(const ProjectionMask& mask, std::size_t factor_rows, std::size_t factor_cols);

struct TokenCentroids {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Vec3> xyz;                  // (0, 0, 0) for invalid tokens
    std::vector<std::size_t> pixel_counts;  // valid pixels covered; 0 means invalid

    bool valid(std::size_t index) const { return pixel_counts[index] > 0; }
};

TokenCentroids token_centroids(const PseudoImage& img, const ProjectionMask& mask, std::size_t patch_rows,
                               std::size_t patch_cols);

/// Valid-count-weighted merge of 2x2 token groups.
TokenCentroids merge_centroids(const TokenCentroids& in);

struct RoundTripStats {
    std::size_t valid_pixels = 0;
    std::size_t reprojected_ok = 0;
    std::size_t mask_mismatches = 0;
};

/// Recomputes (row, col) for every valid pixel from its stored coordinates and
/// checks that the mask agrees with the (0, 0, 0) test everywhere.
RoundTripStats check_round_trip(const PseudoImage& img, const ProjectionMask& mask);

/// Debug dump: i32 H, i32 W, float32 xyz triples row-major, then H*W mask bytes (1 = valid).
void write_projection_dump(const std::filesystem::path& path, const PseudoImage& img, const ProjectionMask& mask);

}  // namespace regformer
