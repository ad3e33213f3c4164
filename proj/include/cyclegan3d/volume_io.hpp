#pragma once

#include <filesystem>
#include <optional>

#include "cyclegan3d/volume.hpp"

namespace cg3d {

/// Reads a volume from a multi-page TIFF (`.tif`/`.tiff`) or from a directory
/// of PNG slices stacked in lexicographic filename order.
///
/// Only 8-bit grayscale or RGB slices are accepted. When `expected` is set the
/// channel count must match it; otherwise the domain follows the channel count.
Volume load_volume(const std::filesystem::path& path, std::optional<Domain> expected = std::nullopt);

/// Writes `slice_000.png`, `slice_001.png`, ... into `path` (created if
/// needed), or a multi-page TIFF when `path` has a TIFF extension.
void save_volume(const Volume& v, const std::filesystem::path& path);

/// Writes an 8-bit PNG of the projection.
void save_projection(const ProjectionImage& image, const std::filesystem::path& path);

bool is_tiff_path(const std::filesystem::path& path);

}  // namespace cg3d
