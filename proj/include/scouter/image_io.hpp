#pragma once

#include "scouter/dataset.hpp"

#include <filesystem>

namespace scouter {

/// 8-bit grayscale PGM (P5) with values v ↦ round(255·v).
void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& values);
/// P5 or P2, any maxval < 65536; values scaled to [0,1].
Eigen::MatrixXd read_pgm(const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);
/// Dispatch on extension (.pgm / .png).
Image read_image(const std::filesystem::path& path);
RegionMask read_mask_pgm(const std::filesystem::path& path);

}  // namespace scouter
