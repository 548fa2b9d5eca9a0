#pragma once

#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace adapt3d {

/// rgb [3, H, W] in [0, 1] -> 8-bit PNG.
void write_png_rgb(const std::filesystem::path& path, const torch::Tensor& rgb);

/// gray [1, H, W] in [0, 1] -> 16-bit grayscale PNG.
void write_png_gray16(const std::filesystem::path& path, const torch::Tensor& gray);

/// gray [1, H, W] in [0, 1] -> 8-bit grayscale PNG.
void write_png_gray8(const std::filesystem::path& path, const torch::Tensor& gray);

/// PNG -> rgb [3, H, W] float in [0, 1]. Throws InputError if the file is
/// unreadable or not `resolution` pixels square (when resolution > 0).
torch::Tensor read_png_rgb(const std::filesystem::path& path, int64_t resolution = 0);

/// Tiles equally sized [C, H, W] images: rows[i][j] lands at block (i, j).
torch::Tensor tile_grid(const std::vector<std::vector<torch::Tensor>>& rows);

}  // namespace adapt3d
