#include "adapt3d/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "adapt3d/errors.hpp"

namespace adapt3d {
namespace {

void check_chw(const torch::Tensor& t, int64_t channels, const char* what) {
  if (t.dim() != 3 || t.size(0) != channels) {
    throw ShapeError(std::string(what) + " expects [" + std::to_string(channels) + ", H, W], got " +
                     c10::str(t.sizes()));
  }
}

void write_mat(const std::filesystem::path& path, const cv::Mat& mat) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw InputError("failed to write " + path.string());
}

cv::Mat to_mat(const torch::Tensor& chw, double scale, int depth) {
  // [C, H, W] -> contiguous [H, W, C] of the requested integer depth.
  auto hwc = (chw.detach().to(torch::kDouble).clamp(0.0, 1.0) * scale).round().permute({1, 2, 0}).contiguous();
  const int rows = static_cast<int>(hwc.size(0));
  const int cols = static_cast<int>(hwc.size(1));
  const int channels = static_cast<int>(hwc.size(2));
  if (depth == CV_8U) {
    auto bytes = hwc.to(torch::kUInt8).contiguous();
    return cv::Mat(rows, cols, CV_8UC(channels), bytes.data_ptr<uint8_t>()).clone();
  }
  auto words = hwc.to(torch::kInt32).contiguous();
  cv::Mat out(rows, cols, CV_16UC(channels));
  const auto* src = words.data_ptr<int32_t>();
  auto* dst = out.ptr<uint16_t>();
  for (int64_t i = 0; i < words.numel(); ++i) dst[i] = static_cast<uint16_t>(src[i]);
  return out;
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const torch::Tensor& rgb) {
  check_chw(rgb, 3, "write_png_rgb");
  cv::Mat bgr;
  cv::cvtColor(to_mat(rgb, 255.0, CV_8U), bgr, cv::COLOR_RGB2BGR);
  write_mat(path, bgr);
}

void write_png_gray16(const std::filesystem::path& path, const torch::Tensor& gray) {
  check_chw(gray, 1, "write_png_gray16");
  write_mat(path, to_mat(gray, 65535.0, CV_16U));
}

void write_png_gray8(const std::filesystem::path& path, const torch::Tensor& gray) {
  check_chw(gray, 1, "write_png_gray8");
  write_mat(path, to_mat(gray, 255.0, CV_8U));
}

torch::Tensor read_png_rgb(const std::filesystem::path& path, int64_t resolution) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw InputError("cannot read image " + path.string());
  if (resolution > 0 && (bgr.rows != resolution || bgr.cols != resolution)) {
    throw InputError("image " + path.string() + " is " + std::to_string(bgr.cols) + "x" + std::to_string(bgr.rows) +
                     ", expected " + std::to_string(resolution) + "x" + std::to_string(resolution));
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto hwc = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return hwc.permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
}

torch::Tensor tile_grid(const std::vector<std::vector<torch::Tensor>>& rows) {
  if (rows.empty() || rows.front().empty()) throw ShapeError("tile_grid needs at least one image");
  const auto shape = rows.front().front().sizes();
  std::vector<torch::Tensor> lines;
  for (const auto& row : rows) {
    if (row.size() != rows.front().size()) throw ShapeError("tile_grid rows differ in length");
    for (const auto& img : row) {
      if (img.sizes() != shape) throw ShapeError("tile_grid images differ in shape");
    }
    lines.push_back(torch::cat(row, 2));
  }
  return torch::cat(lines, 1);
}

}  // namespace adapt3d
