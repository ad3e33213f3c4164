#include "cyclegan3d/volume_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <torch/torch.h>

#include "cyclegan3d/error.hpp"

namespace fs = std::filesystem;

namespace cg3d {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// OpenCV keeps colour as BGR; volumes are RGB.
torch::Tensor mat_to_hwc(const cv::Mat& mat, const fs::path& source) {
  if (mat.depth() != CV_8U) throw DataError("only 8-bit slices are supported: " + source.string());
  int channels = mat.channels();
  if (channels != 1 && channels != 3) {
    throw DataError("slice must be grayscale or RGB, got " + std::to_string(channels) + " channels: " + source.string());
  }
  cv::Mat continuous = mat.isContinuous() ? mat : mat.clone();
  auto hwc = torch::from_blob(continuous.data, {continuous.rows, continuous.cols, channels}, torch::kUInt8).clone();
  if (channels == 3) hwc = hwc.flip({2}).contiguous();
  return hwc;
}

cv::Mat hwc_to_mat(const torch::Tensor& hwc_u8) {
  auto src = hwc_u8.size(2) == 3 ? hwc_u8.flip({2}).contiguous() : hwc_u8.contiguous();
  int type = src.size(2) == 3 ? CV_8UC3 : CV_8UC1;
  cv::Mat mat(static_cast<int>(src.size(0)), static_cast<int>(src.size(1)), type);
  std::memcpy(mat.data, src.data_ptr<uint8_t>(), static_cast<size_t>(src.numel()));
  return mat;
}

Volume stack_slices(const std::vector<torch::Tensor>& slices, const std::vector<std::string>& names,
                    std::optional<Domain> expected, const fs::path& path) {
  if (slices.empty()) throw DataError("no slices found in " + path.string());
  const auto& first = slices.front();
  for (size_t i = 1; i < slices.size(); ++i) {
    if (slices[i].sizes() != first.sizes()) {
      std::string msg = "slice shape mismatch at " + names[i] + ": expected " + std::to_string(first.size(0)) + "x" +
                        std::to_string(first.size(1)) + "x" + std::to_string(first.size(2)) + ", got " +
                        std::to_string(slices[i].size(0)) + "x" + std::to_string(slices[i].size(1)) + "x" +
                        std::to_string(slices[i].size(2));
      throw DataError(msg);
    }
  }
  Domain domain = domain_for_channels(first.size(2));
  if (expected && *expected != domain) {
    throw DataError(path.string() + " has " + std::to_string(first.size(2)) + " channel(s) but " +
                    std::string(to_string(*expected)) + " was expected");
  }
  return normalize(torch::stack(slices, 0), domain);
}

}  // namespace

bool is_tiff_path(const fs::path& path) {
  auto ext = lower(path.extension().string());
  return ext == ".tif" || ext == ".tiff";
}

Volume load_volume(const fs::path& path, std::optional<Domain> expected) {
  std::vector<torch::Tensor> slices;
  std::vector<std::string> names;
  if (is_tiff_path(path)) {
    if (!fs::is_regular_file(path)) throw DataError("no such TIFF file: " + path.string());
    std::vector<cv::Mat> pages;
    if (!cv::imreadmulti(path.string(), pages, cv::IMREAD_UNCHANGED)) {
      throw DataError("cannot decode TIFF: " + path.string());
    }
    for (size_t i = 0; i < pages.size(); ++i) {
      names.push_back(path.string() + "[page " + std::to_string(i) + "]");
      slices.push_back(mat_to_hwc(pages[i], names.back()));
    }
    return stack_slices(slices, names, expected, path);
  }

  if (!fs::is_directory(path)) throw DataError("volume path is neither a TIFF file nor a directory: " + path.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && lower(entry.path().extension().string()) == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (files.empty()) throw DataError("empty volume directory (no PNG slices): " + path.string());
  for (const auto& file : files) {
    cv::Mat mat = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw DataError("cannot decode PNG slice: " + file.string());
    names.push_back(file.string());
    slices.push_back(mat_to_hwc(mat, file));
  }
  return stack_slices(slices, names, expected, path);
}

void save_volume(const Volume& v, const fs::path& path) {
  auto bytes = denormalize(v);
  std::vector<cv::Mat> pages;
  pages.reserve(static_cast<size_t>(v.depth()));
  for (int64_t d = 0; d < v.depth(); ++d) pages.push_back(hwc_to_mat(bytes[d]));

  if (is_tiff_path(path)) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwritemulti(path.string(), pages)) throw DataError("cannot write TIFF: " + path.string());
    return;
  }
  fs::create_directories(path);
  for (size_t d = 0; d < pages.size(); ++d) {
    char name[32];
    std::snprintf(name, sizeof(name), "slice_%03zu.png", d);
    auto file = path / name;
    if (!cv::imwrite(file.string(), pages[d])) throw DataError("cannot write PNG slice: " + file.string());
  }
}

void save_projection(const ProjectionImage& image, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), hwc_to_mat(projection_to_u8(image)))) {
    throw DataError("cannot write projection: " + path.string());
  }
}

}  // namespace cg3d
