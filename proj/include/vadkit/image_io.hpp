#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vadkit/error.hpp"

namespace vadkit {

namespace fs = std::filesystem;

inline std::string indexed_name(const char* prefix, std::size_t index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%06zu%s", prefix, index, ext);
  return buf;
}

inline std::string frame_name(std::size_t index) { return indexed_name("frame_", index, ".png"); }

/// 8-bit RGB image (channels in R, G, B order).
inline cv::Mat read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

inline cv::Mat read_gray(const fs::path& path) {
  cv::Mat g = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw Error("cannot decode image " + path.string());
  return g;
}

inline void write_image(const fs::path& path, const cv::Mat& img, int jpeg_quality = 95) {
  std::vector<int> params;
  if (path.extension() == ".png") params = {cv::IMWRITE_PNG_COMPRESSION, 3};
  if (path.extension() == ".jpg") params = {cv::IMWRITE_JPEG_QUALITY, jpeg_quality};
  if (!cv::imwrite(path.string(), img, params)) throw Error("cannot write image " + path.string());
}

inline void write_rgb(const fs::path& path, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  write_image(path, bgr);
}

}  // namespace vadkit
