#include "nwm/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "nwm/error.hpp"

namespace nwm {

namespace {

namespace fs = std::filesystem;

cv::Mat decode(const fs::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode " + path.string() + ": " + e.what());
  }
  if (bgr.empty()) throw IoError("cannot decode image: " + path.string());
  return bgr;
}

Tensor to_tensor(const cv::Mat& bgr) {
  Tensor t(Shape{1, bgr.rows, bgr.cols, 3});
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) t.at(0, y, x, c) = row[x][2 - c] / 255.0f;
    }
  }
  return t;
}

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

Tensor load_image(const fs::path& path) { return to_tensor(decode(path)); }

Tensor load_image_fitted(const fs::path& path, int height, int width) {
  cv::Mat img = decode(path);
  if (img.rows == height && img.cols == width) return to_tensor(img);

  // Largest centered window with the target aspect ratio.
  int crop_w = img.cols, crop_h = img.rows;
  if (static_cast<long long>(img.cols) * height > static_cast<long long>(img.rows) * width) {
    crop_w = static_cast<int>(std::lround(static_cast<double>(img.rows) * width / height));
  } else {
    crop_h = static_cast<int>(std::lround(static_cast<double>(img.cols) * height / width));
  }
  crop_w = std::clamp(crop_w, 1, img.cols);
  crop_h = std::clamp(crop_h, 1, img.rows);
  const cv::Rect roi((img.cols - crop_w) / 2, (img.rows - crop_h) / 2, crop_w, crop_h);
  cv::Mat resized;
  cv::resize(img(roi), resized, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return to_tensor(resized);
}

void save_png(const Tensor& image, const fs::path& path) {
  const Shape s = image.shape();
  if (s.n() != 1 || s.c() != 3) {
    throw ShapeError("save_png expects a (1, h, w, 3) tensor, got " + to_string(s));
  }
  cv::Mat bgr(s.h(), s.w(), CV_8UC3);
  for (int y = 0; y < s.h(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < s.w(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(0, y, x, c), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

std::vector<fs::path> list_images(const fs::path& path) {
  std::error_code ec;
  if (fs::is_regular_file(path, ec)) return {path};
  if (!fs::is_directory(path, ec)) throw IoError("no such file or directory: " + path.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && has_image_extension(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace nwm
