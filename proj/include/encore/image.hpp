#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "encore/tensor.hpp"

namespace encore {

// 8-bit RGB image as decoded from disk
struct RawImage {
  i64 height = 0;
  i64 width = 0;
  std::vector<std::uint8_t> rgb;  // HWC, row-major

  bool valid() const { return height > 0 && width > 0; }
};

inline RawImage load_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot decode image: " + path);
  RawImage img;
  img.height = bgr.rows;
  img.width = bgr.cols;
  img.rgb.resize(std::size_t(img.height * img.width * 3));
  for (i64 r = 0; r < img.height; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(int(r));
    for (i64 c = 0; c < img.width; ++c) {
      const auto& px = row[c];
      std::uint8_t* dst = img.rgb.data() + (r * img.width + c) * 3;
      dst[0] = px[2];
      dst[1] = px[1];
      dst[2] = px[0];
    }
  }
  return img;
}

inline bool try_load_image(const std::string& path, RawImage& out) {
  try {
    out = load_image(path);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

// (3,H,W) float in [0,1]
template <class T>
Tensor<T> to_tensor(const RawImage& img) {
  Tensor<T> t = Tensor<T>::uninitialized(Shape{3, img.height, img.width});
  const i64 plane = img.height * img.width;
  for (i64 p = 0; p < plane; ++p) {
    const std::uint8_t* src = img.rgb.data() + p * 3;
    t[p] = T(src[0]) / T(255);
    t[plane + p] = T(src[1]) / T(255);
    t[2 * plane + p] = T(src[2]) / T(255);
  }
  return t;
}

template <class T>
RawImage from_tensor(const Tensor<T>& t) {
  if (t.ndim() != 3 || t.dim(0) != 3)
    throw std::invalid_argument("from_tensor: expected (3,H,W)");
  RawImage img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  const i64 plane = img.height * img.width;
  img.rgb.resize(std::size_t(plane * 3));
  auto quantize = [](T v) {
    const T c = std::min(T(1), std::max(T(0), v));
    return std::uint8_t(std::lround(double(c) * 255.0));
  };
  for (i64 p = 0; p < plane; ++p) {
    std::uint8_t* dst = img.rgb.data() + p * 3;
    dst[0] = quantize(t[p]);
    dst[1] = quantize(t[plane + p]);
    dst[2] = quantize(t[2 * plane + p]);
  }
  return img;
}

inline void save_png(const std::string& path, const RawImage& img) {
  cv::Mat bgr(int(img.height), int(img.width), CV_8UC3);
  for (i64 r = 0; r < img.height; ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(int(r));
    for (i64 c = 0; c < img.width; ++c) {
      const std::uint8_t* src = img.rgb.data() + (r * img.width + c) * 3;
      row[c] = cv::Vec3b(src[2], src[1], src[0]);
    }
  }
  if (!cv::imwrite(path, bgr))
    throw std::runtime_error("cannot write image: " + path);
}

template <class T>
void save_png(const std::string& path, const Tensor<T>& rgb01) {
  save_png(path, from_tensor(rgb01));
}

// single-channel [0,1] -> 8-bit grayscale PNG
template <class T>
void save_gray_png(const std::string& path, const Tensor<T>& gray01) {
  if (gray01.ndim() != 2)
    throw std::invalid_argument("save_gray_png: expected (H,W)");
  cv::Mat m(int(gray01.dim(0)), int(gray01.dim(1)), CV_8UC1);
  for (i64 r = 0; r < gray01.dim(0); ++r)
    for (i64 c = 0; c < gray01.dim(1); ++c) {
      const T v = std::min(T(1), std::max(T(0), gray01[r * gray01.dim(1) + c]));
      m.at<std::uint8_t>(int(r), int(c)) =
          std::uint8_t(std::lround(double(v) * 255.0));
    }
  if (!cv::imwrite(path, m))
    throw std::runtime_error("cannot write image: " + path);
}

// Bilinear resize for upscaling, area averaging for downscaling (the usual
// antialiased choice). Channel-wise over (C,H,W).
template <class T>
Tensor<T> resize(const Tensor<T>& src, i64 out_h, i64 out_w) {
  if (src.ndim() != 3) throw std::invalid_argument("resize: expected CHW");
  const i64 C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: bad size");
  if (out_h == H && out_w == W) return src.clone();
  Tensor<T> out = Tensor<T>::uninitialized(Shape{C, out_h, out_w});
  const bool down_h = out_h < H, down_w = out_w < W;
  const double sy = double(H) / double(out_h);
  const double sx = double(W) / double(out_w);
#pragma omp parallel for schedule(static)
  for (i64 c = 0; c < C; ++c) {
    const T* in = src.data() + c * H * W;
    T* o = out.data() + c * out_h * out_w;
    for (i64 r = 0; r < out_h; ++r) {
      for (i64 q = 0; q < out_w; ++q) {
        double v;
        if (down_h || down_w) {
          // box filter over the source footprint
          const double y0 = r * sy, y1 = (r + 1) * sy;
          const double x0 = q * sx, x1 = (q + 1) * sx;
          const i64 iy0 = i64(y0), iy1 = std::min(H, i64(std::ceil(y1)));
          const i64 ix0 = i64(x0), ix1 = std::min(W, i64(std::ceil(x1)));
          double acc = 0, wsum = 0;
          for (i64 y = iy0; y < iy1; ++y) {
            const double wy =
                std::min<double>(y + 1, y1) - std::max<double>(y, y0);
            for (i64 x = ix0; x < ix1; ++x) {
              const double wx =
                  std::min<double>(x + 1, x1) - std::max<double>(x, x0);
              acc += wy * wx * double(in[y * W + x]);
              wsum += wy * wx;
            }
          }
          v = acc / wsum;
        } else {
          // bilinear, half-pixel centers
          const double fy = (r + 0.5) * sy - 0.5;
          const double fx = (q + 0.5) * sx - 0.5;
          const i64 y0 = i64(std::floor(fy)), x0 = i64(std::floor(fx));
          const double ay = fy - double(y0), ax = fx - double(x0);
          auto at = [&](i64 y, i64 x) {
            y = std::clamp<i64>(y, 0, H - 1);
            x = std::clamp<i64>(x, 0, W - 1);
            return double(in[y * W + x]);
          };
          v = (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
              ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
        }
        o[r * out_w + q] = T(v);
      }
    }
  }
  return out;
}

// rescales so the smaller side equals min_side, preserving aspect ratio
template <class T>
Tensor<T> resize_min_side(const Tensor<T>& src, i64 min_side) {
  const i64 H = src.dim(1), W = src.dim(2);
  if (std::min(H, W) == min_side) return src.clone();
  i64 out_h, out_w;
  if (H <= W) {
    out_h = min_side;
    out_w = std::max<i64>(1, i64(std::lround(double(W) * double(min_side) / double(H))));
  } else {
    out_w = min_side;
    out_h = std::max<i64>(1, i64(std::lround(double(H) * double(min_side) / double(W))));
  }
  return resize(src, out_h, out_w);
}

template <class T>
Tensor<T> crop(const Tensor<T>& src, i64 r0, i64 c0, i64 h, i64 w) {
  const i64 C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (r0 < 0 || c0 < 0 || r0 + h > H || c0 + w > W)
    throw std::invalid_argument("crop: window out of bounds");
  Tensor<T> out = Tensor<T>::uninitialized(Shape{C, h, w});
  for (i64 c = 0; c < C; ++c)
    for (i64 r = 0; r < h; ++r)
      std::memcpy(out.data() + (c * h + r) * w,
                  src.data() + (c * H + r0 + r) * W + c0,
                  std::size_t(w) * sizeof(T));
  return out;
}

template <class T>
Tensor<T> center_crop(const Tensor<T>& src, i64 h, i64 w) {
  return crop(src, (src.dim(1) - h) / 2, (src.dim(2) - w) / 2, h, w);
}

}  // namespace encore
