#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smallscale/errors.hpp"

namespace smallscale {

/// Row-major interleaved samples in [0,1], 1 or 3 channels.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  static ImageBuffer create(int width, int height, int channels, double fill = 0.0) {
    if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
      throw std::invalid_argument("ImageBuffer: bad dimensions or channel count");
    }
    ImageBuffer img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.data.assign(static_cast<std::size_t>(width) * height * channels, fill);
    return img;
  }

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

struct GaussianSpec {
  int kernel_size;
  double sigma;

  GaussianSpec(int kernel_size_, double sigma_) : kernel_size(kernel_size_), sigma(sigma_) {
    if (kernel_size < 3 || kernel_size % 2 == 0) {
      throw std::invalid_argument("GaussianSpec: kernel size must be odd and >= 3");
    }
    if (!(sigma > 0.0)) {
      throw std::invalid_argument("GaussianSpec: sigma must be positive");
    }
  }
};

/// 1-D kernel w[i] ~ exp(-(i-(k-1)/2)^2 / (2 sigma^2)), normalized to sum 1.
inline std::vector<double> gaussian_kernel(const GaussianSpec& g) {
  std::vector<double> w(static_cast<std::size_t>(g.kernel_size));
  const double center = (g.kernel_size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < g.kernel_size; ++i) {
    const double d = i - center;
    w[i] = std::exp(-(d * d) / (2.0 * g.sigma * g.sigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

namespace detail {

// Bilinear sampling with half-pixel-center alignment:
//   src = (dst + 0.5) / factor - 0.5, clamped to the border.
// Output samples are convex combinations of input samples.
inline ImageBuffer resize_bilinear_impl(const ImageBuffer& img, int out_w, int out_h,
                                        double factor_x, double factor_y) {
  ImageBuffer out = ImageBuffer::create(out_w, out_h, img.channels);
  const int c = img.channels;
  for (int dy = 0; dy < out_h; ++dy) {
    double sy = (dy + 0.5) / factor_y - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double ty = sy - y0;
    for (int dx = 0; dx < out_w; ++dx) {
      double sx = (dx + 0.5) / factor_x - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double tx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = img.at(x0, y0, ch) * (1.0 - tx) + img.at(x1, y0, ch) * tx;
        const double bottom = img.at(x0, y1, ch) * (1.0 - tx) + img.at(x1, y1, ch) * tx;
        out.at(dx, dy, ch) = top * (1.0 - ty) + bottom * ty;
      }
    }
  }
  return out;
}

}  // namespace detail

inline ImageBuffer resize_bilinear(const ImageBuffer& img, double factor) {
  if (!(factor > 0.0)) {
    throw std::invalid_argument("resize_bilinear: factor must be positive");
  }
  const int out_w = static_cast<int>(std::llround(img.width * factor));
  const int out_h = static_cast<int>(std::llround(img.height * factor));
  if (out_w < 1 || out_h < 1) {
    throw std::invalid_argument("resize_bilinear: factor produces zero-size output");
  }
  return detail::resize_bilinear_impl(img, out_w, out_h, factor, factor);
}

/// Resize to exact target dimensions (per-axis factors).
inline ImageBuffer resize_bilinear_to(const ImageBuffer& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) {
    throw std::invalid_argument("resize_bilinear_to: target dimensions must be positive");
  }
  return detail::resize_bilinear_impl(img, out_w, out_h,
                                      static_cast<double>(out_w) / img.width,
                                      static_cast<double>(out_h) / img.height);
}

/// Separable convolution with the normalized 1-D kernel; borders replicate.
inline ImageBuffer gaussian_blur(const ImageBuffer& img, const GaussianSpec& g) {
  const std::vector<double> kernel = gaussian_kernel(g);
  const int r = g.kernel_size / 2;
  const int c = img.channels;

  ImageBuffer tmp = ImageBuffer::create(img.width, img.height, c);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k) {
          const int xs = std::clamp(x + k, 0, img.width - 1);
          acc += kernel[k + r] * img.at(xs, y, ch);
        }
        tmp.at(x, y, ch) = acc;
      }
    }
  }
  ImageBuffer out = ImageBuffer::create(img.width, img.height, c);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k) {
          const int ys = std::clamp(y + k, 0, img.height - 1);
          acc += kernel[k + r] * tmp.at(x, ys, ch);
        }
        out.at(x, y, ch) = acc;
      }
    }
  }
  return out;
}

/// Downscale by 1/gamma then upscale back to the exact original dimensions.
inline ImageBuffer down_up(const ImageBuffer& img, double gamma) {
  if (!(gamma > 1.0)) {
    throw std::invalid_argument("down_up: gamma must be > 1");
  }
  if (img.width < gamma || img.height < gamma) {
    throw std::invalid_argument("down_up: image smaller than gamma pixels on a side");
  }
  const ImageBuffer small = resize_bilinear(img, 1.0 / gamma);
  return resize_bilinear_to(small, img.width, img.height);
}

namespace detail {

inline int read_pnm_int(std::istream& in, const std::string& context) {
  int ch = in.get();
  while (ch != EOF && (std::isspace(ch) || ch == '#')) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw ParseError(context + ": malformed header");
  long value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    if (value > 1 << 30) throw ParseError(context + ": header value out of range");
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return static_cast<int>(value);
}

struct PnmHeader {
  int width;
  int height;
  int channels;
  std::streamoff payload_offset;
};

inline PnmHeader read_pnm_header(std::istream& in, const std::string& context) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw ParseError(context + ": unsupported magic number (want P5 or P6)");
  }
  PnmHeader h;
  h.channels = magic[1] == '6' ? 3 : 1;
  h.width = read_pnm_int(in, context);
  h.height = read_pnm_int(in, context);
  const int maxval = read_pnm_int(in, context);
  if (h.width < 1 || h.height < 1) throw ParseError(context + ": bad dimensions");
  if (maxval != 255) throw ParseError(context + ": only maxval 255 supported");
  in.get();  // the single whitespace byte before the payload
  h.payload_offset = in.tellg();
  return h;
}

}  // namespace detail

/// Reads binary PPM (P6) or PGM (P5). 8-bit samples map linearly to [0,1].
inline ImageBuffer load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto header = detail::read_pnm_header(in, path.string());
  ImageBuffer img = ImageBuffer::create(header.width, header.height, header.channels);
  const std::size_t n = img.data.size();
  std::vector<unsigned char> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw ParseError(path.string() + ": truncated payload");
  }
  for (std::size_t i = 0; i < n; ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

/// Header dimensions only; avoids reading the payload.
inline std::array<int, 3> read_image_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto h = detail::read_pnm_header(in, path.string());
  return {h.width, h.height, h.channels};
}

inline void save_image(const ImageBuffer& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (img.channels == 3 ? "P6" : "P5") << '\n'
      << img.width << ' ' << img.height << '\n'
      << "255\n";
  std::vector<unsigned char> bytes(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::llround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace smallscale
