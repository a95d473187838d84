#include "goalign/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace goalign::img {

void write_ppm(const Image& im, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path.string());
  f << "P6\n" << im.w << " " << im.h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(im.w) * 3);
  for (int y = 0; y < im.h; ++y) {
    for (int x = 0; x < im.w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(im.at(y, x, c), 0.0, 1.0);
        row[static_cast<size_t>(x) * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 ppm: " + path.string());
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_ppm: unsupported header in " + path.string());
  f.get();  // single whitespace after header
  Image im(h, w);
  std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("read_ppm: truncated file " + path.string());
  for (size_t i = 0; i < buf.size(); ++i) im.px[i] = buf[i] / 255.0;
  return im;
}

Image subarray(const Image& im, const BBox& box) {
  if (box.degenerate() || box.x1 < 0 || box.y1 < 0 || box.x2 > im.w || box.y2 > im.h)
    throw std::runtime_error("subarray: box out of bounds or degenerate");
  Image out(box.height(), box.width());
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = im.at(box.y1 + y, box.x1 + x, c);
  return out;
}

Image resize_bilinear(const Image& im, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::runtime_error("resize_bilinear: bad output size");
  if (out_h == im.h && out_w == im.w) return im;
  Image out(out_h, out_w);
  double sy = static_cast<double>(im.h) / out_h;
  double sx = static_cast<double>(im.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(im.h - 1));
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, im.h - 1);
    double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(im.w - 1));
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, im.w - 1);
      double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        double top = im.at(y0, x0, c) * (1.0 - wx) + im.at(y0, x1, c) * wx;
        double bot = im.at(y1, x0, c) * (1.0 - wx) + im.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace goalign::img
