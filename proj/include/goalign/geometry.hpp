#pragma once

#include <algorithm>
#include <cstdint>

namespace goalign {

// Integer pixel box, half-open on neither side: [x1,x2) x [y1,y2) in pixel
// units with x2/y2 exclusive when rasterizing.
struct BBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  long long area() const {
    return static_cast<long long>(std::max(0, width())) * std::max(0, height());
  }
  bool degenerate() const { return x2 <= x1 || y2 <= y1; }

  friend bool operator==(const BBox& a, const BBox& b) {
    return a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2;
  }
};

inline long long intersection_area(const BBox& a, const BBox& b) {
  int ix1 = std::max(a.x1, b.x1);
  int iy1 = std::max(a.y1, b.y1);
  int ix2 = std::min(a.x2, b.x2);
  int iy2 = std::min(a.y2, b.y2);
  if (ix2 <= ix1 || iy2 <= iy1) return 0;
  return static_cast<long long>(ix2 - ix1) * (iy2 - iy1);
}

inline double iou(const BBox& a, const BBox& b) {
  long long inter = intersection_area(a, b);
  long long uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline BBox clip_box(const BBox& b, int width, int height) {
  BBox r;
  r.x1 = std::clamp(b.x1, 0, width);
  r.y1 = std::clamp(b.y1, 0, height);
  r.x2 = std::clamp(b.x2, 0, width);
  r.y2 = std::clamp(b.y2, 0, height);
  return r;
}

}  // namespace goalign
