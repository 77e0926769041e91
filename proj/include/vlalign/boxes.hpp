#pragma once

#include <algorithm>
#include <array>

#include <json.hpp>

#include "vlalign/common.hpp"

namespace vlalign {

// Axis-aligned box, normalized coordinates. x_min < x_max and y_min < y_max.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  bool valid() const { return x_min < x_max && y_min < y_max; }
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  // position features used by the object embedding
  std::array<double, 7> features() const {
    return {x_min, y_min, x_max, y_max, width(), height(), area()};
  }
};

inline double iou(const Box& a, const Box& b) {
  check(a.valid(), "iou: degenerate box (first argument)");
  check(b.valid(), "iou: degenerate box (second argument)");
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

inline void to_json(nlohmann::json& j, const Box& b) {
  j = nlohmann::json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

inline void from_json(const nlohmann::json& j, Box& b) {
  check(j.is_array() && j.size() == 4, "Box: expected a 4-element array");
  b.x_min = j[0].get<double>();
  b.y_min = j[1].get<double>();
  b.x_max = j[2].get<double>();
  b.y_max = j[3].get<double>();
}

}  // namespace vlalign
