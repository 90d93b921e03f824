#pragma once

// Bounding-box representations used across the toolkit.
//
// PixelBox is corner form in image pixels (origin top-left, continuous
// coordinates). NormalizedBox is center form as fractions of the image
// size, the layout the detector's label files use. Area is computed as
// (x_max - x_min) * (y_max - y_min) with no +1 pixel correction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include "camtrap/detail/text.hpp"
#include "camtrap/error.hpp"

namespace camtrap {

// Slack allowed when checking that a NormalizedBox stays inside the unit square.
inline constexpr double kNormalizedTolerance = 1e-9;

// Slack accepted when reading 6-decimal text formats; values inside it are
// clipped back into the unit square.
inline constexpr double kTextTolerance = 1e-6;

struct ImageSize {
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct PixelBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }

  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

struct NormalizedBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

inline std::string to_string(const PixelBox& b) {
  return "(" + std::to_string(b.x_min) + ", " + std::to_string(b.y_min) + ", " +
         std::to_string(b.x_max) + ", " + std::to_string(b.y_max) + ")";
}

inline std::string to_string(const NormalizedBox& b) {
  return "(" + std::to_string(b.cx) + ", " + std::to_string(b.cy) + ", " +
         std::to_string(b.w) + ", " + std::to_string(b.h) + ")";
}

inline void validate(const ImageSize& size) {
  if (size.width < 1 || size.height < 1) {
    throw InvalidInput("image size must be positive, got " + std::to_string(size.width) + "x" +
                       std::to_string(size.height));
  }
}

inline void validate(const PixelBox& b) {
  const bool finite = std::isfinite(b.x_min) && std::isfinite(b.y_min) &&
                      std::isfinite(b.x_max) && std::isfinite(b.y_max);
  if (!finite || b.x_min < 0.0 || b.y_min < 0.0) {
    throw InvalidInput("pixel box has negative or non-finite coordinates " + to_string(b));
  }
  if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) {
    throw InvalidInput("pixel box has non-positive area " + to_string(b));
  }
}

inline void validate(const NormalizedBox& b, double tolerance = kNormalizedTolerance) {
  const bool finite = std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) &&
                      std::isfinite(b.h);
  if (!finite || !(b.w > 0.0) || !(b.h > 0.0) || b.w > 1.0 || b.h > 1.0) {
    throw InvalidInput("normalized box has invalid extent " + to_string(b));
  }
  if (b.cx - b.w / 2 < -tolerance || b.cx + b.w / 2 > 1.0 + tolerance ||
      b.cy - b.h / 2 < -tolerance || b.cy + b.h / 2 > 1.0 + tolerance) {
    throw InvalidInput("normalized box leaves the unit square " + to_string(b));
  }
}

inline bool is_valid(const PixelBox& b) {
  try {
    validate(b);
    return true;
  } catch (const InvalidInput&) {
    return false;
  }
}

// Intersection over union of two valid boxes.
inline double iou(const PixelBox& a, const PixelBox& b) {
  validate(a);
  validate(b);
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline NormalizedBox to_normalized(const PixelBox& box, const ImageSize& size) {
  validate(size);
  validate(box);
  if (box.x_max > size.width || box.y_max > size.height) {
    throw InvalidInput("pixel box " + to_string(box) + " exceeds image bounds " +
                       std::to_string(size.width) + "x" + std::to_string(size.height));
  }
  const double W = size.width;
  const double H = size.height;
  NormalizedBox out{(box.x_min + box.x_max) / (2.0 * W), (box.y_min + box.y_max) / (2.0 * H),
                    (box.x_max - box.x_min) / W, (box.y_max - box.y_min) / H};
  out.w = std::min(out.w, 1.0);
  out.h = std::min(out.h, 1.0);
  return out;
}

inline PixelBox to_pixel(const NormalizedBox& box, const ImageSize& size) {
  validate(size);
  validate(box);
  const double W = size.width;
  const double H = size.height;
  // Rounding in the center form can leave a corner a hair outside the image.
  PixelBox out{std::clamp((box.cx - box.w / 2) * W, 0.0, W),
               std::clamp((box.cy - box.h / 2) * H, 0.0, H),
               std::clamp((box.cx + box.w / 2) * W, 0.0, W),
               std::clamp((box.cy + box.h / 2) * H, 0.0, H)};
  validate(out);
  return out;
}

// IoU of two normalized boxes. IoU is invariant under per-axis scaling, so
// the unit square stands in for the image.
inline double iou(const NormalizedBox& a, const NormalizedBox& b) {
  return iou(to_pixel(a, ImageSize{1, 1}), to_pixel(b, ImageSize{1, 1}));
}

// Clips a box read from a rounded text format back into the unit square.
// Boxes outside by more than `tolerance` are rejected.
inline NormalizedBox clip_to_unit(const NormalizedBox& b, double tolerance = kTextTolerance) {
  validate(b, tolerance);
  const double x0 = std::max(0.0, b.cx - b.w / 2);
  const double x1 = std::min(1.0, b.cx + b.w / 2);
  const double y0 = std::max(0.0, b.cy - b.h / 2);
  const double y1 = std::min(1.0, b.cy + b.h / 2);
  if (x0 == b.cx - b.w / 2 && x1 == b.cx + b.w / 2 && y0 == b.cy - b.h / 2 &&
      y1 == b.cy + b.h / 2) {
    return b;
  }
  NormalizedBox out{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
  validate(out);
  return out;
}

// One object in a detector label file.
struct LabelLine {
  std::size_t class_index = 0;
  NormalizedBox box;

  friend bool operator==(const LabelLine&, const LabelLine&) = default;
};

// "<class_index> <cx> <cy> <w> <h>" with six decimals, no trailing newline.
inline std::string format_label_line(const LabelLine& line) {
  validate(line.box);
  std::string out = std::to_string(line.class_index);
  for (double v : {line.box.cx, line.box.cy, line.box.w, line.box.h}) {
    out += ' ';
    out += detail::format_fixed(v, 6);
  }
  return out;
}

inline LabelLine parse_label_line(std::string_view text) {
  const auto fields = detail::split(detail::trim(text), ' ');
  if (fields.size() != 5) {
    throw InvalidInput("label line needs 5 fields: '" + std::string(text) + "'");
  }
  const auto cls = detail::parse_int(fields[0]);
  if (!cls || *cls < 0) {
    throw InvalidInput("bad class index in label line: '" + std::string(text) + "'");
  }
  double v[4];
  for (int i = 0; i < 4; ++i) {
    const auto d = detail::parse_double(fields[i + 1]);
    if (!d) throw InvalidInput("bad number in label line: '" + std::string(text) + "'");
    v[i] = *d;
  }
  return LabelLine{static_cast<std::size_t>(*cls), clip_to_unit(NormalizedBox{v[0], v[1], v[2], v[3]})};
}

}  // namespace camtrap
