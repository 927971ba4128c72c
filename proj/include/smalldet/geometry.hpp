#pragma once

#include <stdexcept>

namespace smalldet {

/// Coordinate convention of a center-format box.
enum class BoxUnits {
    normalized,  ///< fractions of the image width/height
    pixels,
};

/// Axis-aligned box in center format. The units are carried by the caller
/// (see BoxUnits); a single box never mixes them.
struct Box {
    float cx = 0.0f;
    float cy = 0.0f;
    float w = 0.0f;
    float h = 0.0f;

    bool operator==(const Box&) const = default;
};

/// Axis-aligned box in pixel corner format.
struct CornerBox {
    float x1 = 0.0f;
    float y1 = 0.0f;
    float x2 = 0.0f;
    float y2 = 0.0f;

    float width() const { return x2 - x1; }
    float height() const { return y2 - y1; }
    float area() const { return width() * height(); }

    bool operator==(const CornerBox&) const = default;
};

class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Intersection over union of two closed rectangles. Degenerate boxes and a
/// zero union give 0.
float iou(const CornerBox& a, const CornerBox& b);

/// IoU of two boxes sharing a center, given only their extents.
float wh_iou(float wa, float ha, float wb, float hb);

/// Converts a center box to pixel corners. For normalized boxes the extents
/// are scaled by the image size; pixel boxes ignore it.
CornerBox to_corner(const Box& b, float image_w, float image_h, BoxUnits units);

/// Inverse of to_corner.
Box from_corner(const CornerBox& c, float image_w, float image_h, BoxUnits units);

/// Clips a corner box to [0,image_w]x[0,image_h].
CornerBox clamp_to_image(const CornerBox& c, float image_w, float image_h);

}  // namespace smalldet
