#include "smalldet/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace smalldet {

namespace {

void require_finite(std::initializer_list<float> values, const char* what)
{
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw GeometryError(std::string(what) + ": non-finite input");
        }
    }
}

float scale_for(float image_extent, BoxUnits units)
{
    return units == BoxUnits::normalized ? image_extent : 1.0f;
}

}  // namespace

float iou(const CornerBox& a, const CornerBox& b)
{
    const float iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const float ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0f || ih <= 0.0f) {
        return 0.0f;
    }
    const float inter = iw * ih;
    const float uni = a.area() + b.area() - inter;
    if (uni <= 0.0f) {
        return 0.0f;
    }
    return std::clamp(inter / uni, 0.0f, 1.0f);
}

float wh_iou(float wa, float ha, float wb, float hb)
{
    const float inter = std::min(wa, wb) * std::min(ha, hb);
    const float uni = wa * ha + wb * hb - inter;
    if (uni <= 0.0f) {
        return 0.0f;
    }
    return inter / uni;
}

CornerBox to_corner(const Box& b, float image_w, float image_h, BoxUnits units)
{
    require_finite({b.cx, b.cy, b.w, b.h, image_w, image_h}, "to_corner");
    if (image_w <= 0.0f || image_h <= 0.0f) {
        throw GeometryError("to_corner: image size must be positive");
    }
    const float sx = scale_for(image_w, units);
    const float sy = scale_for(image_h, units);
    const float cx = b.cx * sx;
    const float cy = b.cy * sy;
    const float hw = b.w * sx * 0.5f;
    const float hh = b.h * sy * 0.5f;
    return {cx - hw, cy - hh, cx + hw, cy + hh};
}

Box from_corner(const CornerBox& c, float image_w, float image_h, BoxUnits units)
{
    require_finite({c.x1, c.y1, c.x2, c.y2, image_w, image_h}, "from_corner");
    if (image_w <= 0.0f || image_h <= 0.0f) {
        throw GeometryError("from_corner: image size must be positive");
    }
    const float sx = scale_for(image_w, units);
    const float sy = scale_for(image_h, units);
    return {(c.x1 + c.x2) * 0.5f / sx, (c.y1 + c.y2) * 0.5f / sy, (c.x2 - c.x1) / sx,
            (c.y2 - c.y1) / sy};
}

CornerBox clamp_to_image(const CornerBox& c, float image_w, float image_h)
{
    return {std::clamp(c.x1, 0.0f, image_w), std::clamp(c.y1, 0.0f, image_h),
            std::clamp(c.x2, 0.0f, image_w), std::clamp(c.y2, 0.0f, image_h)};
}

}  // namespace smalldet
