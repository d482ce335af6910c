#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <ostream>

namespace scot {

/// Pixel canvas of a source image.
struct Canvas {
    int width = 0;
    int height = 0;

    constexpr bool valid() const noexcept { return width > 0 && height > 0; }
    constexpr std::int64_t area() const noexcept {
        return static_cast<std::int64_t>(width) * static_cast<std::int64_t>(height);
    }

    friend constexpr bool operator==(const Canvas&, const Canvas&) = default;
};

/// Axis-aligned integer box, top-left origin. x2/y2 are exclusive edges, so
/// the box covers [x1, x2) x [y1, y2).
struct BBox {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    constexpr int width() const noexcept { return x2 - x1; }
    constexpr int height() const noexcept { return y2 - y1; }
    constexpr std::int64_t area() const noexcept {
        return valid() ? static_cast<std::int64_t>(width()) * height() : 0;
    }

    /// Non-degenerate with non-negative coordinates.
    constexpr bool valid() const noexcept { return x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2; }

    constexpr bool contains(const BBox& other) const noexcept {
        return other.x1 >= x1 && other.y1 >= y1 && other.x2 <= x2 && other.y2 <= y2;
    }

    /// True when the open interiors overlap (touching edges do not count).
    constexpr bool intersects(const BBox& other) const noexcept {
        return other.x1 < x2 && x1 < other.x2 && other.y1 < y2 && y1 < other.y2;
    }

    constexpr std::array<int, 4> as_array() const noexcept { return {x1, y1, x2, y2}; }

    friend constexpr bool operator==(const BBox&, const BBox&) = default;
};

constexpr BBox canvas_box(const Canvas& canvas) noexcept { return {0, 0, canvas.width, canvas.height}; }

/// Intersection with the canvas. Empty when the box lies entirely outside.
constexpr std::optional<BBox> clamp_to(const BBox& box, const Canvas& canvas) noexcept {
    BBox out{std::clamp(box.x1, 0, canvas.width), std::clamp(box.y1, 0, canvas.height),
             std::clamp(box.x2, 0, canvas.width), std::clamp(box.y2, 0, canvas.height)};
    if (!out.valid()) return std::nullopt;
    return out;
}

inline std::ostream& operator<<(std::ostream& os, const BBox& b) {
    return os << '[' << b.x1 << ',' << b.y1 << ',' << b.x2 << ',' << b.y2 << ']';
}

inline std::ostream& operator<<(std::ostream& os, const Canvas& c) {
    return os << c.width << 'x' << c.height;
}

}  // namespace scot
