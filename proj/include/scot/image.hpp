#pragma once

// Image sources and crops. A source is either a synthetic scene (cropping
// restricts the scene description to a rectangle, no pixels involved) or an
// RGBA raster loaded from PNG (cropping copies pixels and re-encodes as PNG).

#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <png.h>
#include <openssl/evp.h>

#include <json.hpp>

#include "scot/chat.hpp"
#include "scot/error.hpp"
#include "scot/geometry.hpp"
#include "scot/scene.hpp"

namespace scot {

inline constexpr std::string_view kSceneCropMediaType = "application/vnd.scot.scene-crop+json";

/// 8-bit RGBA pixels, row-major.
struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgba;

    Canvas canvas() const noexcept { return {width, height}; }

    friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

inline RasterImage decode_png(std::string_view bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw Error(ErrorCode::InvalidArgument, std::string("png decode: ") + image.message);
    }
    image.format = PNG_FORMAT_RGBA;
    RasterImage out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.rgba.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.rgba.data(), 0, nullptr)) {
        png_image_free(&image);
        throw Error(ErrorCode::InvalidArgument, std::string("png decode: ") + image.message);
    }
    return out;
}

inline std::string encode_png(const RasterImage& raster) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width);
    image.height = static_cast<png_uint_32>(raster.height);
    image.format = PNG_FORMAT_RGBA;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, raster.rgba.data(), 0, nullptr)) {
        throw Error(ErrorCode::InvalidArgument, std::string("png encode: ") + image.message);
    }
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, raster.rgba.data(), 0, nullptr)) {
        throw Error(ErrorCode::InvalidArgument, std::string("png encode: ") + image.message);
    }
    out.resize(size);
    return out;
}

inline std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::string base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw Error(ErrorCode::InvalidArgument, "base64 length must be a multiple of 4");
    std::string out(3 * text.size() / 4, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) throw Error(ErrorCode::InvalidArgument, "invalid base64");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

using ImageHandle = std::variant<std::shared_ptr<const Scene>, std::shared_ptr<const RasterImage>>;

inline Canvas canvas_of(const ImageHandle& handle) {
    return std::visit([](const auto& p) -> Canvas {
        if (!p) throw Error(ErrorCode::InvalidArgument, "empty image handle");
        if constexpr (std::is_same_v<std::decay_t<decltype(*p)>, Scene>) {
            return p->canvas;
        } else {
            return p->canvas();
        }
    }, handle);
}

/// Scene description restricted to a rectangle: the ids of regions that
/// intersect it. Labels are not carried; readability is the oracle's call.
struct SceneCrop {
    std::uint64_t scene_seed = 0;
    Canvas canvas;
    std::vector<int> region_ids;

    friend bool operator==(const SceneCrop&, const SceneCrop&) = default;
};

struct ImageRegion {
    BBox bbox;
    std::variant<SceneCrop, RasterImage> content;

    int width() const noexcept { return bbox.width(); }
    int height() const noexcept { return bbox.height(); }

    ImageAttachment attachment() const {
        if (const auto* crop = std::get_if<SceneCrop>(&content)) {
            nlohmann::json j = {{"scene_seed", crop->scene_seed},
                                {"canvas", {crop->canvas.width, crop->canvas.height}},
                                {"bbox", bbox_to_json(bbox)},
                                {"regions", crop->region_ids}};
            return {std::string(kSceneCropMediaType), j.dump()};
        }
        return {"image/png", encode_png(std::get<RasterImage>(content))};
    }
};

/// Decoded form of a scene-crop attachment.
struct SceneCropRef {
    std::uint64_t scene_seed = 0;
    BBox bbox;
};

inline std::optional<SceneCropRef> parse_scene_crop(const ImageAttachment& attachment) {
    if (attachment.media_type != kSceneCropMediaType) return std::nullopt;
    const auto j = nlohmann::json::parse(attachment.bytes, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    try {
        return SceneCropRef{j.at("scene_seed").get<std::uint64_t>(), bbox_from_json(j.at("bbox"))};
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

/// Crop of `source` to `bbox`. The bbox must be valid and inside the source
/// canvas; callers validate and enlarge first, so a failure here is a bug.
inline ImageRegion crop_image(const ImageHandle& source, const BBox& bbox) {
    const Canvas canvas = canvas_of(source);
    if (!bbox.valid() || !canvas_box(canvas).contains(bbox)) {
        std::ostringstream msg;
        msg << "crop " << bbox << " outside source " << canvas;
        throw Error(ErrorCode::CropOutOfBounds, msg.str());
    }
    if (const auto* scene = std::get_if<std::shared_ptr<const Scene>>(&source)) {
        SceneCrop crop{(*scene)->seed, canvas, {}};
        for (const auto& r : (*scene)->regions) {
            if (r.bbox.intersects(bbox)) crop.region_ids.push_back(r.id);
        }
        return {bbox, std::move(crop)};
    }
    const auto& raster = *std::get<std::shared_ptr<const RasterImage>>(source);
    RasterImage out;
    out.width = bbox.width();
    out.height = bbox.height();
    out.rgba.resize(static_cast<std::size_t>(out.width) * out.height * 4);
    for (int y = 0; y < out.height; ++y) {
        const auto* src = raster.rgba.data() + (static_cast<std::size_t>(bbox.y1 + y) * raster.width + bbox.x1) * 4;
        std::copy(src, src + static_cast<std::size_t>(out.width) * 4,
                  out.rgba.data() + static_cast<std::size_t>(y) * out.width * 4);
    }
    return {bbox, std::move(out)};
}

}  // namespace scot
