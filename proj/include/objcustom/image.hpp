#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "objcustom/tensor.hpp"

namespace objcustom {

// Planar [channels x height x width] image with values in [0,1].
struct ImageTensor {
    int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    ImageTensor() = default;
    ImageTensor(int c, int h, int w, double fill = 0.0);

    double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    // Throws ShapeError unless dims are positive and all values finite in [0,1].
    void validate() const;
    bool operator==(const ImageTensor&) const = default;
};

// Binary [height x width] mask.
struct SegMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    SegMask() = default;
    SegMask(int h, int w, std::uint8_t fill = 0);

    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
    bool operator==(const SegMask&) const = default;
};

// Inclusive-exclusive pixel box [x0, x1) x [y0, y1).
struct Box {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool contains(const Box& o) const { return x0 <= o.x0 && y0 <= o.y0 && x1 >= o.x1 && y1 >= o.y1; }
    bool operator==(const Box&) const = default;
};

std::optional<Box> mask_bbox(const SegMask& m);

// Pixels outside the source are zero.
ImageTensor crop(const ImageTensor& img, const Box& box);
SegMask crop(const SegMask& m, const Box& box);
ImageTensor hflip(const ImageTensor& img);
SegMask hflip(const SegMask& m);
// Area-weighted resampling; exact box averaging when shrinking by an integer factor.
ImageTensor resize(const ImageTensor& img, int height, int width);
SegMask resize_nearest(const SegMask& m, int height, int width);
// Brightness scale then saturation scale about the per-pixel gray value; clamped to [0,1].
ImageTensor color_jitter(const ImageTensor& img, double brightness, double saturation);

// [H*W x C] rows (NHWC order) and back.
Tensor to_rows(const ImageTensor& img);
ImageTensor from_rows(const Tensor& rows, int height, int width, bool clamp = true);

// Binary PPM (P6) for images and PGM (P5) for masks, 8-bit.
void write_ppm(const std::filesystem::path& path, const ImageTensor& img);
ImageTensor read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const SegMask& m);
SegMask read_pgm(const std::filesystem::path& path);
// Reads only the header of a PPM/PGM file; returns {height, width}.
std::pair<int, int> read_raster_dims(const std::filesystem::path& path);

// Rounds every value to the nearest 1/255 step, matching what a PPM round trip stores.
ImageTensor quantize8(const ImageTensor& img);

// Tiles images left-to-right, top-to-bottom with a 1-px black gutter.
ImageTensor contact_sheet(const std::vector<ImageTensor>& images, int columns);

}  // namespace objcustom
