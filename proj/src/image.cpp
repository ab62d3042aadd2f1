#include "objcustom/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace objcustom {

ImageTensor::ImageTensor(int c, int h, int w, double fill) : channels(c), height(h), width(w) {
    if (c <= 0 || h <= 0 || w <= 0) throw ShapeError("image dimensions must be positive");
    data.assign(static_cast<std::size_t>(c) * h * w, fill);
}

void ImageTensor::validate() const {
    if (channels <= 0 || height < 1 || width < 1) throw ShapeError("image dimensions must be positive");
    if (data.size() != static_cast<std::size_t>(channels) * height * width) throw ShapeError("image buffer size mismatch");
    for (double v : data)
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw ShapeError("image values must be finite and within [0,1]");
}

SegMask::SegMask(int h, int w, std::uint8_t fill) : height(h), width(w) {
    if (h <= 0 || w <= 0) throw ShapeError("mask dimensions must be positive");
    data.assign(static_cast<std::size_t>(h) * w, fill);
}

std::size_t SegMask::count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

std::optional<Box> mask_bbox(const SegMask& m) {
    Box b{m.width, m.height, -1, -1};
    bool any = false;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(y, x)) {
                any = true;
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x + 1);
                b.y1 = std::max(b.y1, y + 1);
            }
    if (!any) return std::nullopt;
    return b;
}

ImageTensor crop(const ImageTensor& img, const Box& box) {
    ImageTensor out(img.channels, box.height(), box.width());
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < box.height(); ++y) {
            const int sy = box.y0 + y;
            if (sy < 0 || sy >= img.height) continue;
            for (int x = 0; x < box.width(); ++x) {
                const int sx = box.x0 + x;
                if (sx < 0 || sx >= img.width) continue;
                out.at(c, y, x) = img.at(c, sy, sx);
            }
        }
    return out;
}

SegMask crop(const SegMask& m, const Box& box) {
    SegMask out(box.height(), box.width());
    for (int y = 0; y < box.height(); ++y) {
        const int sy = box.y0 + y;
        if (sy < 0 || sy >= m.height) continue;
        for (int x = 0; x < box.width(); ++x) {
            const int sx = box.x0 + x;
            if (sx < 0 || sx >= m.width) continue;
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

ImageTensor hflip(const ImageTensor& img) {
    ImageTensor out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    return out;
}

SegMask hflip(const SegMask& m) {
    SegMask out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
    return out;
}

namespace {

// Overlap weights of destination cells [i/scale, (i+1)/scale) with source pixels.
std::vector<std::vector<std::pair<int, double>>> area_weights(int src, int dst) {
    std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(dst));
    const double ratio = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        const double a = i * ratio, b = (i + 1) * ratio;
        if (ratio <= 1.0) {
            // Upsampling: bilinear sample at the cell centre.
            const double pos = std::clamp((i + 0.5) * ratio - 0.5, 0.0, static_cast<double>(src - 1));
            const int lo = static_cast<int>(std::floor(pos));
            const int hi = std::min(lo + 1, src - 1);
            const double f = pos - lo;
            if (hi == lo || f == 0.0) {
                w[i].emplace_back(lo, 1.0);
            } else {
                w[i].emplace_back(lo, 1.0 - f);
                w[i].emplace_back(hi, f);
            }
            continue;
        }
        for (int s = static_cast<int>(std::floor(a)); s < static_cast<int>(std::ceil(b)); ++s) {
            const double ov = std::min(b, s + 1.0) - std::max(a, static_cast<double>(s));
            if (ov > 0) w[i].emplace_back(std::min(s, src - 1), ov / ratio);
        }
    }
    return w;
}

}  // namespace

ImageTensor resize(const ImageTensor& img, int height, int width) {
    if (img.height == height && img.width == width) return img;
    const auto wy = area_weights(img.height, height);
    const auto wx = area_weights(img.width, width);
    ImageTensor out(img.channels, height, width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double acc = 0.0;
                for (auto [sy, fy] : wy[y])
                    for (auto [sx, fx] : wx[x]) acc += fy * fx * img.at(c, sy, sx);
                out.at(c, y, x) = std::clamp(acc, 0.0, 1.0);
            }
    return out;
}

SegMask resize_nearest(const SegMask& m, int height, int width) {
    SegMask out(height, width);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / width));
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

ImageTensor color_jitter(const ImageTensor& img, double brightness, double saturation) {
    ImageTensor out = img;
    if (img.channels != 3) {
        for (auto& v : out.data) v = std::clamp(v * brightness, 0.0, 1.0);
        return out;
    }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double rgb[3];
            for (int c = 0; c < 3; ++c) rgb[c] = img.at(c, y, x) * brightness;
            const double gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = std::clamp(gray + saturation * (rgb[c] - gray), 0.0, 1.0);
        }
    return out;
}

Tensor to_rows(const ImageTensor& img) {
    Tensor t(img.height * img.width, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) t(y * img.width + x, c) = img.at(c, y, x);
    return t;
}

ImageTensor from_rows(const Tensor& rows, int height, int width, bool clamp) {
    require_shape(rows.rows == height * width, "from_rows: row count != height*width");
    ImageTensor img(rows.cols, height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < rows.cols; ++c) {
                const double v = rows(y * width + x, c);
                img.at(c, y, x) = clamp ? std::clamp(v, 0.0, 1.0) : v;
            }
    return img;
}

namespace {

struct RasterHeader {
    std::string magic;
    int width = 0, height = 0, maxval = 0;
};

RasterHeader read_header(std::istream& in, const std::filesystem::path& path) {
    RasterHeader h;
    auto next_token = [&]() {
        std::string tok;
        while (in) {
            const int c = in.peek();
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        in >> tok;
        return tok;
    };
    h.magic = next_token();
    try {
        h.width = std::stoi(next_token());
        h.height = std::stoi(next_token());
        h.maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw std::runtime_error("malformed raster header: " + path.string());
    }
    in.get();  // single whitespace before binary payload
    if (h.width <= 0 || h.height <= 0 || h.maxval != 255)
        throw std::runtime_error("unsupported raster (need 8-bit, positive dims): " + path.string());
    return h;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void write_ppm(const std::filesystem::path& path, const ImageTensor& img) {
    require_shape(img.channels == 3, "write_ppm: need 3 channels");
    auto out = open_out(path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> buf(static_cast<std::size_t>(img.width) * img.height * 3);
    std::size_t i = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) buf[i++] = to_byte(img.at(c, y, x));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

ImageTensor read_ppm(const std::filesystem::path& path) {
    auto in = open_in(path);
    const auto h = read_header(in, path);
    if (h.magic != "P6") throw std::runtime_error("not a binary PPM: " + path.string());
    std::vector<unsigned char> buf(static_cast<std::size_t>(h.width) * h.height * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw std::runtime_error("truncated PPM: " + path.string());
    ImageTensor img(3, h.height, h.width);
    std::size_t i = 0;
    for (int y = 0; y < h.height; ++y)
        for (int x = 0; x < h.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[i++] / 255.0;
    return img;
}

void write_pgm(const std::filesystem::path& path, const SegMask& m) {
    auto out = open_out(path);
    out << "P5\n" << m.width << " " << m.height << "\n255\n";
    std::vector<unsigned char> buf(m.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = m.data[i] ? 255 : 0;
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

SegMask read_pgm(const std::filesystem::path& path) {
    auto in = open_in(path);
    const auto h = read_header(in, path);
    if (h.magic != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
    SegMask m(h.height, h.width);
    std::vector<unsigned char> buf(m.data.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw std::runtime_error("truncated PGM: " + path.string());
    for (std::size_t i = 0; i < buf.size(); ++i) m.data[i] = buf[i] >= 128 ? 1 : 0;
    return m;
}

std::pair<int, int> read_raster_dims(const std::filesystem::path& path) {
    auto in = open_in(path);
    const auto h = read_header(in, path);
    if (h.magic != "P5" && h.magic != "P6") throw std::runtime_error("not a PPM/PGM file: " + path.string());
    return {h.height, h.width};
}

ImageTensor quantize8(const ImageTensor& img) {
    ImageTensor out = img;
    for (auto& v : out.data) v = to_byte(v) / 255.0;
    return out;
}

ImageTensor contact_sheet(const std::vector<ImageTensor>& images, int columns) {
    require_shape(!images.empty() && columns > 0, "contact_sheet: need images and columns > 0");
    const int h = images.front().height, w = images.front().width, ch = images.front().channels;
    const int n = static_cast<int>(images.size());
    const int cols = std::min(columns, n);
    const int rows = (n + cols - 1) / cols;
    ImageTensor sheet(ch, rows * (h + 1) - 1, cols * (w + 1) - 1);
    for (int i = 0; i < n; ++i) {
        require_shape(images[i].height == h && images[i].width == w, "contact_sheet: images differ in size");
        const int oy = (i / cols) * (h + 1), ox = (i % cols) * (w + 1);
        for (int c = 0; c < ch; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) sheet.at(c, oy + y, ox + x) = images[i].at(c, y, x);
    }
    return sheet;
}

}  // namespace objcustom
