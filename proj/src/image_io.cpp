#include "lino/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>

#include <png.h>

namespace lino::io {

static_assert(std::endian::native == std::endian::little, "EXR codec assumes a little-endian host");

namespace {

constexpr uint32_t kExrMagic = 20000630;
constexpr int32_t kPixelFloat = 2;

class ByteWriter {
public:
    template <typename T>
    void put(const T& v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void put_str(const std::string& s) {
        buf_.insert(buf_.end(), s.begin(), s.end());
        buf_.push_back('\0');
    }
    void put_bytes(const void* data, size_t n) {
        const auto* p = static_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void attribute(const std::string& name, const std::string& type, const std::vector<char>& value) {
        put_str(name);
        put_str(type);
        put(static_cast<int32_t>(value.size()));
        buf_.insert(buf_.end(), value.begin(), value.end());
    }
    size_t size() const { return buf_.size(); }
    std::vector<char>& bytes() { return buf_; }

private:
    std::vector<char> buf_;
};

template <typename... Ts>
std::vector<char> pack(const Ts&... vs) {
    ByteWriter w;
    (w.put(vs), ...);
    return w.bytes();
}

class ByteReader {
public:
    explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_str() {
        auto end = std::find(data_.begin() + static_cast<std::ptrdiff_t>(pos_), data_.end(), '\0');
        if (end == data_.end()) throw std::runtime_error("exr: unterminated string");
        std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_), end);
        pos_ += s.size() + 1;
        return s;
    }
    void need(size_t n) const {
        if (pos_ + n > data_.size()) throw std::runtime_error("exr: truncated file");
    }
    void seek(size_t p) {
        if (p > data_.size()) throw std::runtime_error("exr: offset out of range");
        pos_ = p;
    }
    size_t pos() const { return pos_; }
    const char* at(size_t p) const { return data_.data() + p; }

private:
    std::vector<char> data_;
    size_t pos_ = 0;
};

std::vector<char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

void write_exr(const std::filesystem::path& path, const torch::Tensor& image) {
    if (image.dim() != 2 && !(image.dim() == 3 && image.size(2) == 3)) {
        throw std::invalid_argument("write_exr: expected [H, W] or [H, W, 3]");
    }
    auto img = image.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    const int32_t h = static_cast<int32_t>(img.size(0));
    const int32_t w = static_cast<int32_t>(img.size(1));
    const bool rgb = img.dim() == 3;
    // Channel list must be sorted by name; B, G, R map to planes 2, 1, 0.
    const std::vector<std::pair<std::string, int>> channels =
        rgb ? std::vector<std::pair<std::string, int>>{{"B", 2}, {"G", 1}, {"R", 0}}
            : std::vector<std::pair<std::string, int>>{{"Y", 0}};

    ByteWriter buf;
    buf.put(kExrMagic);
    buf.put(static_cast<uint32_t>(2));

    ByteWriter chl;
    for (const auto& [name, plane] : channels) {
        chl.put_str(name);
        chl.put(kPixelFloat);
        chl.put(static_cast<uint8_t>(0));
        chl.put_bytes("\0\0\0", 3);
        chl.put(static_cast<int32_t>(1));
        chl.put(static_cast<int32_t>(1));
    }
    chl.put(static_cast<uint8_t>(0));
    buf.attribute("channels", "chlist", chl.bytes());
    buf.attribute("compression", "compression", pack(static_cast<uint8_t>(0)));
    const auto box = pack(int32_t{0}, int32_t{0}, w - 1, h - 1);
    buf.attribute("dataWindow", "box2i", box);
    buf.attribute("displayWindow", "box2i", box);
    buf.attribute("lineOrder", "lineOrder", pack(static_cast<uint8_t>(0)));
    buf.attribute("pixelAspectRatio", "float", pack(1.0f));
    buf.attribute("screenWindowCenter", "v2f", pack(0.0f, 0.0f));
    buf.attribute("screenWindowWidth", "float", pack(1.0f));
    buf.put(static_cast<uint8_t>(0));

    const size_t nch = channels.size();
    const size_t line_bytes = nch * static_cast<size_t>(w) * sizeof(float);
    const size_t table_start = buf.size();
    const size_t first_block = table_start + static_cast<size_t>(h) * sizeof(uint64_t);
    for (int32_t y = 0; y < h; ++y) {
        buf.put(static_cast<uint64_t>(first_block + static_cast<size_t>(y) * (8 + line_bytes)));
    }
    const float* px = img.data_ptr<float>();
    std::vector<float> line(static_cast<size_t>(w));
    for (int32_t y = 0; y < h; ++y) {
        buf.put(y);
        buf.put(static_cast<int32_t>(line_bytes));
        for (const auto& [name, plane] : channels) {
            for (int32_t x = 0; x < w; ++x) {
                line[static_cast<size_t>(x)] =
                    rgb ? px[(static_cast<size_t>(y) * w + x) * 3 + plane] : px[static_cast<size_t>(y) * w + x];
            }
            buf.put_bytes(line.data(), line.size() * sizeof(float));
        }
    }
    write_all(path, buf.bytes());
}

torch::Tensor read_exr(const std::filesystem::path& path) {
    ByteReader r(read_all(path));
    if (r.get<uint32_t>() != kExrMagic) throw std::runtime_error("exr: bad magic in " + path.string());
    const auto version = r.get<uint32_t>();
    if ((version & 0xff) != 2 || (version & ~0xffu) != 0) {
        throw std::runtime_error("exr: only single-part scanline files are supported");
    }
    std::vector<std::string> names;
    int32_t xmin = 0, ymin = 0, xmax = -1, ymax = -1;
    uint8_t compression = 255;
    for (;;) {
        std::string name = r.get_str();
        if (name.empty()) break;
        std::string type = r.get_str();
        const auto size = r.get<int32_t>();
        const size_t start = r.pos();
        r.need(static_cast<size_t>(size));
        if (name == "channels") {
            for (;;) {
                std::string ch = r.get_str();
                if (ch.empty()) break;
                if (r.get<int32_t>() != kPixelFloat) throw std::runtime_error("exr: only FLOAT channels supported");
                r.get<uint32_t>();
                if (r.get<int32_t>() != 1 || r.get<int32_t>() != 1) {
                    throw std::runtime_error("exr: subsampled channels unsupported");
                }
                names.push_back(ch);
            }
        } else if (name == "compression") {
            compression = r.get<uint8_t>();
        } else if (name == "dataWindow") {
            xmin = r.get<int32_t>();
            ymin = r.get<int32_t>();
            xmax = r.get<int32_t>();
            ymax = r.get<int32_t>();
        }
        r.seek(start + static_cast<size_t>(size));
    }
    if (compression != 0) throw std::runtime_error("exr: only uncompressed files are supported");
    if (names.empty()) throw std::runtime_error("exr: no channels");
    const int64_t w = xmax - xmin + 1;
    const int64_t h = ymax - ymin + 1;
    if (w <= 0 || h <= 0) throw std::runtime_error("exr: empty data window");

    std::vector<uint64_t> offsets(static_cast<size_t>(h));
    for (auto& o : offsets) o = r.get<uint64_t>();

    const auto nch = static_cast<int64_t>(names.size());
    auto planes = torch::empty({nch, h, w}, torch::kFloat32);
    float* dst = planes.data_ptr<float>();
    for (int64_t i = 0; i < h; ++i) {
        r.seek(offsets[static_cast<size_t>(i)]);
        const auto y = r.get<int32_t>() - ymin;
        const auto bytes = r.get<int32_t>();
        if (y < 0 || y >= h || bytes != nch * w * static_cast<int64_t>(sizeof(float))) {
            throw std::runtime_error("exr: malformed scanline block");
        }
        r.need(static_cast<size_t>(bytes));
        const char* src = r.at(r.pos());
        for (int64_t c = 0; c < nch; ++c) {
            std::memcpy(dst + (c * h + y) * w, src + c * w * sizeof(float), static_cast<size_t>(w) * sizeof(float));
        }
    }
    if (nch == 1) return planes[0];

    // R, G, B first in that order, then any remaining channels alphabetically.
    std::vector<int64_t> order;
    for (const char* want : {"R", "G", "B"}) {
        auto it = std::find(names.begin(), names.end(), want);
        if (it != names.end()) order.push_back(it - names.begin());
    }
    for (int64_t c = 0; c < nch; ++c) {
        if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);
    }
    return planes.index_select(0, torch::tensor(order, torch::kInt64)).permute({1, 2, 0}).contiguous();
}

namespace {

struct PngWriteState {
    std::vector<char> out;
};

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* st = static_cast<PngWriteState*>(png_get_io_ptr(png));
    st->out.insert(st->out.end(), reinterpret_cast<char*>(data), reinterpret_cast<char*>(data) + len);
}

void png_flush_cb(png_structp) {}

struct PngReadState {
    const std::vector<char>* data;
    size_t pos;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
    auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (st->pos + len > st->data->size()) png_error(png, "truncated png");
    std::memcpy(out, st->data->data() + st->pos, len);
    st->pos += len;
}

}  // namespace

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
    if (image.scalar_type() != torch::kUInt8 ||
        !(image.dim() == 2 || (image.dim() == 3 && image.size(2) == 3))) {
        throw std::invalid_argument("write_png: expected uint8 [H, W] or [H, W, 3]");
    }
    auto img = image.contiguous();
    const auto h = static_cast<png_uint_32>(img.size(0));
    const auto w = static_cast<png_uint_32>(img.size(1));
    const int channels = img.dim() == 3 ? 3 : 1;

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng init failed");
    }
    PngWriteState state;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: encoding failed for " + path.string());
    }
    png_set_write_fn(png, &state, png_write_cb, png_flush_cb);
    png_set_IHDR(png, info, w, h, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    auto* base = img.data_ptr<uint8_t>();
    for (png_uint_32 y = 0; y < h; ++y) {
        png_write_row(png, base + static_cast<size_t>(y) * w * channels);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    write_all(path, state.out);
}

torch::Tensor read_png(const std::filesystem::path& path) {
    const auto data = read_all(path);
    if (data.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(data.data()), 0, 8) != 0) {
        throw std::runtime_error("read_png: not a png file: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng init failed");
    }
    torch::Tensor out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: decoding failed for " + path.string());
    }
    PngReadState state{&data, 0};
    png_set_read_fn(png, &state, png_read_cb);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    const int channels = png_get_channels(png, info);
    out = torch::empty({static_cast<int64_t>(h), static_cast<int64_t>(w), channels}, torch::kUInt8);
    auto* base = out.data_ptr<uint8_t>();
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, base + static_cast<size_t>(y) * w * channels, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return channels == 1 ? out.squeeze(2) : out;
}

void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask) {
    write_png(path, mask.to(torch::kBool).to(torch::kUInt8) * 255);
}

torch::Tensor read_mask_png(const std::filesystem::path& path) {
    auto img = read_png(path);
    if (img.dim() == 3) img = std::get<0>(img.max(2));
    return img > 127;
}

torch::Tensor normals_to_rgb8(const torch::Tensor& normals) {
    auto n = normals.detach().to(torch::kCPU, torch::kFloat64);
    return torch::round(255.0 * (n.clamp(-1.0, 1.0) + 1.0) / 2.0).to(torch::kUInt8);
}

torch::Tensor rgb8_to_normals(const torch::Tensor& rgb) {
    return rgb.to(torch::kFloat64) / 255.0 * 2.0 - 1.0;
}

torch::Tensor unit_to_u8(const torch::Tensor& values) {
    return torch::round(values.detach().to(torch::kCPU, torch::kFloat64).clamp(0.0, 1.0) * 255.0).to(torch::kUInt8);
}

}  // namespace lino::io
