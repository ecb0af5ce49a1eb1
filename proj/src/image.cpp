#include "cse/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cse/errors.hpp"
#include "cse/nn.hpp"

namespace cse {

namespace {

constexpr unsigned char kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PersistenceError("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff n = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()), n);
    if (!in) throw PersistenceError("short read: " + path);
    return buf;
}

std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

Tensor rgb_from_bytes(const std::vector<unsigned char>& px, int h, int w, int channels) {
    Tensor img({3, h, w});
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < hw; ++i) {
        const unsigned char* p = px.data() + i * channels;
        float r, g, b;
        if (channels == 1) {
            r = g = b = p[0] / 255.0f;
        } else if (channels == 2) { // gray + alpha
            r = g = b = p[0] / 255.0f;
        } else { // 3 or 4, alpha dropped
            r = p[0] / 255.0f;
            g = p[1] / 255.0f;
            b = p[2] / 255.0f;
        }
        img.data[i] = r;
        img.data[hw + i] = g;
        img.data[2 * hw + i] = b;
    }
    return img;
}

Tensor decode_png(const std::vector<unsigned char>& buf, const std::string& path) {
    if (buf.size() < 8 + 25 || std::memcmp(buf.data(), kPngSig, 8) != 0)
        throw PersistenceError("not a PNG file: " + path);

    std::size_t pos = 8;
    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<unsigned char> idat;
    bool saw_ihdr = false, saw_iend = false;

    while (pos + 8 <= buf.size() && !saw_iend) {
        const std::uint32_t len = be32(buf.data() + pos);
        if (pos + 12 + len > buf.size()) throw PersistenceError("truncated PNG: " + path);
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const unsigned char* data = buf.data() + pos + 8;

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw PersistenceError("bad IHDR: " + path);
            width = static_cast<int>(be32(data));
            height = static_cast<int>(be32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            if (data[12] != 0) throw PersistenceError("interlaced PNG unsupported: " + path);
            if (bit_depth != 8)
                throw PersistenceError("only 8-bit PNG supported: " + path);
            if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6)
                throw PersistenceError("palette/unknown PNG color type unsupported: " + path);
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || width <= 0 || height <= 0)
        throw PersistenceError("missing IHDR: " + path);
    if (idat.empty()) throw PersistenceError("missing IDAT: " + path);

    const int channels = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    const std::size_t raw_size = (stride + 1) * static_cast<std::size_t>(height);

    std::vector<unsigned char> raw(raw_size);
    uLongf out_len = raw_size;
    const int rc = uncompress(raw.data(), &out_len, idat.data(), idat.size());
    if (rc != Z_OK || out_len != raw_size)
        throw PersistenceError("PNG inflate failed: " + path);

    // undo per-row filters
    std::vector<unsigned char> px(stride * static_cast<std::size_t>(height));
    const int bpp = channels;
    for (int y = 0; y < height; ++y) {
        const unsigned char filter = raw[(stride + 1) * static_cast<std::size_t>(y)];
        const unsigned char* src = raw.data() + (stride + 1) * static_cast<std::size_t>(y) + 1;
        unsigned char* row = px.data() + stride * static_cast<std::size_t>(y);
        const unsigned char* prev = y > 0 ? px.data() + stride * static_cast<std::size_t>(y - 1) : nullptr;
        for (std::size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<std::size_t>(bpp) ? row[x - bpp] : 0;
            const int b = prev ? prev[x] : 0;
            const int c = (prev && x >= static_cast<std::size_t>(bpp)) ? prev[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw PersistenceError("bad PNG filter type: " + path);
            }
            row[x] = static_cast<unsigned char>(v & 0xff);
        }
    }
    return rgb_from_bytes(px, height, width, channels);
}

Tensor decode_pnm(const std::vector<unsigned char>& buf, const std::string& path) {
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < buf.size()) {
            if (std::isspace(buf[pos])) {
                ++pos;
            } else if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        std::string tok;
        while (pos < buf.size() && !std::isspace(buf[pos])) tok.push_back(static_cast<char>(buf[pos++]));
        return tok;
    };

    const std::string magic = next_token();
    if (magic != "P6" && magic != "P5") throw PersistenceError("unsupported PNM magic: " + path);
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0 || maxval != 255) throw PersistenceError("unsupported PNM header: " + path);
    ++pos; // single whitespace after maxval

    const int channels = magic == "P6" ? 3 : 1;
    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (buf.size() - pos < need) throw PersistenceError("truncated PNM: " + path);
    std::vector<unsigned char> px(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                  buf.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return rgb_from_bytes(px, h, w, channels);
}

std::string lower_ext(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

} // namespace

Tensor load_image(const std::string& path) {
    const std::vector<unsigned char> buf = read_file(path);
    if (buf.size() >= 8 && std::memcmp(buf.data(), kPngSig, 8) == 0) return decode_png(buf, path);
    if (buf.size() >= 2 && buf[0] == 'P' && (buf[1] == '5' || buf[1] == '6'))
        return decode_pnm(buf, path);
    if (buf.size() >= 2 && buf[0] == 0xff && buf[1] == 0xd8)
        throw PersistenceError("JPEG decoding not supported by this build: " + path);
    throw PersistenceError("unrecognized image format: " + path);
}

void save_png(const std::string& path, const Tensor& image) {
    int h, w, channels;
    const float* planes[3] = {nullptr, nullptr, nullptr};
    if (image.rank() == 3 && image.dim(0) == 3) {
        channels = 3;
        h = image.dim(1);
        w = image.dim(2);
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        planes[0] = image.ptr();
        planes[1] = image.ptr() + hw;
        planes[2] = image.ptr() + 2 * hw;
    } else if (image.rank() == 3 && image.dim(0) == 1) {
        channels = 1;
        h = image.dim(1);
        w = image.dim(2);
        planes[0] = image.ptr();
    } else if (image.rank() == 2) {
        channels = 1;
        h = image.dim(0);
        w = image.dim(1);
        planes[0] = image.ptr();
    } else {
        throw InvalidInputError("save_png: expected 3xHxW, 1xHxW or HxW, got " + image.shape_str());
    }

    const int color_type = channels == 3 ? 2 : 0;
    const std::size_t stride = static_cast<std::size_t>(w) * channels;
    std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) {
        unsigned char* row = raw.data() + (stride + 1) * static_cast<std::size_t>(y);
        row[0] = 0; // filter: none
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const float v = std::clamp(planes[c][static_cast<std::size_t>(y) * w + x], 0.0f, 1.0f);
                row[1 + static_cast<std::size_t>(x) * channels + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    }

    uLongf bound = compressBound(raw.size());
    std::vector<unsigned char> zdata(bound);
    if (compress2(zdata.data(), &bound, raw.data(), raw.size(), 6) != Z_OK)
        throw PersistenceError("PNG deflate failed: " + path);
    zdata.resize(bound);

    std::vector<unsigned char> out;
    out.insert(out.end(), kPngSig, kPngSig + 8);
    auto chunk = [&](const char* type, const std::vector<unsigned char>& data) {
        put_be32(out, static_cast<std::uint32_t>(data.size()));
        const std::size_t start = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), data.begin(), data.end());
        const uLong crc = crc32(crc32(0L, Z_NULL, 0), out.data() + start,
                                static_cast<uInt>(out.size() - start));
        put_be32(out, static_cast<std::uint32_t>(crc));
    };

    std::vector<unsigned char> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(w));
    put_be32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);
    ihdr.push_back(static_cast<unsigned char>(color_type));
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    chunk("IHDR", ihdr);
    chunk("IDAT", zdata);
    chunk("IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw PersistenceError("cannot write file: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw PersistenceError("write failed: " + path);
}

bool has_image_extension(const std::string& path) {
    const std::string ext = lower_ext(path);
    return ext == "png" || ext == "ppm" || ext == "pgm" || ext == "jpg" || ext == "jpeg";
}

std::vector<std::string> list_images_recursive(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && has_image_extension(entry.path().string()))
            out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

Tensor center_crop(const Tensor& image, int h, int w) {
    if (image.rank() != 3) throw InvalidInputError("center_crop: expected CxHxW");
    const int c = image.dim(0), ih = image.dim(1), iw = image.dim(2);
    if (ih < h || iw < w)
        throw InvalidInputError("center_crop: image " + image.shape_str() + " smaller than crop");
    const int y0 = (ih - h) / 2, x0 = (iw - w) / 2;
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            std::memcpy(out.ptr() + (static_cast<std::size_t>(ch) * h + y) * w,
                        image.ptr() + (static_cast<std::size_t>(ch) * ih + y0 + y) * iw + x0,
                        static_cast<std::size_t>(w) * sizeof(float));
    return out;
}

Tensor resize_cover_crop(const Tensor& image, int h, int w) {
    if (image.rank() != 3) throw InvalidInputError("resize_cover_crop: expected CxHxW");
    const int ih = image.dim(1), iw = image.dim(2);
    const double scale = std::max(static_cast<double>(h) / ih, static_cast<double>(w) / iw);
    const int rh = std::max(h, static_cast<int>(std::lround(ih * scale)));
    const int rw = std::max(w, static_cast<int>(std::lround(iw * scale)));
    return center_crop(resize_bilinear(image, rh, rw), h, w);
}

} // namespace cse
