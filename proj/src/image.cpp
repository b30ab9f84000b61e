// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "lcnx/error.hpp"

namespace lcnx {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string netpbm_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            if (!tok.empty()) break;
        } else {
            tok.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return tok;
}

int parse_dim(const std::string& tok, const std::filesystem::path& path) {
    try {
        const int v = std::stoi(tok);
        if (v <= 0) throw IoError("");
        return v;
    } catch (...) {
        throw IoError("netpbm: bad header field '" + tok + "' in " + path.string());
    }
}

std::vector<std::uint8_t> read_netpbm(const std::filesystem::path& path, const char* magic, int channels, int& width,
                                      int& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    if (netpbm_token(in) != magic) throw IoError("not a binary " + std::string(magic) + " file: " + path.string());
    width = parse_dim(netpbm_token(in), path);
    height = parse_dim(netpbm_token(in), path);
    if (parse_dim(netpbm_token(in), path) != 255) throw IoError("netpbm: only maxval 255 is supported: " + path.string());
    std::vector<std::uint8_t> px(static_cast<std::size_t>(width) * height * channels);
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (in.gcount() != static_cast<std::streamsize>(px.size())) throw IoError("truncated image " + path.string());
    return px;
}

void write_netpbm(const std::filesystem::path& path, const char* magic, int width, int height,
                  const std::vector<std::uint8_t>& px) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << magic << '\n' << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

float sample_bilinear_clamped(const float* plane, std::size_t h, std::size_t w, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
    const double bot = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
    return static_cast<float>(top * (1 - fy) + bot * fy);
}

// Mirror an integer index into [0, n) without repeating the edge sample.
long reflect_index(long i, long n) {
    if (n == 1) return 0;
    const long period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

} // namespace

Image read_ppm(const std::filesystem::path& path) {
    Image img;
    img.rgb = read_netpbm(path, "P6", 3, img.width, img.height);
    return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
        throw ConfigError("write_ppm: buffer size does not match dimensions");
    }
    write_netpbm(path, "P6", image.width, image.height, image.rgb);
}

void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& gray) {
    if (gray.size() != static_cast<std::size_t>(width) * height) {
        throw ConfigError("write_pgm: buffer size does not match dimensions");
    }
    write_netpbm(path, "P5", width, height, gray);
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& width, int& height) {
    return read_netpbm(path, "P5", 1, width, height);
}

bool is_supported_image(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".ppm";
}

Image decode_image(const std::filesystem::path& path) {
    if (!is_supported_image(path)) throw IoError("unsupported image format: " + path.string());
    return read_ppm(path);
}

NdArray<float> to_planar(const Image& image) {
    const std::size_t h = static_cast<std::size_t>(image.height), w = static_cast<std::size_t>(image.width);
    NdArray<float> out({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) out(c, y, x) = image.rgb[(y * w + x) * 3 + c];
    return out;
}

NdArray<float> resize_bilinear(const NdArray<float>& chw, std::size_t out_h, std::size_t out_w) {
    const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (h == out_h && w == out_w) return chw;
    NdArray<float> out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* plane = chw.data().data() + ch * h * w;
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t x = 0; x < out_w; ++x)
                out(ch, y, x) = sample_bilinear_clamped(plane, h, w, (static_cast<double>(y) + 0.5) * sy - 0.5,
                                                        (static_cast<double>(x) + 0.5) * sx - 0.5);
    }
    return out;
}

NdArray<float> hflip(const NdArray<float>& chw) {
    const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    NdArray<float> out(chw.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out(ch, y, x) = chw(ch, y, w - 1 - x);
    return out;
}

NdArray<float> rotate(const NdArray<float>& chw, double degrees) {
    if (degrees == 0.0) return chw;
    const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    const double th = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const double cy = (static_cast<double>(h) - 1) / 2.0, cx = (static_cast<double>(w) - 1) / 2.0;
    NdArray<float> out(chw.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            // inverse mapping: output pixel -> source coordinate
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            const double sx = cs * dx + sn * dy + cx;
            const double sy = -sn * dx + cs * dy + cy;
            const double fy = std::floor(sy), fx = std::floor(sx);
            const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
            const double ty = sy - fy, tx = sx - fx;
            const long ys[2] = {reflect_index(y0, static_cast<long>(h)), reflect_index(y0 + 1, static_cast<long>(h))};
            const long xs[2] = {reflect_index(x0, static_cast<long>(w)), reflect_index(x0 + 1, static_cast<long>(w))};
            for (std::size_t ch = 0; ch < c; ++ch) {
                const float* p = chw.data().data() + ch * h * w;
                const double top = p[ys[0] * static_cast<long>(w) + xs[0]] * (1 - tx) + p[ys[0] * static_cast<long>(w) + xs[1]] * tx;
                const double bot = p[ys[1] * static_cast<long>(w) + xs[0]] * (1 - tx) + p[ys[1] * static_cast<long>(w) + xs[1]] * tx;
                out(ch, y, x) = static_cast<float>(top * (1 - ty) + bot * ty);
            }
        }
    }
    return out;
}

NdArray<float> normalize(const NdArray<float>& chw, const std::array<float, 3>& mean,
                         const std::array<float, 3>& stddev) {
    if (chw.rank() != 3 || chw.dim(0) != 3) throw ShapeError("normalize: expected [3,H,W]");
    NdArray<float> out(chw.shape());
    const std::size_t plane = chw.dim(1) * chw.dim(2);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = (chw[c * plane + i] / 255.0f - mean[c]) / stddev[c];
    return out;
}

NdArray<float> denormalize(const NdArray<float>& chw, const std::array<float, 3>& mean,
                           const std::array<float, 3>& stddev) {
    if (chw.rank() != 3 || chw.dim(0) != 3) throw ShapeError("denormalize: expected [3,H,W]");
    NdArray<float> out(chw.shape());
    const std::size_t plane = chw.dim(1) * chw.dim(2);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = (chw[c * plane + i] * stddev[c] + mean[c]) * 255.0f;
    return out;
}

} // namespace lcnx
