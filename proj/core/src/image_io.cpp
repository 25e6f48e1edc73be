#include "cellseg/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cellseg/errors.hpp"

namespace cellseg {

namespace {

// Next whitespace-separated token, skipping '#' comments (Netpbm headers).
std::string next_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw DataError("unexpected end of Netpbm header");
    return tok;
}

int parse_positive(const std::string& tok, const char* what) {
    try {
        const int v = std::stoi(tok);
        if (v <= 0) throw DataError(std::string("non-positive ") + what);
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string("bad Netpbm ") + what + ": " + tok);
    }
}

} // namespace

void write_pgm(const std::string& path, const Raster& r) {
    if (r.maxval != 255 && r.maxval != 65535)
        throw DataError("write_pgm: maxval must be 255 or 65535");
    if (static_cast<long>(r.pixels.size()) != static_cast<long>(r.width) * r.height)
        throw DimensionError("write_pgm: pixel count does not match extents");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "P5\n" << r.width << " " << r.height << "\n" << r.maxval << "\n";
    if (r.maxval == 255) {
        for (uint16_t p : r.pixels) {
            const unsigned char b = static_cast<unsigned char>(p & 0xff);
            os.write(reinterpret_cast<const char*>(&b), 1);
        }
    } else {
        for (uint16_t p : r.pixels) {
            const unsigned char b[2] = {static_cast<unsigned char>(p >> 8),
                                        static_cast<unsigned char>(p & 0xff)};
            os.write(reinterpret_cast<const char*>(b), 2); // big-endian per spec
        }
    }
    os.flush();
    if (!os) throw DataError("write failed: " + path);
}

Raster read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    if (next_token(is) != "P5") throw DataError("not a binary PGM: " + path);
    Raster r;
    r.width = parse_positive(next_token(is), "width");
    r.height = parse_positive(next_token(is), "height");
    r.maxval = parse_positive(next_token(is), "maxval");
    if (r.maxval != 255 && r.maxval != 65535)
        throw DataError("unsupported PGM maxval in " + path);
    // header ends with exactly one whitespace byte, already consumed by next_token

    const size_t n = static_cast<size_t>(r.width) * static_cast<size_t>(r.height);
    r.pixels.resize(n);
    if (r.maxval == 255) {
        std::vector<unsigned char> buf(n);
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
            throw DataError("truncated PGM payload: " + path);
        for (size_t i = 0; i < n; ++i) r.pixels[i] = buf[i];
    } else {
        std::vector<unsigned char> buf(2 * n);
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(2 * n)))
            throw DataError("truncated PGM payload: " + path);
        for (size_t i = 0; i < n; ++i)
            r.pixels[i] = static_cast<uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
    return r;
}

void write_ppm(const std::string& path, const RgbImage& img) {
    if (static_cast<long>(img.pixels.size()) != 3L * img.width * img.height)
        throw DimensionError("write_ppm: pixel count does not match extents");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    os.flush();
    if (!os) throw DataError("write failed: " + path);
}

uint16_t quantize16(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint16_t>(std::lround(c * 65535.0));
}

double dequantize16(uint16_t v) {
    return static_cast<double>(v) / 65535.0;
}

Raster to_raster16(const TensorGrid& map) {
    if (map.rank() != 3 || map.extent(0) != 1)
        throw DimensionError("to_raster16: expected [1,H,W]");
    Raster r;
    r.height = map.extent(1);
    r.width = map.extent(2);
    r.maxval = 65535;
    r.pixels.resize(static_cast<size_t>(map.size()));
    for (int i = 0; i < map.size(); ++i) r.pixels[static_cast<size_t>(i)] = quantize16(map[i]);
    return r;
}

TensorGrid from_raster16(const Raster& r) {
    TensorGrid t({1, r.height, r.width}, 0.0);
    const double scale = 1.0 / static_cast<double>(r.maxval);
    for (int i = 0; i < t.size(); ++i)
        t[i] = static_cast<double>(r.pixels[static_cast<size_t>(i)]) * scale;
    return t;
}

Raster labels_to_raster(const LabeledMask& mask) {
    Raster r;
    r.width = mask.width;
    r.height = mask.height;
    r.maxval = 65535;
    r.pixels.resize(mask.labels.size());
    for (size_t i = 0; i < mask.labels.size(); ++i) {
        const int l = mask.labels[i];
        if (l < 0 || l > 65535) throw DataError("label out of 16-bit range");
        r.pixels[i] = static_cast<uint16_t>(l);
    }
    return r;
}

LabeledMask raster_to_labels(const Raster& r) {
    LabeledMask m(r.width, r.height);
    for (size_t i = 0; i < r.pixels.size(); ++i) m.labels[i] = r.pixels[i];
    return m;
}

} // namespace cellseg
