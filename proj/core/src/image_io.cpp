#include "dpcqa/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

namespace dpcqa {

namespace {

struct Cursor {
    const std::string& path;
    const std::string& buf;
    size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw IoError(path + ": " + what + " at byte " + std::to_string(pos));
    }

    bool done() const { return pos >= buf.size(); }
    char peek() const { return buf[pos]; }

    // whitespace and '#' comments separate header tokens
    void skip_separators() {
        while (!done()) {
            char c = peek();
            if (c == '#') {
                while (!done() && peek() != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    std::string token() {
        skip_separators();
        if (done()) fail("unexpected end of file");
        size_t start = pos;
        while (!done() && !std::isspace(static_cast<unsigned char>(peek())) && peek() != '#') ++pos;
        return buf.substr(start, pos - start);
    }

    int64_t number(const char* what) {
        std::string tok = token();
        size_t used = 0;
        int64_t val = 0;
        try {
            val = std::stoll(tok, &used);
        } catch (const std::exception&) {
            fail(std::string("expected ") + what + ", got '" + tok + "'");
        }
        if (used != tok.size()) fail(std::string("expected ") + what + ", got '" + tok + "'");
        return val;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

// shared header parse for P5/P6; returns offset of the first payload byte
size_t parse_header(Cursor& cur, const char* magic, int64_t& w, int64_t& h) {
    std::string m = cur.token();
    if (m != magic) cur.fail(std::string("expected magic ") + magic + ", got '" + m + "'");
    w = cur.number("width");
    h = cur.number("height");
    if (w <= 0 || h <= 0) cur.fail("non-positive image dimensions");
    int64_t maxval = cur.number("maxval");
    if (maxval != 255) cur.fail("unsupported maxval " + std::to_string(maxval));
    if (cur.done() || !std::isspace(static_cast<unsigned char>(cur.peek())))
        cur.fail("missing separator before pixel data");
    return cur.pos + 1;
}

void check_payload(Cursor& cur, size_t payload_start, size_t need, size_t total) {
    if (total - payload_start < need) {
        cur.pos = total;
        cur.fail("pixel data truncated (need " + std::to_string(need) + " bytes, have " +
                 std::to_string(total - payload_start) + ")");
    }
    if (total - payload_start > need) {
        cur.pos = payload_start + need;
        cur.fail("trailing bytes after pixel data");
    }
}

uint8_t quantize(float v) {
    float scaled = std::floor(v * 255.0f + 0.5f);
    if (scaled < 0.0f) scaled = 0.0f;
    if (scaled > 255.0f) scaled = 255.0f;
    return static_cast<uint8_t>(scaled);
}

}  // namespace

TensorPtr<float> load_ppm(const std::string& path) {
    std::string buf = read_file(path);
    Cursor cur{path, buf};
    int64_t w = 0, h = 0;
    size_t start = parse_header(cur, "P6", w, h);
    size_t need = static_cast<size_t>(w) * static_cast<size_t>(h) * 3;
    check_payload(cur, start, need, buf.size());
    auto img = zeros<float>(Shape{3, h, w});
    const unsigned char* px = reinterpret_cast<const unsigned char*>(buf.data() + start);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                img->at3(c, y, x) = static_cast<float>(px[(y * w + x) * 3 + c]) / 255.0f;
    return img;
}

void save_ppm(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 3 || img.shape[0] != 3) throw ShapeError("save_ppm expects [3 x H x W]");
    int64_t h = img.shape[1], w = img.shape[2];
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                row[static_cast<size_t>(x * 3 + c)] = quantize(img.at3(c, y, x));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("short write to " + path);
}

GrayImage load_pgm(const std::string& path) {
    std::string buf = read_file(path);
    Cursor cur{path, buf};
    int64_t w = 0, h = 0;
    size_t start = parse_header(cur, "P5", w, h);
    size_t need = static_cast<size_t>(w) * static_cast<size_t>(h);
    check_payload(cur, start, need, buf.size());
    GrayImage img;
    img.h = h;
    img.w = w;
    img.v.assign(buf.begin() + static_cast<std::ptrdiff_t>(start), buf.end());
    return img;
}

void save_pgm(const std::string& path, const GrayImage& img) {
    if (img.v.size() != static_cast<size_t>(img.h * img.w))
        throw ShapeError("save_pgm: pixel buffer does not match dimensions");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
    if (!out) throw IoError("short write to " + path);
}

void save_pgm_float(const std::string& path, const Tensor<float>& plane) {
    Shape s = plane.shape;
    if (plane.rank() == 3 && s[0] == 1) s = Shape{s[1], s[2]};
    if (s.size() != 2) throw ShapeError("save_pgm_float expects [H x W]");
    GrayImage img;
    img.h = s[0];
    img.w = s[1];
    img.v.resize(static_cast<size_t>(img.h * img.w));
    for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = quantize(plane.data[i]);
    save_pgm(path, img);
}

}  // namespace dpcqa
