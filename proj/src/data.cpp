#include "capsdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "capsdet/errors.hpp"
#include "capsdet/rng.hpp"

namespace capsdet {

namespace {

std::vector<uint8_t> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

uint32_t read_u32be(const std::vector<uint8_t>& b, size_t off) {
    return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
           (static_cast<uint32_t>(b[off + 2]) << 8) | static_cast<uint32_t>(b[off + 3]);
}

uint32_t read_u32le(const std::vector<uint8_t>& b, size_t off) {
    return static_cast<uint32_t>(b[off]) | (static_cast<uint32_t>(b[off + 1]) << 8) |
           (static_cast<uint32_t>(b[off + 2]) << 16) | (static_cast<uint32_t>(b[off + 3]) << 24);
}

int infer_classes(const std::vector<int>& labels) {
    int hi = 0;
    for (int l : labels) hi = std::max(hi, l);
    return hi + 1;
}

// One glyph per digit as straight stroke segments on the unit square
// (x right, y down).
struct Seg {
    double x0, y0, x1, y1;
};

const std::vector<Seg>& digit_strokes(int d) {
    static const std::vector<std::vector<Seg>> glyphs = {
        // 0
        {{0.33, 0.25, 0.5, 0.18}, {0.5, 0.18, 0.67, 0.25}, {0.67, 0.25, 0.70, 0.5},
         {0.70, 0.5, 0.67, 0.75}, {0.67, 0.75, 0.5, 0.82}, {0.5, 0.82, 0.33, 0.75},
         {0.33, 0.75, 0.30, 0.5}, {0.30, 0.5, 0.33, 0.25}},
        // 1
        {{0.42, 0.30, 0.54, 0.20}, {0.54, 0.20, 0.54, 0.80}},
        // 2
        {{0.32, 0.32, 0.45, 0.20}, {0.45, 0.20, 0.62, 0.22}, {0.62, 0.22, 0.68, 0.38},
         {0.68, 0.38, 0.30, 0.78}, {0.30, 0.78, 0.70, 0.78}},
        // 3
        {{0.32, 0.24, 0.60, 0.20}, {0.60, 0.20, 0.68, 0.33}, {0.68, 0.33, 0.50, 0.48},
         {0.50, 0.48, 0.68, 0.62}, {0.68, 0.62, 0.62, 0.78}, {0.62, 0.78, 0.32, 0.76}},
        // 4
        {{0.62, 0.80, 0.62, 0.20}, {0.62, 0.20, 0.30, 0.58}, {0.30, 0.58, 0.74, 0.58}},
        // 5
        {{0.66, 0.20, 0.36, 0.20}, {0.36, 0.20, 0.34, 0.46}, {0.34, 0.46, 0.58, 0.44},
         {0.58, 0.44, 0.68, 0.56}, {0.68, 0.56, 0.64, 0.74}, {0.64, 0.74, 0.32, 0.78}},
        // 6
        {{0.62, 0.18, 0.42, 0.34}, {0.42, 0.34, 0.33, 0.56}, {0.33, 0.56, 0.36, 0.74},
         {0.36, 0.74, 0.52, 0.80}, {0.52, 0.80, 0.66, 0.70}, {0.66, 0.70, 0.62, 0.54},
         {0.62, 0.54, 0.44, 0.52}, {0.44, 0.52, 0.33, 0.60}},
        // 7
        {{0.30, 0.20, 0.70, 0.20}, {0.70, 0.20, 0.44, 0.80}},
        // 8
        {{0.5, 0.20, 0.64, 0.29}, {0.64, 0.29, 0.5, 0.45}, {0.5, 0.45, 0.36, 0.29},
         {0.36, 0.29, 0.5, 0.20}, {0.5, 0.45, 0.68, 0.60}, {0.68, 0.60, 0.5, 0.80},
         {0.5, 0.80, 0.32, 0.60}, {0.32, 0.60, 0.5, 0.45}},
        // 9
        {{0.64, 0.32, 0.50, 0.20}, {0.50, 0.20, 0.36, 0.30}, {0.36, 0.30, 0.38, 0.44},
         {0.38, 0.44, 0.56, 0.48}, {0.56, 0.48, 0.64, 0.32}, {0.64, 0.32, 0.60, 0.80}},
    };
    return glyphs[static_cast<size_t>(d)];
}

double point_segment_dist(double px, double py, const Seg& s) {
    double vx = s.x1 - s.x0;
    double vy = s.y1 - s.y0;
    double wx = px - s.x0;
    double wy = py - s.y0;
    double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
    double dx = wx - t * vx;
    double dy = wy - t * vy;
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::vector<uint8_t> ib = read_all(images_path);
    std::vector<uint8_t> lb = read_all(labels_path);
    if (ib.size() < 16) throw FormatError("idx images: truncated header");
    if (lb.size() < 8) throw FormatError("idx labels: truncated header");
    if (read_u32be(ib, 0) != 0x00000803u) throw FormatError("idx images: bad magic");
    if (read_u32be(lb, 0) != 0x00000801u) throw FormatError("idx labels: bad magic");

    uint32_t n = read_u32be(ib, 4);
    uint32_t h = read_u32be(ib, 8);
    uint32_t w = read_u32be(ib, 12);
    uint32_t ln = read_u32be(lb, 4);
    if (ln != n) throw FormatError("idx: image/label count mismatch");
    uint64_t want = 16ull + static_cast<uint64_t>(n) * h * w;
    if (ib.size() != want) throw FormatError("idx images: size mismatch");
    if (lb.size() != 8ull + n) throw FormatError("idx labels: size mismatch");

    Dataset ds;
    ds.images = Tensor({static_cast<int>(n), static_cast<int>(h), static_cast<int>(w), 1});
    for (int64_t i = 0; i < ds.images.size(); ++i)
        ds.images[i] = ib[16 + static_cast<size_t>(i)] / 255.0;
    ds.labels.resize(n);
    for (uint32_t i = 0; i < n; ++i) ds.labels[i] = lb[8 + i];
    ds.classes = infer_classes(ds.labels);
    ds.split = images_path;
    return ds;
}

Dataset load_cifar_binary(const std::vector<std::string>& batch_paths) {
    if (batch_paths.empty()) throw ContractError("load_cifar_binary: no batch files");
    const int64_t rec = 3073;
    const int side = 32;
    std::vector<uint8_t> all;
    for (const std::string& p : batch_paths) {
        std::vector<uint8_t> b = read_all(p);
        if (b.empty() || b.size() % rec != 0)
            throw FormatError("cifar batch " + p + ": length not a multiple of 3073");
        all.insert(all.end(), b.begin(), b.end());
    }
    int64_t n = static_cast<int64_t>(all.size()) / rec;
    Dataset ds;
    ds.images = Tensor({static_cast<int>(n), side, side, 3});
    ds.labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const uint8_t* r = all.data() + i * rec;
        ds.labels[static_cast<size_t>(i)] = r[0];
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                for (int c = 0; c < 3; ++c)
                    ds.images[((i * side + y) * side + x) * 3 + c] =
                        r[1 + c * 1024 + y * side + x] / 255.0;
    }
    ds.classes = infer_classes(ds.labels);
    ds.split = batch_paths.front();
    return ds;
}

Dataset load_u8_container(const std::string& path) {
    std::vector<uint8_t> b = read_all(path);
    if (b.size() < 24) throw FormatError("container: truncated header");
    if (std::memcmp(b.data(), "CAPSDAT1", 8) != 0) throw FormatError("container: bad magic");
    uint32_t n = read_u32le(b, 8);
    uint32_t h = read_u32le(b, 12);
    uint32_t w = read_u32le(b, 16);
    uint32_t c = read_u32le(b, 20);
    uint64_t pix = static_cast<uint64_t>(n) * h * w * c;
    if (b.size() != 24ull + n + pix) throw FormatError("container: length mismatch");

    Dataset ds;
    ds.images = Tensor({static_cast<int>(n), static_cast<int>(h), static_cast<int>(w),
                        static_cast<int>(c)});
    ds.labels.resize(n);
    for (uint32_t i = 0; i < n; ++i) ds.labels[i] = b[24 + i];
    for (int64_t i = 0; i < ds.images.size(); ++i)
        ds.images[i] = b[24 + n + static_cast<size_t>(i)] / 255.0;
    ds.classes = infer_classes(ds.labels);
    ds.split = path;
    return ds;
}

void save_u8_container(const Dataset& ds, const std::string& path) {
    const Shape& s = ds.images.shape();
    if (s.size() != 4) throw ShapeError("save_u8_container: images must be [n,h,w,c]");
    if (static_cast<size_t>(s[0]) != ds.labels.size())
        throw ContractError("save_u8_container: one label per image");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write("CAPSDAT1", 8);
    uint32_t hdr[4] = {static_cast<uint32_t>(s[0]), static_cast<uint32_t>(s[1]),
                       static_cast<uint32_t>(s[2]), static_cast<uint32_t>(s[3])};
    for (uint32_t v : hdr) {
        uint8_t le[4] = {static_cast<uint8_t>(v & 0xff), static_cast<uint8_t>((v >> 8) & 0xff),
                         static_cast<uint8_t>((v >> 16) & 0xff),
                         static_cast<uint8_t>((v >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(le), 4);
    }
    for (int l : ds.labels) {
        if (l < 0 || l > 255) throw ContractError("save_u8_container: label outside u8 range");
        uint8_t b = static_cast<uint8_t>(l);
        out.write(reinterpret_cast<const char*>(&b), 1);
    }
    for (int64_t i = 0; i < ds.images.size(); ++i) {
        int v = static_cast<int>(std::lround(ds.images[i] * 255.0));
        uint8_t b = static_cast<uint8_t>(std::clamp(v, 0, 255));
        out.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!out) throw IoError("cannot write " + path);
}

Dataset make_stroke_digits(int n, int side, int classes, uint64_t seed,
                           const std::string& split) {
    if (n < 1 || side < 8) throw ContractError("make_stroke_digits: need n >= 1 and side >= 8");
    if (classes < 2 || classes > 10)
        throw ContractError("make_stroke_digits: classes must be in [2,10]");

    Rng root = Rng::from_seed(seed).split("stroke-digits");
    Dataset ds;
    ds.images = Tensor({n, side, side, 1});
    ds.labels.resize(static_cast<size_t>(n));
    ds.classes = classes;
    ds.split = split;

    for (int i = 0; i < n; ++i) {
        int label = i % classes;
        ds.labels[static_cast<size_t>(i)] = label;
        Rng r = root.split(static_cast<uint64_t>(i));

        double angle = r.uniform(-0.18, 0.18);
        double scale = r.uniform(0.82, 1.1);
        double tx = r.uniform(-0.07, 0.07);
        double ty = r.uniform(-0.07, 0.07);
        double thick = r.uniform(0.05, 0.075);
        double bright = r.uniform(0.85, 1.0);
        double ca = std::cos(angle);
        double sa = std::sin(angle);

        std::vector<Seg> segs = digit_strokes(label);
        for (Seg& s : segs) {
            double x0 = s.x0 - 0.5, y0 = s.y0 - 0.5, x1 = s.x1 - 0.5, y1 = s.y1 - 0.5;
            s.x0 = 0.5 + tx + scale * (ca * x0 - sa * y0);
            s.y0 = 0.5 + ty + scale * (sa * x0 + ca * y0);
            s.x1 = 0.5 + tx + scale * (ca * x1 - sa * y1);
            s.y1 = 0.5 + ty + scale * (sa * x1 + ca * y1);
        }

        int64_t base = static_cast<int64_t>(i) * side * side;
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                double px = (x + 0.5) / side;
                double py = (y + 0.5) / side;
                double d = 1e9;
                for (const Seg& s : segs) d = std::min(d, point_segment_dist(px, py, s));
                double rel = d / thick;
                double v = rel < 1.0 ? bright * (1.0 - rel * rel) : 0.0;
                v += r.normal(0.0, 0.02);
                v = std::clamp(v, 0.0, 1.0);
                // quantize to the u8 grid like a real dataset
                ds.images[base + y * side + x] = std::lround(v * 255.0) / 255.0;
            }
        }
    }
    return ds;
}

Dataset slice_dataset(const Dataset& ds, int start, int count) {
    int n = ds.size();
    if (start < 0 || count < 1 || start + count > n)
        throw ContractError("slice_dataset: range outside dataset");
    const Shape& s = ds.images.shape();
    Dataset out;
    out.images = Tensor({count, s[1], s[2], s[3]});
    int64_t block = static_cast<int64_t>(s[1]) * s[2] * s[3];
    std::memcpy(out.images.data(), ds.images.data() + start * block,
                static_cast<size_t>(count * block) * sizeof(double));
    out.labels.assign(ds.labels.begin() + start, ds.labels.begin() + start + count);
    out.classes = ds.classes;
    out.split = ds.split;
    return out;
}

}  // namespace capsdet
