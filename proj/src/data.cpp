#include "advst/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "advst/checkpoint.hpp"
#include "advst/errors.hpp"

namespace advst {

namespace {

constexpr std::size_t kSide = 32;
constexpr std::size_t kPixels = 3 * kSide * kSide;

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("idx: cannot open " + path, 0);
    f.seekg(0, std::ios::end);
    const std::streamoff sz = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> buf(static_cast<std::size_t>(sz));
    f.read(reinterpret_cast<char*>(buf.data()), sz);
    if (!f) throw FormatError("idx: read failure on " + path, 0);
    return buf;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t pos,
                   const std::string& path) {
    if (pos + 4 > b.size())
        throw FormatError("idx: truncated header in " + path,
                          static_cast<long long>(pos));
    return (std::uint32_t(b[pos]) << 24) | (std::uint32_t(b[pos + 1]) << 16) |
           (std::uint32_t(b[pos + 2]) << 8) | std::uint32_t(b[pos + 3]);
}

struct IdxFile {
    std::vector<std::size_t> dims;
    std::vector<unsigned char> payload;
};

IdxFile parse_idx(const std::string& path, std::uint32_t expected_magic) {
    const auto buf = read_file(path);
    const std::uint32_t magic = be32(buf, 0, path);
    if (magic != expected_magic) {
        std::ostringstream os;
        os << "idx: bad magic 0x" << std::hex << magic << " in " << path
           << ", expected 0x" << expected_magic;
        throw FormatError(os.str(), 0);
    }
    const std::size_t ndims = magic & 0xffu;
    IdxFile out;
    std::size_t numel = 1;
    for (std::size_t i = 0; i < ndims; ++i) {
        const std::uint32_t d = be32(buf, 4 + 4 * i, path);
        out.dims.push_back(d);
        numel *= d;
        if (d > (1u << 28) || numel > (1ull << 33))
            throw FormatError("idx: implausible dimension " + std::to_string(d) +
                                  " in " + path,
                              static_cast<long long>(4 + 4 * i));
    }
    const std::size_t data_at = 4 + 4 * ndims;
    if (buf.size() - data_at < numel)
        throw FormatError("idx: truncated payload in " + path,
                          static_cast<long long>(buf.size()));
    if (buf.size() - data_at > numel)
        throw FormatError("idx: trailing bytes in " + path,
                          static_cast<long long>(data_at + numel));
    out.payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(data_at), buf.end());
    return out;
}

void finish_labels(Dataset& d) {
    std::size_t top = 0;
    for (const std::size_t y : d.labels) top = std::max(top, y + 1);
    d.classes = top;
}

// Standard hue-saturation-value to RGB, h in [0,1).
void hsv_rgb(double h, double s, double v, double rgb[3]) {
    const double h6 = h * 6.0;
    const int k = std::min(5, static_cast<int>(h6));
    const double f = h6 - k;
    const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
    switch (k) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

void apply_shift(float* img, const ShiftOp& op) {
    const auto at = [&](std::size_t c, std::size_t y, std::size_t x) -> float& {
        return img[(c * kSide + y) * kSide + x];
    };
    switch (op.kind) {
        case ShiftOp::Kind::Invert: {
            for (std::size_t i = 0; i < kPixels; ++i) img[i] = 1.0f - img[i];
            break;
        }
        case ShiftOp::Kind::Translate: {
            const long long sx = std::llround(op.a * static_cast<double>(kSide));
            const long long sy = std::llround(op.b * static_cast<double>(kSide));
            float src[kPixels];
            std::copy(img, img + kPixels, src);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < kSide; ++y)
                    for (std::size_t x = 0; x < kSide; ++x) {
                        const long long yy = static_cast<long long>(y) - sy;
                        const long long xx = static_cast<long long>(x) - sx;
                        const bool in = yy >= 0 && yy < (long long)kSide && xx >= 0 &&
                                        xx < (long long)kSide;
                        at(c, y, x) = in ? src[(c * kSide + (std::size_t)yy) * kSide +
                                               (std::size_t)xx]
                                         : 0.0f;
                    }
            break;
        }
        case ShiftOp::Kind::Scale: {
            const double ctr = (static_cast<double>(kSide) - 1.0) / 2.0;
            float src[kPixels];
            std::copy(img, img + kPixels, src);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < kSide; ++y)
                    for (std::size_t x = 0; x < kSide; ++x) {
                        const double sx = ctr + (static_cast<double>(x) - ctr) / op.a;
                        const double sy = ctr + (static_cast<double>(y) - ctr) / op.a;
                        const double fx = std::floor(sx), fy = std::floor(sy);
                        const double wx = sx - fx, wy = sy - fy;
                        double acc = 0.0;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const long long px = (long long)fx + dx;
                                const long long py = (long long)fy + dy;
                                if (px < 0 || px >= (long long)kSide || py < 0 ||
                                    py >= (long long)kSide)
                                    continue;
                                const double w = (dx ? wx : 1.0 - wx) *
                                                 (dy ? wy : 1.0 - wy);
                                acc += w * src[(c * kSide + (std::size_t)py) * kSide +
                                               (std::size_t)px];
                            }
                        at(c, y, x) = static_cast<float>(acc);
                    }
            break;
        }
        case ShiftOp::Kind::Colorize: {
            double bg[3], fg[3];
            hsv_rgb(op.a, 0.75, 0.45, bg);
            hsv_rgb(op.b, 0.75, 0.95, fg);
            for (std::size_t y = 0; y < kSide; ++y)
                for (std::size_t x = 0; x < kSide; ++x) {
                    const double g = (at(0, y, x) + at(1, y, x) + at(2, y, x)) / 3.0;
                    for (std::size_t c = 0; c < 3; ++c)
                        at(c, y, x) =
                            static_cast<float>((1.0 - g) * bg[c] + g * fg[c]);
                }
            break;
        }
        case ShiftOp::Kind::Contrast: {
            double mean = 0.0;
            for (std::size_t i = 0; i < kPixels; ++i) mean += img[i];
            mean /= static_cast<double>(kPixels);
            for (std::size_t i = 0; i < kPixels; ++i) {
                const double v = (img[i] - mean) * op.a + mean;
                img[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
            break;
        }
    }
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t limit) {
    const IdxFile imgs = parse_idx(images_path, 0x00000803u);
    const IdxFile lbls = parse_idx(labels_path, 0x00000801u);
    const std::size_t rows = imgs.dims[1], cols = imgs.dims[2];
    if (!((rows == 28 && cols == 28) || (rows == 32 && cols == 32)))
        throw FormatError("idx: unsupported image size " + std::to_string(rows) + "x" +
                              std::to_string(cols) + " in " + images_path,
                          4);
    if (imgs.dims[0] != lbls.dims[0])
        throw FormatError("idx: " + std::to_string(imgs.dims[0]) + " images but " +
                              std::to_string(lbls.dims[0]) + " labels",
                          4);

    const std::size_t n = std::min(limit, imgs.dims[0]);
    const std::size_t pad = (kSide - rows) / 2;
    Dataset d;
    d.name = std::filesystem::path(images_path).stem().string();
    d.images = Tensor<float>::zeros({n, 3, kSide, kSide});
    d.labels.resize(n);
    float* out = d.images.data();
    for (std::size_t i = 0; i < n; ++i) {
        d.labels[i] = lbls.payload[i];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const float v =
                    static_cast<float>(imgs.payload[(i * rows + r) * cols + c]) /
                    255.0f;
                for (std::size_t ch = 0; ch < 3; ++ch)
                    out[((i * 3 + ch) * kSide + r + pad) * kSide + c + pad] = v;
            }
    }
    finish_labels(d);
    return d;
}

Dataset load_raw_dataset(const std::string& path, std::size_t limit) {
    NamedArray images, labels;
    for (auto& a : read_array_file(path)) {
        if (a.name == "images")
            images = std::move(a);
        else if (a.name == "labels")
            labels = std::move(a);
        else
            throw FormatError("dataset: unknown array '" + a.name + "'",
                              a.file_offset);
    }
    if (images.name.empty() || labels.name.empty())
        throw FormatError("dataset: need both 'images' and 'labels' arrays", 0);
    if (images.shape.size() != 4 || images.shape[1] != 3 ||
        images.shape[2] != kSide || images.shape[3] != kSide)
        throw FormatError("dataset: images must be [N,3,32,32], got " +
                              shape_str(images.shape),
                          images.file_offset);
    if (labels.shape.size() != 1 || labels.shape[0] != images.shape[0])
        throw FormatError("dataset: labels must be [N] matching the images",
                          labels.file_offset);

    const std::size_t n = std::min(limit, images.shape[0]);
    Dataset d;
    d.name = std::filesystem::path(path).stem().string();
    d.images = Tensor<float>::zeros({n, 3, kSide, kSide});
    std::copy(images.values.begin(),
              images.values.begin() + static_cast<std::ptrdiff_t>(n * kPixels),
              d.images.data());
    for (const float v : d.images.values())
        if (!(v >= 0.0f && v <= 1.0f))
            throw FormatError("dataset: image values must lie in [0,1]",
                              images.file_offset);
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float y = labels.values[i];
        if (y < 0.0f || y != std::floor(y) || y > (1 << 20))
            throw FormatError("dataset: label " + std::to_string(y) +
                                  " is not a small nonnegative integer",
                              labels.file_offset);
        d.labels[i] = static_cast<std::size_t>(y);
    }
    finish_labels(d);
    return d;
}

void save_raw_dataset(const std::string& path, const Dataset& d) {
    if (d.size() == 0) throw ContractError("save_raw_dataset: empty dataset");
    if (!d.images.defined() || d.images.dim(0) != d.size())
        throw ContractError("save_raw_dataset: images/labels length mismatch");
    NamedArray images{"images", d.images.shape(), d.images.values(), 0};
    NamedArray labels{"labels", {d.size()}, {}, 0};
    labels.values.reserve(d.size());
    for (const std::size_t y : d.labels)
        labels.values.push_back(static_cast<float>(y));
    write_array_file(path, {images, labels});
}

Dataset synth_digits(std::size_t n_per_class, Rng& rng) {
    if (n_per_class < 1) throw ContractError("synth_digits: need n >= 1 per class");

    // Seven-segment templates, segments ordered A(top), B(upper right),
    // C(lower right), D(bottom), E(lower left), F(upper left), G(middle).
    const double x0 = 11.5, x1 = 20.5, y0 = 8.5, y1 = 16.0, y2 = 23.5;
    const double ends[7][4] = {{x0, y0, x1, y0}, {x1, y0, x1, y1}, {x1, y1, x1, y2},
                               {x0, y2, x1, y2}, {x0, y1, x0, y2}, {x0, y0, x0, y1},
                               {x0, y1, x1, y1}};
    const bool seg[10][7] = {
        {1, 1, 1, 1, 1, 1, 0},  // 0
        {0, 1, 1, 0, 0, 0, 0},  // 1
        {1, 1, 0, 1, 1, 0, 1},  // 2
        {1, 1, 1, 1, 0, 0, 1},  // 3
        {0, 1, 1, 0, 0, 1, 1},  // 4
        {1, 0, 1, 1, 0, 1, 1},  // 5
        {1, 0, 1, 1, 1, 1, 1},  // 6
        {1, 1, 1, 0, 0, 0, 0},  // 7
        {1, 1, 1, 1, 1, 1, 1},  // 8
        {1, 1, 1, 1, 0, 1, 1},  // 9
    };

    Dataset d;
    d.name = "synth";
    d.images = Tensor<float>::zeros({n_per_class * 10, 3, kSide, kSide});
    d.labels.resize(n_per_class * 10);
    float* out = d.images.data();

    std::size_t idx = 0;
    for (std::size_t cls = 0; cls < 10; ++cls)
        for (std::size_t rep = 0; rep < n_per_class; ++rep, ++idx) {
            d.labels[idx] = cls;

            // Per-sample jitter; the draw count is fixed so the stream stays
            // aligned regardless of which segments a digit uses.
            const double dx = rng.uniform(-2.5, 2.5), dy = rng.uniform(-2.5, 2.5);
            const double sc = rng.uniform(0.85, 1.15);
            const double rot = rng.uniform(-0.12, 0.12);
            const double shear = rng.uniform(-0.1, 0.1);
            const double width = rng.uniform(0.75, 1.15);
            const double bright = rng.uniform(0.7, 1.0);
            double pts[7][4];
            const double cr = std::cos(rot), sr = std::sin(rot);
            for (int s = 0; s < 7; ++s)
                for (int e = 0; e < 2; ++e) {
                    const double jx = rng.uniform(-0.5, 0.5);
                    const double jy = rng.uniform(-0.5, 0.5);
                    const double px = ends[s][2 * e] - 16.0;
                    const double py = ends[s][2 * e + 1] - 16.0;
                    const double hx = px + shear * py;  // shear, then rotate+scale
                    const double qx = sc * (cr * hx - sr * py);
                    const double qy = sc * (sr * hx + cr * py);
                    pts[s][2 * e] = qx + 16.0 + dx + jx;
                    pts[s][2 * e + 1] = qy + 16.0 + dy + jy;
                }

            float* plane = out + idx * kPixels;
            for (std::size_t y = 0; y < kSide; ++y)
                for (std::size_t x = 0; x < kSide; ++x) {
                    const double px = static_cast<double>(x) + 0.5;
                    const double py = static_cast<double>(y) + 0.5;
                    double dist = 1e9;
                    for (int s = 0; s < 7; ++s) {
                        if (!seg[cls][s]) continue;
                        const double ax = pts[s][0], ay = pts[s][1];
                        const double bx = pts[s][2], by = pts[s][3];
                        const double ux = bx - ax, uy = by - ay;
                        const double len2 = ux * ux + uy * uy;
                        const double t = std::clamp(
                            ((px - ax) * ux + (py - ay) * uy) / len2, 0.0, 1.0);
                        const double ex = px - (ax + t * ux), ey = py - (ay + t * uy);
                        dist = std::min(dist, std::sqrt(ex * ex + ey * ey));
                    }
                    const double ink =
                        bright * std::clamp(width * sc + 0.5 - dist, 0.0, 1.0);
                    const double noise = rng.uniform(-0.015, 0.015);
                    const float v = static_cast<float>(
                        std::clamp(ink + noise, 0.0, 1.0));
                    plane[y * kSide + x] = v;
                    plane[kSide * kSide + y * kSide + x] = v;
                    plane[2 * kSide * kSide + y * kSide + x] = v;
                }
        }
    d.classes = 10;
    return d;
}

ShiftSpec parse_shift_spec(const std::string& text) {
    ShiftSpec spec;
    std::string trimmed;
    for (const char ch : text)
        if (!std::isspace(static_cast<unsigned char>(ch))) trimmed += ch;
    if (trimmed.empty()) return spec;

    std::stringstream ss(trimmed);
    std::string tok;
    while (std::getline(ss, tok, '+')) {
        std::vector<std::string> parts;
        std::stringstream ts(tok);
        std::string p;
        while (std::getline(ts, p, ':')) parts.push_back(p);
        if (parts.empty()) throw ContractError("shift spec: empty operator in '" + text + "'");

        const auto arg = [&](std::size_t i) {
            try {
                std::size_t used = 0;
                const double v = std::stod(parts.at(i), &used);
                if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
                return v;
            } catch (const std::exception&) {
                throw ContractError("shift spec: bad number '" + parts[i] + "' in '" +
                                    tok + "'");
            }
        };
        const auto arity = [&](std::size_t n) {
            if (parts.size() != n + 1)
                throw ContractError("shift spec: '" + parts[0] + "' takes " +
                                    std::to_string(n) + " arguments, got " +
                                    std::to_string(parts.size() - 1));
        };

        ShiftOp op{};
        if (parts[0] == "invert") {
            arity(0);
            op.kind = ShiftOp::Kind::Invert;
        } else if (parts[0] == "translate") {
            arity(2);
            op.kind = ShiftOp::Kind::Translate;
            op.a = arg(1);
            op.b = arg(2);
            if (std::abs(op.a) > 0.3 || std::abs(op.b) > 0.3)
                throw ContractError("shift spec: translate magnitudes must lie in "
                                    "[-0.3,0.3]");
        } else if (parts[0] == "scale") {
            arity(1);
            op.kind = ShiftOp::Kind::Scale;
            op.a = arg(1);
            if (op.a < 0.5 || op.a > 2.0)
                throw ContractError("shift spec: scale must lie in [0.5,2]");
        } else if (parts[0] == "colorize") {
            arity(2);
            op.kind = ShiftOp::Kind::Colorize;
            op.a = arg(1);
            op.b = arg(2);
            if (op.a < 0.0 || op.a >= 1.0 || op.b < 0.0 || op.b >= 1.0)
                throw ContractError("shift spec: hues must lie in [0,1)");
        } else if (parts[0] == "contrast") {
            arity(1);
            op.kind = ShiftOp::Kind::Contrast;
            op.a = arg(1);
            if (op.a < 0.25 || op.a > 4.0)
                throw ContractError("shift spec: contrast must lie in [0.25,4]");
        } else {
            throw ContractError("shift spec: unknown operator '" + parts[0] + "'");
        }
        spec.ops.push_back(op);
    }
    return spec;
}

std::string shift_spec_str(const ShiftSpec& spec) {
    std::ostringstream os;
    bool first = true;
    for (const ShiftOp& op : spec.ops) {
        if (!first) os << '+';
        first = false;
        switch (op.kind) {
            case ShiftOp::Kind::Invert: os << "invert"; break;
            case ShiftOp::Kind::Translate: os << "translate:" << op.a << ':' << op.b; break;
            case ShiftOp::Kind::Scale: os << "scale:" << op.a; break;
            case ShiftOp::Kind::Colorize: os << "colorize:" << op.a << ':' << op.b; break;
            case ShiftOp::Kind::Contrast: os << "contrast:" << op.a; break;
        }
    }
    return os.str();
}

Dataset make_target_domain(const Dataset& src, const ShiftSpec& spec,
                           const std::string& name) {
    if (!src.images.defined() || src.images.dim(0) != src.size())
        throw ContractError("make_target_domain: malformed source dataset");
    Dataset d;
    d.name = name;
    d.labels = src.labels;
    d.classes = src.classes;
    d.images = Tensor<float>::from_values(src.images.shape(), src.images.values());
    float* out = d.images.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        for (const ShiftOp& op : spec.ops) apply_shift(out + i * kPixels, op);
    return d;
}

Tensor<float> images_at(const Dataset& d, const std::vector<std::size_t>& idx) {
    Tensor<float> out = Tensor<float>::zeros({idx.size(), 3, kSide, kSide});
    const float* src = d.images.data();
    float* dst = out.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= d.size())
            throw ContractError("images_at: index " + std::to_string(idx[i]) +
                                " out of range " + std::to_string(d.size()));
        std::copy(src + idx[i] * kPixels, src + (idx[i] + 1) * kPixels,
                  dst + i * kPixels);
    }
    return out;
}

std::vector<std::size_t> labels_at(const Dataset& d,
                                   const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (const std::size_t i : idx) {
        if (i >= d.size())
            throw ContractError("labels_at: index " + std::to_string(i) +
                                " out of range " + std::to_string(d.size()));
        out.push_back(d.labels[i]);
    }
    return out;
}

}  // namespace advst
