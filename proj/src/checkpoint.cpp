#include "advst/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "advst/errors.hpp"

namespace advst {

namespace {

constexpr char kHeader[] = "ADVSTCKPT v1\n";
constexpr std::size_t kHeaderLen = sizeof(kHeader) - 1;

constexpr const char* kModelArrays[12] = {
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w",  "fc1_b",
    "fc2_w",   "fc2_b",   "cls_w",   "cls_b",   "proj_w", "proj_b"};

std::map<std::string, std::vector<std::size_t>> expected_shapes(std::size_t classes) {
    return {{"conv1_w", {64, 3, 5, 5}},   {"conv1_b", {64}},
            {"conv2_w", {128, 64, 5, 5}}, {"conv2_b", {128}},
            {"fc1_w", {3200, 1024}},      {"fc1_b", {1024}},
            {"fc2_w", {1024, 1024}},      {"fc2_b", {1024}},
            {"cls_w", {1024, classes}},   {"cls_b", {classes}},
            {"proj_w", {1024, 128}},      {"proj_b", {128}}};
}

void append_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

struct Cursor {
    const std::vector<unsigned char>& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (buf.size() - pos < n)
            throw FormatError("checkpoint: truncated reading " + std::string(what),
                              static_cast<long long>(pos));
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | buf[pos + i];
        pos += 8;
        return v;
    }
};

}  // namespace

void write_array_file(const std::string& path, const std::vector<NamedArray>& arrays) {
    std::vector<unsigned char> out;
    out.insert(out.end(), kHeader, kHeader + kHeaderLen);
    for (const auto& a : arrays) {
        std::size_t n = 1;
        for (const std::size_t d : a.shape) n *= d;
        if (a.name.empty() || a.name.size() > 64 || a.shape.empty() ||
            n != a.values.size())
            throw ContractError("write_array_file: malformed array '" + a.name + "'");
        append_u64(out, a.name.size());
        out.insert(out.end(), a.name.begin(), a.name.end());
        append_u64(out, a.shape.size());
        for (const std::size_t d : a.shape) append_u64(out, d);
        for (const float v : a.values) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            for (int k = 0; k < 4; ++k)
                out.push_back(static_cast<unsigned char>((bits >> (8 * k)) & 0xff));
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ContractError("write_array_file: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()),
            static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) throw ContractError("write_array_file: short write to " + path);
}

std::vector<NamedArray> read_array_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open " + path, 0);
    f.seekg(0, std::ios::end);
    const std::streamoff sz = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> buf(static_cast<std::size_t>(sz));
    f.read(reinterpret_cast<char*>(buf.data()), sz);
    if (!f) throw FormatError("checkpoint: read failure on " + path, 0);

    Cursor c{buf};
    c.need(kHeaderLen, "header");
    if (std::memcmp(buf.data(), kHeader, kHeaderLen) != 0)
        throw FormatError("checkpoint: bad header", 0);
    c.pos = kHeaderLen;

    std::vector<NamedArray> arrays;
    std::set<std::string> seen;
    while (c.pos < buf.size()) {
        const std::size_t rec_at = c.pos;
        const std::uint64_t name_len = c.u64("name length");
        if (name_len == 0 || name_len > 64)
            throw FormatError("checkpoint: implausible name length " +
                              std::to_string(name_len),
                              static_cast<long long>(rec_at));
        c.need(static_cast<std::size_t>(name_len), "name");
        std::string name(reinterpret_cast<const char*>(buf.data() + c.pos),
                         static_cast<std::size_t>(name_len));
        c.pos += static_cast<std::size_t>(name_len);
        if (!seen.insert(name).second)
            throw FormatError("checkpoint: duplicate array '" + name + "'",
                              static_cast<long long>(rec_at));
        const std::uint64_t rank = c.u64("rank");
        if (rank == 0 || rank > 8)
            throw FormatError("checkpoint: implausible rank " + std::to_string(rank) +
                                  " for '" + name + "'",
                              static_cast<long long>(rec_at));
        std::vector<std::size_t> shape(static_cast<std::size_t>(rank));
        std::uint64_t numel = 1;
        for (auto& d : shape) {
            const std::uint64_t e = c.u64("extent");
            if (e == 0 || e > (1ull << 24) || numel * e > (1ull << 28))
                throw FormatError("checkpoint: implausible extents for '" + name + "'",
                                  static_cast<long long>(rec_at));
            numel *= e;
            d = static_cast<std::size_t>(e);
        }
        c.need(static_cast<std::size_t>(4 * numel), "array data");
        std::vector<float> vals(static_cast<std::size_t>(numel));
        for (std::size_t i = 0; i < vals.size(); ++i) {
            std::uint32_t bits = 0;
            for (int k = 3; k >= 0; --k)
                bits = (bits << 8) | buf[c.pos + 4 * i + static_cast<std::size_t>(k)];
            vals[i] = std::bit_cast<float>(bits);
            if (!std::isfinite(vals[i]))
                throw FormatError("checkpoint: non-finite value in '" + name + "'",
                                  static_cast<long long>(c.pos + 4 * i));
        }
        c.pos += static_cast<std::size_t>(4 * numel);
        arrays.push_back({std::move(name), std::move(shape), std::move(vals),
                          static_cast<long long>(rec_at)});
    }
    return arrays;
}

template <class T>
void save_checkpoint(const std::string& path, const ModelParams<T>& m) {
    std::vector<NamedArray> arrays;
    for (const auto& [name, t] : m.named()) {
        if (!t.defined())
            throw ContractError("save_checkpoint: array '" + name + "' is undefined");
        NamedArray a;
        a.name = name;
        a.shape = t.shape();
        a.values.resize(t.numel());
        const T* p = t.data();
        for (std::size_t i = 0; i < a.values.size(); ++i)
            a.values[i] = static_cast<float>(p[i]);
        arrays.push_back(std::move(a));
    }
    write_array_file(path, arrays);
}

template <class T>
ModelParams<T> load_checkpoint(const std::string& path) {
    std::map<std::string, Tensor<T>> by_name;
    for (auto& a : read_array_file(path)) {
        bool known = false;
        for (const char* k : kModelArrays) known = known || a.name == k;
        if (!known)
            throw FormatError("checkpoint: unknown array '" + a.name + "'",
                              a.file_offset);
        std::vector<T> vals(a.values.size());
        for (std::size_t i = 0; i < vals.size(); ++i)
            vals[i] = static_cast<T>(a.values[i]);
        by_name.emplace(a.name,
                        Tensor<T>::from_values(std::move(a.shape), std::move(vals)));
    }

    for (const char* k : kModelArrays)
        if (!by_name.count(k))
            throw FormatError("checkpoint: missing array '" + std::string(k) + "'", 0);
    const Tensor<T>& cls_w = by_name.at("cls_w");
    if (cls_w.rank() != 2 || cls_w.dim(0) != 1024 || cls_w.dim(1) < 2)
        throw FormatError("checkpoint: array 'cls_w' has shape " +
                              shape_str(cls_w.shape()) +
                              ", expected [1024,C] with C >= 2",
                          0);
    const auto expected = expected_shapes(cls_w.dim(1));
    for (const auto& [name, t] : by_name)
        if (t.shape() != expected.at(name))
            throw FormatError("checkpoint: array '" + name + "' has shape " +
                                  shape_str(t.shape()) + ", expected " +
                                  shape_str(expected.at(name)),
                              0);

    ModelParams<T> m;
    m.conv1_w = by_name.at("conv1_w");
    m.conv1_b = by_name.at("conv1_b");
    m.conv2_w = by_name.at("conv2_w");
    m.conv2_b = by_name.at("conv2_b");
    m.fc1_w = by_name.at("fc1_w");
    m.fc1_b = by_name.at("fc1_b");
    m.fc2_w = by_name.at("fc2_w");
    m.fc2_b = by_name.at("fc2_b");
    m.cls_w = by_name.at("cls_w");
    m.cls_b = by_name.at("cls_b");
    m.proj_w = by_name.at("proj_w");
    m.proj_b = by_name.at("proj_b");
    return m;
}

#define ADVST_CHECKPOINT_INSTANTIATE(T)                                          \
    template void save_checkpoint<T>(const std::string&, const ModelParams<T>&); \
    template ModelParams<T> load_checkpoint<T>(const std::string&);

ADVST_CHECKPOINT_INSTANTIATE(float)
ADVST_CHECKPOINT_INSTANTIATE(double)

#undef ADVST_CHECKPOINT_INSTANTIATE

}  // namespace advst
