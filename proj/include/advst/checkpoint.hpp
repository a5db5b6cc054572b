#pragma once

#include <string>

#include "advst/model.hpp"

// Binary model checkpoints. Layout: the header line "ADVSTCKPT v1\n", then
// one record per parameter array in the ModelParams::named() order — u64
// little-endian name length, the UTF-8 name, u64 rank, u64 extents, then the
// raw float32 little-endian payload. The loader accepts records in any order
// but requires exactly the twelve known arrays with their exact shapes, and
// reports malformed input as FormatError with the byte offset.

namespace advst {

// One serialized array record. `file_offset` is where the record started,
// for error reporting by higher-level validators.
struct NamedArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;
    long long file_offset = 0;
};

// Record-level IO shared by model checkpoints and raw dataset dumps.
// Readers reject duplicate names, implausible sizes, non-finite payloads,
// and truncation, always with the failing byte offset.
void write_array_file(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_array_file(const std::string& path);

template <class T>
void save_checkpoint(const std::string& path, const ModelParams<T>& m);

template <class T>
ModelParams<T> load_checkpoint(const std::string& path);

}  // namespace advst
