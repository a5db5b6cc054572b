#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "advst/rng.hpp"
#include "advst/tensor.hpp"

// Dataset ingestion and synthetic target-domain construction. Images are
// [N,3,32,32] float tensors in [0,1]; labels are integers in [0,classes).
// Sources: IDX digit files (28x28 grayscale zero-padded to 32x32, or native
// 32x32), raw tensor dumps in the checkpoint record encoding, and a
// procedural seven-segment digit renderer for download-free runs.

namespace advst {

struct Dataset {
    Tensor<float> images;             // [N,3,32,32] in [0,1]
    std::vector<std::size_t> labels;  // [N], values in [0,classes)
    std::size_t classes = 0;          // 1 + max label (0 when empty)
    std::string name;

    std::size_t size() const { return labels.size(); }
};

// IDX pair loader (magic 0x00000803 for images, 0x00000801 for labels,
// big-endian dimensions, one byte per value). Takes at most `limit` records
// in file order. Malformed or truncated input raises FormatError with the
// failing byte offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t limit = static_cast<std::size_t>(-1));

// Raw tensor dump: an array file holding "images" [N,3,32,32] and "labels"
// [N] (float-encoded integers).
Dataset load_raw_dataset(const std::string& path,
                         std::size_t limit = static_cast<std::size_t>(-1));
void save_raw_dataset(const std::string& path, const Dataset& d);

// Procedurally rendered seven-segment digits, n per class, class-balanced
// and deterministic per rng state. Strokes get small random affine and
// endpoint jitter plus pixel noise so classes overlap like handwriting.
Dataset synth_digits(std::size_t n_per_class, Rng& rng);

// Deterministic value-level domain shifts, applied image by image. Operator
// magnitudes live in the same intervals as the corresponding learnable
// transforms.
struct ShiftOp {
    enum class Kind { Invert, Translate, Scale, Colorize, Contrast };
    Kind kind;
    double a = 0.0;  // dx | s | background hue | c
    double b = 0.0;  // dy | foreground hue
};

struct ShiftSpec {
    std::vector<ShiftOp> ops;
};

// Text form: '+'-separated ops with ':'-separated arguments, e.g.
// "invert+translate:0.15:0" or "colorize:0.1:0.6". Unknown names, wrong
// arity, or out-of-interval magnitudes raise ContractError.
ShiftSpec parse_shift_spec(const std::string& text);
std::string shift_spec_str(const ShiftSpec& spec);

// Applies the shifts to every image; labels and size never change.
Dataset make_target_domain(const Dataset& src, const ShiftSpec& spec,
                           const std::string& name);

// Batch assembly: copies of the selected samples, in index order.
Tensor<float> images_at(const Dataset& d, const std::vector<std::size_t>& idx);
std::vector<std::size_t> labels_at(const Dataset& d,
                                   const std::vector<std::size_t>& idx);

}  // namespace advst
