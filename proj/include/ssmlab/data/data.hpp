#pragma once
// Dataset ingestion: IDX files (big-endian magic 0x803 images / 0x801
// labels), image-to-sequence reshaping with optional average-pool
// downsampling, a synthetic linearly-separable generator for exact sanity
// checks, and a deterministic procedural digit renderer that writes
// MNIST-geometry IDX files for offline runs.

#include <cstdint>
#include <string>
#include <vector>

#include "ssmlab/adv/adversarial.hpp"
#include "ssmlab/tensor.hpp"

namespace ssmlab::data {

struct Images {
  std::int64_t count = 0, rows = 0, cols = 0;
  std::vector<double> pixels;  // [count, rows, cols] scaled to [0,1]
};

// Throws std::runtime_error with the byte offset on bad magic/truncation.
Images load_idx_images(const std::string& path);
std::vector<std::int64_t> load_idx_labels(const std::string& path);
// Cross-checks image/label counts.
adv::Dataset load_idx(const std::string& images_path, const std::string& labels_path);

void save_idx_images(const std::string& path, const Images& imgs);  // quantizes to bytes
void save_idx_labels(const std::string& path, const std::vector<std::int64_t>& labels);

// k x k average pooling (k >= 1; dimensions must divide evenly).
Images avg_pool(const Images& imgs, std::int64_t k);

// Row-major flatten to [N, L, c]; requires L*c == rows*cols.
ad::Tensor to_sequence(const Images& imgs, std::int64_t L, std::int64_t c);

struct SyntheticSpec {
  std::int64_t count = 256;
  std::int64_t seq_len = 32;
  std::int64_t channels = 1;
  std::int64_t classes = 3;
  double margin = 0.05;  // resample inputs near the class thresholds
};

// Class = bucket of a fixed linear functional of the sequence, with a margin
// so a linear classifier attains 100% accuracy by construction. Deterministic
// per seed; labels balanced within the bucketing tolerance.
adv::Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// 28x28 grayscale glyph renderer for digits 0..9 with seeded affine jitter,
// stroke intensity variation and pixel noise. Balanced labels.
Images render_digits(std::int64_t count, std::vector<std::int64_t>& labels_out,
                     std::uint64_t seed);

}  // namespace ssmlab::data
