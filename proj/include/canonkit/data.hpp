#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "canonkit/group.hpp"
#include "canonkit/tensor.hpp"

namespace canonkit {

/// Image classification corpus. Every image is [C,H,W] with H == W and
/// values in [0,1]; pixel values sit on the k/255 grid so IDX round-trips
/// are exact.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::string source;
  int num_classes = 0;
  uint64_t seed = 0;

  int size() const { return static_cast<int>(images.size()); }
  void validate() const;
};

/// Reads an IDX image/label pair (big-endian, ubyte payload); pixels scaled
/// by 1/255 into single-channel images.
Dataset load_idx(const std::string& image_path, const std::string& label_path);

/// Writes the dataset as an IDX pair. Requires single-channel images.
void save_idx(const Dataset& ds, const std::string& image_path, const std::string& label_path);

/// Deterministic asymmetric glyph corpus: each class is a fixed binary
/// prototype with no nontrivial d4 stabilizer (checked at generation),
/// rendered with per-sample shift and pixel jitter.
Dataset gen_shapes(uint64_t seed, int n_per_class, int num_classes, int size = 16);

/// mode "exhaustive": every group transform of every image (N*|G| samples,
/// sample-major). mode "random": one sampled transform per image.
Dataset augment_orbit(const Dataset& ds, const Group& group, const std::string& mode,
                      uint64_t seed = 0);

/// Deterministic shuffled partition by fractions (must sum to 1 within 1e-9).
/// A single fraction of 1.0 returns the dataset unchanged, original order.
std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions, uint64_t seed);

}  // namespace canonkit
