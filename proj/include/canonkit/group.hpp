#pragma once

#include <string>
#include <vector>

#include "canonkit/tensor.hpp"

namespace canonkit {

/// Element of the dihedral group of the square, written as rotate^r * flip^f:
/// flip horizontally first (if f), then rotate counter-clockwise r quarter
/// turns. r is always reduced mod 4.
struct GroupElement {
  int r = 0;
  bool f = false;
};

inline bool operator==(const GroupElement& a, const GroupElement& b) {
  return a.r == b.r && a.f == b.f;
}
inline bool operator!=(const GroupElement& a, const GroupElement& b) { return !(a == b); }

std::string element_str(const GroupElement& g);

/// One of the planar symmetry groups c1, c2, c4, d4. Element order is fixed:
/// identity first, then increasing rotations, then flipped elements in the
/// same rotation order.
class Group {
 public:
  static Group from_name(const std::string& name);

  const std::string& name() const { return name_; }
  const std::vector<GroupElement>& elements() const { return elems_; }
  int size() const { return static_cast<int>(elems_.size()); }
  GroupElement identity() const { return {}; }

  bool is_member(const GroupElement& g) const;
  int index_of(const GroupElement& g) const;
  GroupElement compose(const GroupElement& a, const GroupElement& b) const;
  GroupElement inverse(const GroupElement& a) const;

 private:
  std::string name_;
  std::vector<GroupElement> elems_;
};

/// Applies g to an image [C,H,W] with H==W as an exact value permutation.
/// Differentiable; gradients flow through the inverse permutation.
Tensor act_image(const GroupElement& g, const Tensor& x);

/// Same action on the trailing two (square) axes of any rank>=2 tensor,
/// leading axes treated as batch.
Tensor act_spatial(const GroupElement& g, const Tensor& x);

/// Transforms a prediction alongside its input. Modes:
///   "invariant"    y unchanged
///   "dense"        y is an image, transformed by act_image
///   "group_logits" y has one entry per element, permuted by left translation
Tensor act_output(const Group& group, const GroupElement& g, const Tensor& y,
                  const std::string& mode);

/// Orbit views used for canonicalization: entry i is act_image(inverse(g_i), x).
std::vector<Tensor> orbit(const Group& group, const Tensor& x);

/// Source-index map of g over one w*w plane: out[i*w+j] is the flat source
/// cell that lands at (i,j). Building block for composed permutations.
std::vector<int64_t> spatial_source_map(const GroupElement& g, int w);

}  // namespace canonkit
