#include "canonkit/group.hpp"

namespace canonkit {

std::string element_str(const GroupElement& g) {
  std::string s = g.f ? "f" : "";
  if (g.r != 0 || !g.f) s += "r" + std::to_string(g.r);
  return s;
}

Group Group::from_name(const std::string& name) {
  Group g;
  g.name_ = name;
  if (name == "c1") {
    g.elems_ = {{0, false}};
  } else if (name == "c2") {
    g.elems_ = {{0, false}, {2, false}};
  } else if (name == "c4") {
    g.elems_ = {{0, false}, {1, false}, {2, false}, {3, false}};
  } else if (name == "d4") {
    g.elems_ = {{0, false}, {1, false}, {2, false}, {3, false},
                {0, true},  {1, true},  {2, true},  {3, true}};
  } else {
    fail(ErrKind::group, "unknown group name: " + name);
  }
  return g;
}

bool Group::is_member(const GroupElement& g) const {
  if (g.r < 0 || g.r > 3) return false;
  for (const auto& e : elems_)
    if (e == g) return true;
  return false;
}

int Group::index_of(const GroupElement& g) const {
  for (size_t i = 0; i < elems_.size(); ++i)
    if (elems_[i] == g) return static_cast<int>(i);
  fail(ErrKind::group, "element " + element_str(g) + " is not in group " + name_);
}

GroupElement Group::compose(const GroupElement& a, const GroupElement& b) const {
  CK_CHECK(is_member(a), ErrKind::group, "compose: " + element_str(a) + " is not in group " + name_);
  CK_CHECK(is_member(b), ErrKind::group, "compose: " + element_str(b) + " is not in group " + name_);
  GroupElement out;
  out.r = ((a.r + (a.f ? -b.r : b.r)) % 4 + 4) % 4;
  out.f = a.f != b.f;
  return out;
}

GroupElement Group::inverse(const GroupElement& a) const {
  CK_CHECK(is_member(a), ErrKind::group, "inverse: " + element_str(a) + " is not in group " + name_);
  if (a.f) return a;  // reflections are involutions
  return {(4 - a.r) % 4, false};
}

namespace {

// Value permutation for rotate^r * flip^f over square side w; walks each
// output cell back to its source coordinates.
void spatial_perm(const GroupElement& g, int w, std::vector<int64_t>& perm) {
  perm.resize(static_cast<size_t>(w) * w);
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < w; ++j) {
      int a = i, b = j;
      for (int t = 0; t < g.r; ++t) {
        const int na = b, nb = w - 1 - a;
        a = na;
        b = nb;
      }
      if (g.f) b = w - 1 - b;
      perm[static_cast<size_t>(i) * w + j] = static_cast<int64_t>(a) * w + b;
    }
}

}  // namespace

std::vector<int64_t> spatial_source_map(const GroupElement& g, int w) {
  CK_CHECK(g.r >= 0 && g.r <= 3 && w >= 1, ErrKind::group, "spatial_source_map: bad element or size");
  std::vector<int64_t> perm;
  spatial_perm(g, w, perm);
  return perm;
}

namespace {

Tensor act_square_axes(const GroupElement& g, const Tensor& x, const char* op) {
  CK_CHECK(g.r >= 0 && g.r <= 3, ErrKind::group, std::string(op) + ": rotation out of range");
  CK_CHECK(x.rank() >= 2, ErrKind::dim, std::string(op) + ": input must have rank >= 2");
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  CK_CHECK(h == w, ErrKind::dim,
           std::string(op) + ": trailing axes must be square, got " + shape_str(x.shape()));
  std::vector<int64_t> plane;
  spatial_perm(g, w, plane);
  const int64_t planes = x.size() / (static_cast<int64_t>(w) * w);
  std::vector<int64_t> perm(static_cast<size_t>(x.size()));
  for (int64_t c = 0; c < planes; ++c) {
    const int64_t base = c * w * w;
    for (size_t i = 0; i < plane.size(); ++i) perm[static_cast<size_t>(base) + i] = base + plane[i];
  }
  return permute_values(x, perm, x.shape());
}

}  // namespace

Tensor act_image(const GroupElement& g, const Tensor& x) {
  CK_CHECK(x.rank() == 3, ErrKind::dim, "act_image: input must be rank 3, got " + shape_str(x.shape()));
  return act_square_axes(g, x, "act_image");
}

Tensor act_spatial(const GroupElement& g, const Tensor& x) {
  return act_square_axes(g, x, "act_spatial");
}

Tensor act_output(const Group& group, const GroupElement& g, const Tensor& y,
                  const std::string& mode) {
  CK_CHECK(group.is_member(g), ErrKind::group,
           "act_output: " + element_str(g) + " is not in group " + group.name());
  if (mode == "invariant") return y;
  if (mode == "dense") return act_image(g, y);
  if (mode == "group_logits") {
    CK_CHECK(y.rank() == 1 && y.dim(0) == group.size(), ErrKind::dim,
             "act_output: group_logits needs one entry per element, got " + shape_str(y.shape()));
    const GroupElement ginv = group.inverse(g);
    std::vector<int64_t> perm(static_cast<size_t>(group.size()));
    for (int i = 0; i < group.size(); ++i)
      perm[static_cast<size_t>(i)] = group.index_of(group.compose(ginv, group.elements()[static_cast<size_t>(i)]));
    return permute_values(y, perm, y.shape());
  }
  fail(ErrKind::config, "act_output: unknown mode: " + mode);
}

std::vector<Tensor> orbit(const Group& group, const Tensor& x) {
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(group.size()));
  for (const auto& g : group.elements()) out.push_back(act_image(group.inverse(g), x));
  return out;
}

}  // namespace canonkit
