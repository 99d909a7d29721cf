#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <cmath>
#include <set>
#include <vector>

#include "canonkit/error.hpp"
#include "canonkit/group.hpp"
#include "canonkit/rng.hpp"
#include "canonkit/tensor.hpp"
#include "doctest.h"

using namespace canonkit;

namespace {

// 2x2 integer orthogonal matrices as an independent model of the square's
// symmetries: R rotates 90 degrees CCW, F flips horizontally, element = R^r F^f
using Mat = std::array<int, 4>;

Mat matmul(const Mat& a, const Mat& b) {
  return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2],
          a[2] * b[1] + a[3] * b[3]};
}

Mat mat_of(const GroupElement& g) {
  const Mat R = {0, -1, 1, 0};
  const Mat F = {-1, 0, 0, 1};
  Mat m = {1, 0, 0, 1};
  if (g.f) m = matmul(m, F);
  for (int i = 0; i < g.r; ++i) m = matmul(R, m);
  return m;
}

Tensor rand_image(Rng& rng, int c, int s) {
  std::vector<double> v(static_cast<size_t>(c * s * s));
  for (auto& e : v) e = rng.normal();
  return Tensor::from({c, s, s}, std::move(v));
}

}  // namespace

TEST_CASE("element orders are fixed with the identity first") {
  CHECK(Group::from_name("c1").size() == 1);
  CHECK(Group::from_name("c2").size() == 2);
  CHECK(Group::from_name("c4").size() == 4);
  CHECK(Group::from_name("d4").size() == 8);

  const Group d4 = Group::from_name("d4");
  const std::vector<GroupElement> want = {{0, false}, {1, false}, {2, false}, {3, false},
                                          {0, true},  {1, true},  {2, true},  {3, true}};
  CHECK(d4.elements() == want);
  CHECK(d4.identity() == GroupElement{});

  const Group c2 = Group::from_name("c2");
  CHECK(c2.elements()[1] == GroupElement{2, false});
  CHECK_FALSE(c2.is_member({1, false}));
  CHECK_THROWS_AS(Group::from_name("c3"), Error);
}

TEST_CASE("compose sums rotations and respects the identity") {
  const Group c4 = Group::from_name("c4");
  CHECK(c4.compose({1, false}, {3, false}) == GroupElement{0, false});
  for (const auto& g : c4.elements()) {
    CHECK(c4.compose(c4.identity(), g) == g);
    CHECK(c4.compose(g, c4.identity()) == g);
  }
}

TEST_CASE("compose rejects elements outside the group") {
  const Group c2 = Group::from_name("c2");
  CHECK_THROWS_AS(c2.compose({1, false}, {2, false}), Error);
  CHECK_THROWS_AS(c2.inverse({0, true}), Error);
}

TEST_CASE("all 64 dihedral compositions match the 2x2 matrix oracle") {
  const Group d4 = Group::from_name("d4");
  for (const auto& a : d4.elements())
    for (const auto& b : d4.elements()) {
      const Mat want = matmul(mat_of(a), mat_of(b));
      CHECK(mat_of(d4.compose(a, b)) == want);
    }
}

TEST_CASE("inverses follow the closed form and cancel exhaustively") {
  const Group d4 = Group::from_name("d4");
  CHECK(d4.inverse({0, false}) == GroupElement{0, false});
  CHECK(d4.inverse({1, false}) == GroupElement{3, false});
  for (const auto& g : d4.elements()) {
    CHECK(d4.compose(g, d4.inverse(g)) == d4.identity());
    CHECK(d4.compose(d4.inverse(g), g) == d4.identity());
  }
}

TEST_CASE("group axioms hold exhaustively for every supported group") {
  for (const char* name : {"c1", "c2", "c4", "d4"}) {
    const Group g = Group::from_name(name);
    for (const auto& a : g.elements()) {
      CHECK(g.is_member(g.inverse(a)));
      for (const auto& b : g.elements()) {
        CHECK(g.is_member(g.compose(a, b)));  // closure
        for (const auto& c : g.elements())
          CHECK(g.compose(g.compose(a, b), c) == g.compose(a, g.compose(b, c)));
      }
    }
  }
}

TEST_CASE("a quarter turn permutes the stated 2x2 example") {
  Tensor x = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  Tensor y = act_image({1, false}, x);
  CHECK(y.data() == std::vector<double>{2, 4, 1, 3});

  CHECK(act_image({0, false}, x).same_values(x));

  Tensor f = act_image({0, true}, x);
  CHECK(f.data() == std::vector<double>{2, 1, 4, 3});
}

TEST_CASE("act_image rejects non-square inputs") {
  Tensor x = Tensor::zeros({1, 2, 3});
  CHECK_THROWS_AS(act_image({1, false}, x), Error);
}

TEST_CASE("act_image is a homomorphism bitwise over all dihedral pairs") {
  Rng rng(31);
  const Group d4 = Group::from_name("d4");
  Tensor x = rand_image(rng, 2, 5);
  for (const auto& a : d4.elements())
    for (const auto& b : d4.elements()) {
      Tensor lhs = act_image(a, act_image(b, x));
      Tensor rhs = act_image(d4.compose(a, b), x);
      CHECK(lhs.same_values(rhs));
    }
}

TEST_CASE("applying an element its order times returns the input bitwise") {
  Rng rng(32);
  const Group d4 = Group::from_name("d4");
  Tensor x = rand_image(rng, 1, 4);
  for (const auto& g : d4.elements()) {
    Tensor y = x;
    int order = 0;
    do {
      y = act_image(g, y);
      ++order;
    } while (!(order > 0 && y.same_values(x)) && order < 8);
    CHECK(y.same_values(x));
    CHECK(8 % order == 0);
  }
}

TEST_CASE("act_spatial transforms trailing axes with leading batch dims") {
  Rng rng(33);
  Tensor x = rand_image(rng, 3, 4);  // treat channel axis as batch
  Tensor whole = act_image({1, true}, x);
  Tensor spatial = act_spatial({1, true}, x);
  CHECK(whole.same_values(spatial));

  // rank-4: every leading slice is transformed independently
  std::vector<double> v(2 * 1 * 3 * 3);
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  Tensor r4 = Tensor::from({2, 1, 3, 3}, v);
  Tensor out = act_spatial({2, false}, r4);
  Tensor first = Tensor::from({1, 3, 3}, std::vector<double>(v.begin(), v.begin() + 9));
  CHECK(Tensor::from({1, 3, 3}, std::vector<double>(out.data().begin(), out.data().begin() + 9))
            .same_values(act_image({2, false}, first)));
}

TEST_CASE("act_output passes invariants through and permutes group logits bijectively") {
  Rng rng(34);
  const Group d4 = Group::from_name("d4");
  Tensor y = rand_image(rng, 1, 3);
  for (const auto& g : d4.elements())
    CHECK(act_output(d4, g, y, "invariant").same_values(y));

  CHECK(act_output(d4, d4.identity(), y, "dense").same_values(y));
  CHECK(act_output(d4, {1, false}, y, "dense").same_values(act_image({1, false}, y)));

  std::vector<double> lv(8);
  for (int i = 0; i < 8; ++i) lv[static_cast<size_t>(i)] = i + 1.0;
  Tensor logits = Tensor::from({8}, lv);
  for (const auto& g : d4.elements()) {
    Tensor permuted = act_output(d4, g, logits, "group_logits");
    std::multiset<double> a(lv.begin(), lv.end());
    std::multiset<double> b(permuted.data().begin(), permuted.data().end());
    CHECK(a == b);  // bijection: same values, rearranged
  }
  CHECK(act_output(d4, d4.identity(), logits, "group_logits").same_values(logits));
  CHECK_THROWS_AS(act_output(d4, d4.identity(), logits, "nope"), Error);
}

TEST_CASE("orbit entries are the inverse-transformed views in element order") {
  Rng rng(35);
  const Group c4 = Group::from_name("c4");
  Tensor x = rand_image(rng, 1, 4);

  auto views = orbit(c4, x);
  REQUIRE(views.size() == 4);
  CHECK(views[0].same_values(x));
  for (int i = 0; i < 4; ++i)
    CHECK(views[static_cast<size_t>(i)].same_values(
        act_image(c4.inverse(c4.elements()[static_cast<size_t>(i)]), x)));

  const Group c1 = Group::from_name("c1");
  auto single = orbit(c1, x);
  REQUIRE(single.size() == 1);
  CHECK(single[0].same_values(x));

  Tensor flat = Tensor::full({1, 3, 3}, 2.5);
  for (const auto& view : orbit(c4, flat)) CHECK(view.same_values(flat));
}

TEST_CASE("transforming the input permutes the orbit by left translation") {
  Rng rng(36);
  const Group d4 = Group::from_name("d4");
  Tensor x = rand_image(rng, 1, 5);
  auto base = orbit(d4, x);
  for (const auto& g1 : d4.elements()) {
    auto moved = orbit(d4, act_image(g1, x));
    for (int i = 0; i < d4.size(); ++i) {
      const auto gi = d4.elements()[static_cast<size_t>(i)];
      const int j = d4.index_of(d4.compose(d4.inverse(g1), gi));
      CHECK(moved[static_cast<size_t>(i)].same_values(base[static_cast<size_t>(j)]));
    }
  }
}

TEST_CASE("gradients flow through act_image as the inverse permutation") {
  Tensor x = Tensor::from({1, 2, 2}, {1, 2, 3, 4}, true);
  Tensor y = act_image({1, false}, x);
  Tensor w = Tensor::from({4}, {1, 10, 100, 1000});
  backward(dot(w, flatten(y)));
  // y = [2,4,1,3]: dy/dx routes each weight back to its source cell
  CHECK(x.grad() == std::vector<double>{100, 1, 1000, 10});
}
