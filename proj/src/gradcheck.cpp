#include "canonkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "canonkit/canon.hpp"
#include "canonkit/group.hpp"
#include "canonkit/nets.hpp"
#include "canonkit/rng.hpp"
#include "canonkit/tensor.hpp"

namespace canonkit {

namespace {

constexpr double kH = 1e-3;
constexpr double kTol = 1e-4;

struct CheckCase {
  std::string name;
  std::vector<Tensor> leaves;            // perturbed element by element
  std::function<Tensor()> forward;       // graph over the current leaf values
  std::function<double()> fd_forward;    // value-only; empty means forward()
  double h = kH;  // the deep loss pipelines need a smaller step: truncation
                  // error grows as h^2 with their curvature
};

Tensor leaf(Rng& rng, Shape shape, double spread = 1.0, double offset = 0.0) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = rng.normal() * spread + offset;
  return Tensor::from(std::move(shape), std::move(v), true);
}

// relu inputs keep clear of the kink so differences stay one-sided
Tensor leaf_off_kink(Rng& rng, Shape shape) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) {
    x = rng.normal();
    if (std::fabs(x) < 0.1) x += x >= 0.0 ? 0.2 : -0.2;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor probe_const(Rng& rng, int64_t n) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.normal();
  return Tensor::from({static_cast<int>(n)}, std::move(v), false);
}

// fixed random weighting collapses any output to a scalar loss
Tensor probe(const Tensor& cst, const Tensor& y) { return dot(cst, flatten(y)); }

GradCheckResult run_case(const CheckCase& c, bool faulted) {
  for (Tensor l : c.leaves) l.zero_grad();  // copies share the node
  backward(c.forward());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(c.leaves.size());
  for (const auto& l : c.leaves) analytic.push_back(l.grad());
  if (faulted)
    for (auto& g : analytic)
      for (auto& v : g) v = v * 1.01 + 1e-3;

  auto value = [&] { return c.fd_forward ? c.fd_forward() : c.forward().item(); };
  double max_rel = 0.0;
  for (size_t li = 0; li < c.leaves.size(); ++li) {
    Tensor lf = c.leaves[li];
    auto& vals = lf.mutable_data();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + c.h;
      const double fp = value();
      vals[i] = saved - c.h;
      const double fm = value();
      vals[i] = saved;
      const double fd = (fp - fm) / (2.0 * c.h);
      const double an = analytic[li][i];
      const double rel = std::fabs(fd - an) / std::max({1e-6, std::fabs(fd), std::fabs(an)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return {c.name, max_rel, max_rel < kTol};
}

std::vector<CheckCase> make_cases(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckCase> cases;
  auto push = [&](std::string name, std::vector<Tensor> leaves, std::function<Tensor()> fwd,
                  std::function<double()> fd = nullptr, double h = kH) {
    cases.push_back({std::move(name), std::move(leaves), std::move(fwd), std::move(fd), h});
  };

  {
    Tensor W = leaf(rng, {3, 4}), b = leaf(rng, {3}), x = leaf(rng, {4});
    Tensor c = probe_const(rng, 3);
    push("linear", {W, b, x}, [=] { return probe(c, linear(W, b, x)); });
  }
  {
    Tensor K = leaf(rng, {2, 3, 3, 3}, 0.5), x = leaf(rng, {3, 5, 5});
    Tensor c = probe_const(rng, 2 * 5 * 5);
    push("conv2d", {K, x}, [=] { return probe(c, conv2d(K, x)); });
  }
  {
    Tensor x = leaf(rng, {2, 4, 4}), b = leaf(rng, {2});
    Tensor c = probe_const(rng, 2 * 4 * 4);
    push("add_channel_bias", {x, b}, [=] { return probe(c, add_channel_bias(x, b)); });
  }
  {
    Tensor x = leaf_off_kink(rng, {3, 4, 4});
    Tensor c = probe_const(rng, 3 * 4 * 4);
    push("relu", {x}, [=] { return probe(c, relu(x)); });
  }
  {
    Tensor x = leaf(rng, {3, 4, 4});
    Tensor c = probe_const(rng, 3);
    push("global_mean_pool", {x}, [=] { return probe(c, global_mean_pool(x)); });
  }
  {
    Tensor z = leaf(rng, {5});
    Tensor c = probe_const(rng, 5);
    push("softmax", {z}, [=] { return probe(c, softmax(z, 0.7)); });
  }
  {
    Tensor p = leaf(rng, {4}, 0.2, 1.0);  // positive, away from the log clamp
    push("cross_entropy", {p}, [=] { return cross_entropy(p, 1); });
  }
  {
    Tensor a = leaf(rng, {2, 3}), b = leaf(rng, {2, 3});
    Tensor c = probe_const(rng, 6);
    push("add", {a, b}, [=] { return probe(c, add(a, b)); });
  }
  {
    Tensor a = leaf(rng, {2, 3}), b = leaf(rng, {2, 3});
    Tensor c = probe_const(rng, 6);
    push("sub", {a, b}, [=] { return probe(c, sub(a, b)); });
  }
  {
    Tensor a = leaf(rng, {2, 3}), b = leaf(rng, {2, 3});
    Tensor c = probe_const(rng, 6);
    push("mul", {a, b}, [=] { return probe(c, mul(a, b)); });
  }
  {
    Tensor a = leaf(rng, {4});
    Tensor c = probe_const(rng, 4);
    push("scale", {a}, [=] { return probe(c, scale(a, -0.37)); });
  }
  {
    Tensor a = leaf(rng, {2, 3});
    push("sum", {a}, [=] { return sum(a); });
  }
  {
    Tensor a = leaf(rng, {2, 3});
    push("mean", {a}, [=] { return mean(a); });
  }
  {
    Tensor a = leaf(rng, {5}), b = leaf(rng, {5});
    push("dot", {a, b}, [=] { return dot(a, b); });
  }
  {
    Tensor a = leaf(rng, {6});
    Tensor c = probe_const(rng, 6);
    push("l2_normalize", {a}, [=] { return probe(c, l2_normalize(a)); });
  }
  {
    Tensor a = leaf(rng, {5}, 0.2, 1.0);  // positive, away from the clamp
    Tensor c = probe_const(rng, 5);
    push("log_clamped", {a}, [=] { return probe(c, log_clamped(a)); });
  }
  {
    Tensor a = leaf(rng, {2, 2, 3});
    Tensor c = probe_const(rng, 12);
    push("flatten", {a}, [=] { return dot(c, flatten(a)); });
  }
  {
    Tensor s0 = leaf(rng, {1}), s1 = leaf(rng, {1}), s2 = leaf(rng, {1});
    Tensor c = probe_const(rng, 3);
    push("stack_scalars", {s0, s1, s2},
         [=] { return probe(c, stack_scalars({s0, s1, s2})); });
  }
  {
    Tensor a = leaf(rng, {2, 3, 3}), b = leaf(rng, {1, 3, 3});
    Tensor c = probe_const(rng, 27);
    push("concat_channels", {a, b}, [=] { return probe(c, concat_channels({a, b})); });
  }
  {
    Tensor a = leaf(rng, {5});
    push("index", {a}, [=] { return index(a, 2); });
  }
  {
    Tensor a = leaf(rng, {4});
    Tensor c = probe_const(rng, 4);
    const std::vector<int64_t> perm = {2, 0, 3, 1};
    push("permute_values", {a}, [=] { return probe(c, permute_values(a, perm, {4})); });
  }
  {
    // hard forward, soft backward: differences are taken on the surrogate
    Tensor z = leaf(rng, {3});
    Tensor e0 = leaf(rng, {2, 2}), e1 = leaf(rng, {2, 2}), e2 = leaf(rng, {2, 2});
    Tensor c = probe_const(rng, 4);
    auto fwd = [=] { return probe(c, hard_select(softmax(z, 1.0), {e0, e1, e2}, 1)); };
    auto fd = [=] {
      const auto& zs = z.data();
      const double m = *std::max_element(zs.begin(), zs.end());
      double norm = 0.0;
      std::vector<double> w(3);
      for (int i = 0; i < 3; ++i) norm += w[static_cast<size_t>(i)] = std::exp(zs[static_cast<size_t>(i)] - m);
      double acc = 0.0;
      const std::vector<const Tensor*> es = {&e0, &e1, &e2};
      for (int j = 0; j < 4; ++j) {
        double soft = 0.0;
        for (int i = 0; i < 3; ++i)
          soft += w[static_cast<size_t>(i)] / norm * es[static_cast<size_t>(i)]->data()[static_cast<size_t>(j)];
        acc += c.data()[static_cast<size_t>(j)] * soft;
      }
      return acc;
    };
    push("hard_select", {z, e0, e1, e2}, fwd, fd);
  }

  // pipeline losses over a tiny backbone; every parameter is perturbed
  const Group c4 = Group::from_name("c4");
  NetSpec tiny;
  tiny.arch = "mlp";
  tiny.in_channels = 1;
  tiny.image_size = 4;
  tiny.channels = {6};
  tiny.embed_dim = 5;
  tiny.head = "embed";
  auto pipeline_leaves = [&](const Parameters& p) {
    std::vector<Tensor> ls;
    for (const auto& [name, t] : p.items) ls.push_back(t);
    return ls;
  };
  {
    Parameters p = init_params(tiny, rng.next_u64());
    CanonConfig cc = CanonConfig::make(tiny.embed_dim, rng.next_u64());
    Tensor x = leaf(rng, {1, 4, 4});
    x.set_requires_grad(false);
    auto params = std::make_shared<Parameters>(std::move(p));
    push("loss_orbit_separation", pipeline_leaves(*params),
         [=] { return orbit_separation_loss(*params, tiny, {x}, c4, cc); }, nullptr, 1e-4);
  }
  {
    Parameters p = init_params(tiny, rng.next_u64());
    CanonConfig cc = CanonConfig::make(tiny.embed_dim, rng.next_u64());
    cc.v_r.set_requires_grad(true);
    Tensor x = leaf(rng, {1, 4, 4});
    x.set_requires_grad(false);
    auto params = std::make_shared<Parameters>(std::move(p));
    auto ls = pipeline_leaves(*params);
    ls.push_back(cc.v_r);
    push("loss_prior_delta", std::move(ls),
         [=] { return prior_loss_delta(*params, tiny, {x}, c4, cc); }, nullptr, 1e-4);
  }
  {
    Tensor z = leaf(rng, {4});
    const std::vector<double> p_d = {0.1, 0.2, 0.3, 0.4};
    push("loss_prior_kl", {z}, [=] { return prior_loss_kl(p_d, softmax(z, 1.0)); }, nullptr, 1e-4);
  }
  return cases;
}

}  // namespace

std::vector<GradCheckResult> run_gradchecks(uint64_t seed, const std::string& fault) {
  std::vector<GradCheckResult> out;
  for (const auto& c : make_cases(seed)) out.push_back(run_case(c, c.name == fault));
  return out;
}

}  // namespace canonkit
