#include "canonkit/nets.hpp"

#include <cmath>

#include "canonkit/rng.hpp"

namespace canonkit {

void validate_spec(const NetSpec& spec) {
  CK_CHECK(spec.arch == "mlp" || spec.arch == "small_cnn" || spec.arch == "gcnn", ErrKind::config,
           "unknown arch: " + spec.arch);
  CK_CHECK(spec.head == "embed" || spec.head == "logits" || spec.head == "dense", ErrKind::config,
           "unknown head: " + spec.head);
  CK_CHECK(!spec.channels.empty(), ErrKind::config, "channels must be nonempty");
  for (int c : spec.channels) CK_CHECK(c >= 1, ErrKind::config, "channel counts must be positive");
  CK_CHECK(spec.kernel >= 1 && spec.kernel % 2 == 1, ErrKind::config, "kernel size must be odd");
  CK_CHECK(spec.in_channels >= 1, ErrKind::config, "in_channels must be positive");
  CK_CHECK(spec.image_size >= 1, ErrKind::config, "image_size must be positive");
  CK_CHECK(spec.embed_dim >= 1, ErrKind::config, "embed_dim must be positive");
  CK_CHECK(spec.num_classes >= 1, ErrKind::config, "num_classes must be positive");
  CK_CHECK(spec.dense_channels >= 1, ErrKind::config, "dense_channels must be positive");
  if (spec.arch == "mlp")
    CK_CHECK(spec.head != "dense", ErrKind::config, "mlp does not support a dense head");
  if (spec.arch == "gcnn") {
    CK_CHECK(spec.channels.size() == 2, ErrKind::config,
             "gcnn takes exactly two channel counts (lifting, group-conv)");
    CK_CHECK(spec.group == "c4" || spec.group == "d4", ErrKind::config,
             "gcnn supports groups c4 and d4 only");
  }
}

namespace {

std::string layer_name(const char* stem, size_t i) {
  std::string idx = std::to_string(i);
  if (idx.size() < 2) idx.insert(0, "0");
  return std::string(stem) + idx;
}

Tensor he_normal(Rng& rng, Shape shape, int64_t fan_in) {
  std::vector<double> vals(static_cast<size_t>(numel(shape)));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : vals) v = std * rng.normal();
  return Tensor::from(std::move(shape), std::move(vals));
}

void check_input(const NetSpec& spec, const Tensor& x, const char* op) {
  CK_CHECK(x.defined() && x.rank() == 3, ErrKind::dim, std::string(op) + ": input must be rank 3");
  CK_CHECK(x.dim(0) == spec.in_channels && x.dim(1) == spec.image_size && x.dim(2) == spec.image_size,
           ErrKind::dim,
           std::string(op) + ": input shape " + shape_str(x.shape()) + " does not match spec [" +
               std::to_string(spec.in_channels) + "," + std::to_string(spec.image_size) + "," +
               std::to_string(spec.image_size) + "]");
}

// Shared trunk: conv/bias/relu stacks for cnn, linear/relu stacks for mlp.
Tensor cnn_trunk(const Parameters& params, const NetSpec& spec, const Tensor& x,
                 const std::string& prefix) {
  Tensor h = x;
  for (size_t i = 0; i < spec.channels.size(); ++i) {
    const std::string name = prefix + layer_name("conv", i);
    h = relu(add_channel_bias(conv2d(params.at(name + ".kernel"), h), params.at(name + ".bias")));
  }
  return h;
}

Tensor mlp_trunk(const Parameters& params, const NetSpec& spec, const Tensor& x,
                 const std::string& prefix) {
  Tensor h = flatten(x);
  for (size_t i = 0; i < spec.channels.size(); ++i) {
    const std::string name = prefix + layer_name("fc", i);
    h = relu(linear(params.at(name + ".weight"), params.at(name + ".bias"), h));
  }
  return h;
}

Tensor vector_head(const Parameters& params, const NetSpec& spec, const Tensor& x,
                   const std::string& prefix) {
  Tensor h = spec.arch == "mlp" ? mlp_trunk(params, spec, x, prefix)
                                : global_mean_pool(cnn_trunk(params, spec, x, prefix));
  return linear(params.at(prefix + "head.weight"), params.at(prefix + "head.bias"), h);
}

}  // namespace

Parameters init_params(const NetSpec& spec, uint64_t seed) {
  validate_spec(spec);
  Rng rng(seed);
  Parameters p;
  if (spec.arch == "mlp") {
    int prev = spec.in_channels * spec.image_size * spec.image_size;
    for (size_t i = 0; i < spec.channels.size(); ++i) {
      const int w = spec.channels[i];
      const std::string name = layer_name("fc", i);
      p.add(name + ".weight", he_normal(rng, {w, prev}, prev));
      p.add(name + ".bias", Tensor::zeros({w}));
      prev = w;
    }
    const int out = spec.head == "embed" ? spec.embed_dim : spec.num_classes;
    p.add("head.weight", he_normal(rng, {out, prev}, prev));
    p.add("head.bias", Tensor::zeros({out}));
  } else if (spec.arch == "small_cnn") {
    const int k = spec.kernel;
    int prev = spec.in_channels;
    for (size_t i = 0; i < spec.channels.size(); ++i) {
      const int c = spec.channels[i];
      const std::string name = layer_name("conv", i);
      p.add(name + ".kernel", he_normal(rng, {c, prev, k, k}, static_cast<int64_t>(prev) * k * k));
      p.add(name + ".bias", Tensor::zeros({c}));
      prev = c;
    }
    if (spec.head == "dense") {
      p.add("head.kernel", he_normal(rng, {spec.dense_channels, prev, 1, 1}, prev));
      p.add("head.bias", Tensor::zeros({spec.dense_channels}));
    } else {
      const int out = spec.head == "embed" ? spec.embed_dim : spec.num_classes;
      p.add("head.weight", he_normal(rng, {out, prev}, prev));
      p.add("head.bias", Tensor::zeros({out}));
    }
  } else {
    const int k = spec.kernel;
    const int c0 = spec.channels[0], c1 = spec.channels[1];
    const int gsize = Group::from_name(spec.group).size();
    p.add("lift.kernel",
          he_normal(rng, {c0, spec.in_channels, k, k}, static_cast<int64_t>(spec.in_channels) * k * k));
    p.add("lift.bias", Tensor::zeros({c0}));
    p.add("gconv.kernel",
          he_normal(rng, {c1, gsize, c0, k, k}, static_cast<int64_t>(gsize) * c0 * k * k));
    p.add("gconv.bias", Tensor::zeros({c1}));
    p.add("head.weight", he_normal(rng, {1, c1}, c1));
    p.add("head.bias", Tensor::zeros({1}));
  }
  return p;
}

Tensor backbone_forward(const Parameters& params, const NetSpec& spec, const Tensor& x,
                        const std::string& prefix) {
  validate_spec(spec);
  CK_CHECK(spec.head == "embed", ErrKind::config, "backbone_forward requires an embed head");
  CK_CHECK(spec.arch != "gcnn", ErrKind::config, "backbone_forward does not take gcnn specs");
  check_input(spec, x, "backbone_forward");
  return vector_head(params, spec, x, prefix);
}

Tensor predictor_forward(const Parameters& params, const NetSpec& spec, const Tensor& x,
                         const std::string& prefix) {
  validate_spec(spec);
  CK_CHECK(spec.head == "logits" || spec.head == "dense", ErrKind::config,
           "predictor_forward requires a logits or dense head");
  CK_CHECK(spec.arch != "gcnn", ErrKind::config, "predictor_forward does not take gcnn specs");
  check_input(spec, x, "predictor_forward");
  if (spec.head == "logits") return vector_head(params, spec, x, prefix);
  Tensor h = cnn_trunk(params, spec, x, prefix);
  return add_channel_bias(conv2d(params.at(prefix + "head.kernel"), h),
                          params.at(prefix + "head.bias"));
}

Tensor gcnn_forward(const Parameters& params, const NetSpec& spec, const Tensor& x,
                    const Group& group, const std::string& prefix) {
  validate_spec(spec);
  CK_CHECK(spec.arch == "gcnn", ErrKind::config, "gcnn_forward requires a gcnn spec");
  CK_CHECK(group.name() == spec.group, ErrKind::config,
           "gcnn_forward: group " + group.name() + " does not match spec group " + spec.group);
  check_input(spec, x, "gcnn_forward");

  const int n = group.size();
  const int c0 = spec.channels[0], c1 = spec.channels[1];
  const int k = spec.kernel;
  const auto& lift_k = params.at(prefix + "lift.kernel");
  const auto& lift_b = params.at(prefix + "lift.bias");
  const auto& gconv_k = params.at(prefix + "gconv.kernel");
  const auto& gconv_b = params.at(prefix + "gconv.bias");

  // Lifting: feature at group position h correlates x against the h-transformed
  // filter; stacking h-major gives a [n*c0, H, W] field.
  std::vector<Tensor> lifted;
  lifted.reserve(static_cast<size_t>(n));
  for (const auto& h : group.elements())
    lifted.push_back(relu(add_channel_bias(conv2d(act_spatial(h, lift_k), x), lift_b)));
  Tensor field = concat_channels(lifted);

  // Group conv at output position g uses kernel slice index(g^-1 h) for input
  // position h, spatially transformed by g. That gather is one permutation of
  // the master kernel.
  std::vector<Tensor> logits;
  logits.reserve(static_cast<size_t>(n));
  const int64_t kk = static_cast<int64_t>(k) * k;
  for (const auto& g : group.elements()) {
    const GroupElement ginv = group.inverse(g);
    const auto plane = spatial_source_map(g, k);
    std::vector<int64_t> perm(static_cast<size_t>(c1) * n * c0 * kk);
    size_t dst = 0;
    for (int oc = 0; oc < c1; ++oc)
      for (int h = 0; h < n; ++h) {
        const int hsrc = group.index_of(group.compose(ginv, group.elements()[static_cast<size_t>(h)]));
        for (int ic = 0; ic < c0; ++ic) {
          const int64_t base = ((static_cast<int64_t>(oc) * n + hsrc) * c0 + ic) * kk;
          for (int64_t s = 0; s < kk; ++s) perm[dst++] = base + plane[static_cast<size_t>(s)];
        }
      }
    Tensor kg = permute_values(gconv_k, perm, {c1, n * c0, k, k});
    Tensor feat = relu(add_channel_bias(conv2d(kg, field), gconv_b));
    logits.push_back(linear(params.at(prefix + "head.weight"), params.at(prefix + "head.bias"),
                            global_mean_pool(feat)));
  }
  return stack_scalars(logits);
}

}  // namespace canonkit
