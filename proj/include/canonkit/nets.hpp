#pragma once

#include <string>
#include <vector>

#include "canonkit/group.hpp"
#include "canonkit/tensor.hpp"

namespace canonkit {

/// Architecture description. `head` picks the output stage:
///   "embed"   vector of embed_dim (canonicalization backbone)
///   "logits"  vector of num_classes (invariant predictor)
///   "dense"   dense_channels x H x W map (equivariant predictor)
/// gcnn nets produce per-group-element logits and take exactly two channel
/// counts: lifting width and group-conv width.
struct NetSpec {
  std::string arch = "small_cnn";  // mlp | small_cnn | gcnn
  int in_channels = 1;
  int image_size = 16;
  std::vector<int> channels = {16, 32, 32};
  int kernel = 3;
  int embed_dim = 128;
  int num_classes = 4;
  int dense_channels = 1;
  std::string head = "embed";      // embed | logits | dense
  std::string group = "c4";        // gcnn only
};

void validate_spec(const NetSpec& spec);

/// He-normal weights, zero biases; one generator, fixed draw order, so a seed
/// pins every value.
Parameters init_params(const NetSpec& spec, uint64_t seed);

/// Embedding s of the input, shape [embed_dim]. Requires head == "embed".
Tensor backbone_forward(const Parameters& params, const NetSpec& spec, const Tensor& x,
                        const std::string& prefix = "");

/// Task output: [num_classes] logits head or [dense_channels,H,W] dense head.
Tensor predictor_forward(const Parameters& params, const NetSpec& spec, const Tensor& x,
                         const std::string& prefix = "");

/// Per-group-element logits [|G|] from a lifting layer, one group
/// convolution, spatial mean pool, and a scalar head shared across the group
/// axis. Structurally equivariant: logits(act_image(g,x)) is the left
/// translation of logits(x) up to float reassociation.
Tensor gcnn_forward(const Parameters& params, const NetSpec& spec, const Tensor& x,
                    const Group& group, const std::string& prefix = "");

}  // namespace canonkit
