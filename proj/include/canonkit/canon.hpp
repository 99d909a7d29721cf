#pragma once

#include <functional>
#include <string>
#include <vector>

#include "canonkit/group.hpp"
#include "canonkit/nets.hpp"
#include "canonkit/rng.hpp"
#include "canonkit/tensor.hpp"

namespace canonkit {

struct CanonConfig {
  double tau = 1.0;
  int embed_dim = 128;
  Tensor v_r;                       // reference vector, [embed_dim]
  std::string v_r_mode = "fixed";   // fixed | learned
  bool normalize_embeddings = true;
  std::string st_mode = "hard_st";  // hard_st | gumbel
  double gumbel_temp = 1.0;
  double lambda_opt = 1.0;
  double lambda_prior = 1.0;

  /// Standard-normal v_r drawn from the seed; everything else defaulted.
  static CanonConfig make(int embed_dim, uint64_t seed);
  void validate() const;
};

/// Everything canonicalization produces for one input. orbit[i] and
/// embeddings[i] follow the group's element order; canonical aliases
/// orbit[selected_index].
struct CanonResult {
  std::vector<Tensor> embeddings;
  std::vector<Tensor> orbit;
  Tensor energies;  // [|G|]
  Tensor probs;     // [|G|]
  GroupElement selected;
  int selected_index = 0;
  Tensor canonical;
};

/// Normalized-per-config backbone embeddings of each orbit entry. Fills
/// orbit_out when given (same element order).
std::vector<Tensor> orbit_embeddings(const Parameters& s_params, const NetSpec& spec,
                                     const Tensor& x, const Group& group, const CanonConfig& cfg,
                                     std::vector<Tensor>* orbit_out = nullptr,
                                     const std::string& prefix = "");

/// Per-element energies e_i = dot(v_r, embedding_i) / tau, shape [|G|].
Tensor energies(const Parameters& s_params, const NetSpec& spec, const Tensor& x,
                const Group& group, const CanonConfig& cfg,
                std::vector<Tensor>* embeddings_out = nullptr,
                std::vector<Tensor>* orbit_out = nullptr, const std::string& prefix = "");

/// Full canonicalization: probs = softmax(energies), selection by argmax of
/// the energies (identical to argmax of probs by monotonicity, and exactly
/// permutation-stable across an orbit), lowest index on ties.
CanonResult canonicalize(const Parameters& s_params, const NetSpec& spec, const Tensor& x,
                         const Group& group, const CanonConfig& cfg,
                         const std::string& prefix = "");

/// Baseline selection from per-element G-CNN logits; embeddings stay empty.
CanonResult direct_canonicalize(const Parameters& gcnn_params, const NetSpec& spec,
                                const Tensor& x, const Group& group,
                                const std::string& prefix = "");

/// Predict on the canonical form, then transform the output back:
/// y = act_output(selected, predictor(canonical), output_kind).
Tensor apply_canonicalized(const Parameters& pred_params, const NetSpec& pred_spec,
                           const std::function<CanonResult(const Tensor&)>& canon,
                           const Tensor& x, const Group& group, const std::string& output_kind);

/// Straight-through selection: forward is a bitwise copy of orbit[selected];
/// backward sees the soft mixture sum_i probs_i * orbit[i].
Tensor st_select(const Tensor& probs, const std::vector<Tensor>& orbit_list, int selected);

/// Gumbel straight-through: perturb log-probs with Gumbel noise, pick the
/// argmax, backprop through the tempered softmax of the perturbed logits.
Tensor gumbel_select(const Tensor& probs, const std::vector<Tensor>& orbit_list,
                     double gumbel_temp, Rng& rng);

/// Mean over unordered pairs i<j of dot(e_i, e_j); zero when fewer than two.
Tensor pairwise_mean_dot(const std::vector<Tensor>& embeddings);

/// Collapse-prevention loss: batch mean of pairwise_mean_dot over orbit
/// embeddings. Zero for |G| = 1.
Tensor orbit_separation_loss(const Parameters& s_params, const NetSpec& spec,
                             const std::vector<Tensor>& batch, const Group& group,
                             const CanonConfig& cfg, const std::string& prefix = "");
Tensor orbit_separation_from(const std::vector<CanonResult>& results);

/// Delta-at-identity prior: batch mean of -log probs[identity].
Tensor prior_loss_delta(const Parameters& s_params, const NetSpec& spec,
                        const std::vector<Tensor>& batch, const Group& group,
                        const CanonConfig& cfg, const std::string& prefix = "");
Tensor prior_loss_delta_from(const std::vector<CanonResult>& results);

/// KL(P_D || probs) with 0*log0 := 0 and probs clamped at 1e-12.
Tensor prior_loss_kl(const std::vector<double>& p_d, const Tensor& probs);

/// |s(g, act_image(g1,x)) - s(compose(inverse(g1),g), x)| where s(g,x) is the
/// energy of element g for input x. Zero bitwise: both sides evaluate the
/// backbone on the identical tensor.
double energy_condition_check(const Parameters& s_params, const NetSpec& spec, const Tensor& x,
                              const GroupElement& g, const GroupElement& g1, const Group& group,
                              const CanonConfig& cfg, const std::string& prefix = "");

}  // namespace canonkit
