#include "canonkit/canon.hpp"

#include <cmath>

#include "canonkit/threads.hpp"

namespace canonkit {

CanonConfig CanonConfig::make(int embed_dim, uint64_t seed) {
  CanonConfig cfg;
  cfg.embed_dim = embed_dim;
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(embed_dim));
  for (double& x : v) x = rng.normal();
  cfg.v_r = Tensor::from({embed_dim}, std::move(v));
  return cfg;
}

void CanonConfig::validate() const {
  CK_CHECK(tau > 0.0, ErrKind::config, "tau must be positive");
  CK_CHECK(gumbel_temp > 0.0, ErrKind::config, "gumbel_temp must be positive");
  CK_CHECK(embed_dim >= 1, ErrKind::config, "embed_dim must be positive");
  CK_CHECK(lambda_opt >= 0.0 && lambda_prior >= 0.0, ErrKind::config,
           "loss weights must be nonnegative");
  CK_CHECK(v_r_mode == "fixed" || v_r_mode == "learned", ErrKind::config,
           "v_r_mode must be fixed or learned");
  CK_CHECK(st_mode == "hard_st" || st_mode == "gumbel", ErrKind::config,
           "st_mode must be hard_st or gumbel");
  CK_CHECK(v_r.defined() && v_r.rank() == 1 && v_r.dim(0) == embed_dim, ErrKind::dim,
           "v_r must have length embed_dim");
}

std::vector<Tensor> orbit_embeddings(const Parameters& s_params, const NetSpec& spec,
                                     const Tensor& x, const Group& group, const CanonConfig& cfg,
                                     std::vector<Tensor>* orbit_out, const std::string& prefix) {
  cfg.validate();
  CK_CHECK(cfg.embed_dim == spec.embed_dim, ErrKind::dim,
           "config embed_dim " + std::to_string(cfg.embed_dim) + " does not match backbone " +
               std::to_string(spec.embed_dim));
  std::vector<Tensor> views = orbit(group, x);
  std::vector<Tensor> embs(views.size());
  parallel_for(static_cast<int>(views.size()), [&](int i) {
    Tensor e = backbone_forward(s_params, spec, views[static_cast<size_t>(i)], prefix);
    embs[static_cast<size_t>(i)] = cfg.normalize_embeddings ? l2_normalize(e) : e;
  });
  if (orbit_out) *orbit_out = std::move(views);
  return embs;
}

Tensor energies(const Parameters& s_params, const NetSpec& spec, const Tensor& x,
                const Group& group, const CanonConfig& cfg, std::vector<Tensor>* embeddings_out,
                std::vector<Tensor>* orbit_out, const std::string& prefix) {
  std::vector<Tensor> embs = orbit_embeddings(s_params, spec, x, group, cfg, orbit_out, prefix);
  std::vector<Tensor> es;
  es.reserve(embs.size());
  for (const auto& e : embs) es.push_back(scale(dot(cfg.v_r, e), 1.0 / cfg.tau));
  if (embeddings_out) *embeddings_out = std::move(embs);
  return stack_scalars(es);
}

CanonResult canonicalize(const Parameters& s_params, const NetSpec& spec, const Tensor& x,
                         const Group& group, const CanonConfig& cfg, const std::string& prefix) {
  CanonResult res;
  res.energies = energies(s_params, spec, x, group, cfg, &res.embeddings, &res.orbit, prefix);
  res.probs = softmax(res.energies, 1.0);
  res.selected_index = argmax(res.energies.data());
  res.selected = group.elements()[static_cast<size_t>(res.selected_index)];
  res.canonical = res.orbit[static_cast<size_t>(res.selected_index)];
  return res;
}

CanonResult direct_canonicalize(const Parameters& gcnn_params, const NetSpec& spec,
                                const Tensor& x, const Group& group, const std::string& prefix) {
  CK_CHECK(group.name() == "c4" || group.name() == "d4", ErrKind::config,
           "direct_canonicalize supports groups c4 and d4 only");
  CanonResult res;
  res.energies = gcnn_forward(gcnn_params, spec, x, group, prefix);
  res.probs = softmax(res.energies, 1.0);
  res.selected_index = argmax(res.energies.data());
  res.selected = group.elements()[static_cast<size_t>(res.selected_index)];
  res.orbit = orbit(group, x);
  res.canonical = res.orbit[static_cast<size_t>(res.selected_index)];
  return res;
}

Tensor apply_canonicalized(const Parameters& pred_params, const NetSpec& pred_spec,
                           const std::function<CanonResult(const Tensor&)>& canon,
                           const Tensor& x, const Group& group, const std::string& output_kind) {
  CanonResult res = canon(x);
  Tensor y = predictor_forward(pred_params, pred_spec, res.canonical);
  return act_output(group, res.selected, y, output_kind);
}

Tensor st_select(const Tensor& probs, const std::vector<Tensor>& orbit_list, int selected) {
  return hard_select(probs, orbit_list, selected);
}

Tensor gumbel_select(const Tensor& probs, const std::vector<Tensor>& orbit_list,
                     double gumbel_temp, Rng& rng) {
  CK_CHECK(gumbel_temp > 0.0, ErrKind::config, "gumbel_temp must be positive");
  CK_CHECK(probs.rank() == 1 && probs.dim(0) == static_cast<int>(orbit_list.size()), ErrKind::dim,
           "gumbel_select: probs length must match orbit size");
  std::vector<double> noise(static_cast<size_t>(probs.dim(0)));
  for (double& g : noise) g = rng.gumbel();
  Tensor perturbed = add(log_clamped(probs), Tensor::from(probs.shape(), noise));
  const int hard = argmax(perturbed.data());
  return hard_select(softmax(perturbed, gumbel_temp), orbit_list, hard);
}

Tensor pairwise_mean_dot(const std::vector<Tensor>& embeddings) {
  const int n = static_cast<int>(embeddings.size());
  if (n < 2) return Tensor::scalar(0.0);
  Tensor acc;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      Tensor d = dot(embeddings[static_cast<size_t>(i)], embeddings[static_cast<size_t>(j)]);
      acc = acc.defined() ? add(acc, d) : d;
    }
  return scale(acc, 2.0 / (static_cast<double>(n) * (n - 1)));
}

namespace {

Tensor batch_mean(std::vector<Tensor> terms) {
  CK_CHECK(!terms.empty(), ErrKind::contract, "batch must be nonempty");
  Tensor acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Tensor orbit_separation_from(const std::vector<CanonResult>& results) {
  CK_CHECK(!results.empty(), ErrKind::contract, "batch must be nonempty");
  std::vector<Tensor> terms;
  terms.reserve(results.size());
  for (const auto& r : results) terms.push_back(pairwise_mean_dot(r.embeddings));
  return batch_mean(std::move(terms));
}

Tensor orbit_separation_loss(const Parameters& s_params, const NetSpec& spec,
                             const std::vector<Tensor>& batch, const Group& group,
                             const CanonConfig& cfg, const std::string& prefix) {
  CK_CHECK(!batch.empty(), ErrKind::contract, "batch must be nonempty");
  if (group.size() == 1) return Tensor::scalar(0.0);
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const auto& x : batch)
    terms.push_back(pairwise_mean_dot(orbit_embeddings(s_params, spec, x, group, cfg, nullptr, prefix)));
  return batch_mean(std::move(terms));
}

Tensor prior_loss_delta_from(const std::vector<CanonResult>& results) {
  CK_CHECK(!results.empty(), ErrKind::contract, "batch must be nonempty");
  std::vector<Tensor> terms;
  terms.reserve(results.size());
  for (const auto& r : results) terms.push_back(cross_entropy(r.probs, 0));
  return batch_mean(std::move(terms));
}

Tensor prior_loss_delta(const Parameters& s_params, const NetSpec& spec,
                        const std::vector<Tensor>& batch, const Group& group,
                        const CanonConfig& cfg, const std::string& prefix) {
  CK_CHECK(!batch.empty(), ErrKind::contract, "batch must be nonempty");
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const auto& x : batch) {
    Tensor e = energies(s_params, spec, x, group, cfg, nullptr, nullptr, prefix);
    terms.push_back(cross_entropy(softmax(e, 1.0), 0));
  }
  return batch_mean(std::move(terms));
}

Tensor prior_loss_kl(const std::vector<double>& p_d, const Tensor& probs) {
  CK_CHECK(probs.rank() == 1 && probs.dim(0) == static_cast<int>(p_d.size()), ErrKind::dim,
           "prior_loss_kl: distribution sizes differ");
  double mass = 0.0;
  for (double d : p_d) {
    CK_CHECK(d >= 0.0, ErrKind::config, "prior distribution has a negative entry");
    mass += d;
  }
  CK_CHECK(std::fabs(mass - 1.0) <= 1e-12, ErrKind::config, "prior distribution must sum to 1");
  double entropy_part = 0.0;  // sum of d*log d with 0*log0 := 0
  for (double d : p_d)
    if (d > 0.0) entropy_part += d * std::log(d);
  Tensor cross = dot(Tensor::from(probs.shape(), p_d), log_clamped(probs));
  return add(Tensor::scalar(entropy_part), scale(cross, -1.0));
}

double energy_condition_check(const Parameters& s_params, const NetSpec& spec, const Tensor& x,
                              const GroupElement& g, const GroupElement& g1, const Group& group,
                              const CanonConfig& cfg, const std::string& prefix) {
  cfg.validate();
  const GroupElement rhs_elem = group.compose(group.inverse(g1), g);
  auto energy_at = [&](const GroupElement& e, const Tensor& input) {
    Tensor view = act_image(group.inverse(e), input);
    Tensor emb = backbone_forward(s_params, spec, view, prefix);
    if (cfg.normalize_embeddings) emb = l2_normalize(emb);
    return scale(dot(cfg.v_r, emb), 1.0 / cfg.tau).item();
  };
  const double lhs = energy_at(g, act_image(g1, x));
  const double rhs = energy_at(rhs_elem, x);
  return std::fabs(lhs - rhs);
}

}  // namespace canonkit
