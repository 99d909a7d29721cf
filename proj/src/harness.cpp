#include "canonkit/harness.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "canonkit/rng.hpp"
#include "canonkit/threads.hpp"

namespace canonkit {

void TrainConfig::validate() const {
  CK_CHECK(setup == "vanilla" || setup == "augment" || setup == "equiadapt" ||
               setup == "equioptadapt",
           ErrKind::config, "unknown setup: " + setup);
  Group::from_name(group);
  CK_CHECK(epochs >= 0, ErrKind::config, "epochs must be nonnegative");
  CK_CHECK(batch_size >= 1, ErrKind::config, "batch_size must be positive");
  CK_CHECK(lr > 0.0, ErrKind::config, "lr must be positive");
  CK_CHECK(output_kind == "invariant", ErrKind::config,
           "training supports the invariant output kind only");
  validate_spec(predictor);
  CK_CHECK(predictor.head == "logits", ErrKind::config, "predictor must have a logits head");
  if (setup == "equioptadapt") {
    validate_spec(canonicalizer);
    CK_CHECK(canonicalizer.arch != "gcnn" && canonicalizer.head == "embed", ErrKind::config,
             "equioptadapt canonicalizer must be a plain backbone with an embed head");
    canon.validate();
    CK_CHECK(canon.embed_dim == canonicalizer.embed_dim, ErrKind::dim,
             "canon embed_dim does not match canonicalizer embed_dim");
  } else if (setup == "equiadapt") {
    validate_spec(canonicalizer);
    CK_CHECK(canonicalizer.arch == "gcnn", ErrKind::config,
             "equiadapt canonicalizer must be a gcnn");
    CK_CHECK(canonicalizer.group == group, ErrKind::config,
             "canonicalizer group does not match run group");
  }
  if (!train_predictor) {
    CK_CHECK(canonicalized(), ErrKind::config,
             "canonicalizer-only training requires a canonicalized setup");
    CK_CHECK(canon.lambda_opt > 0.0 || canon.lambda_prior > 0.0, ErrKind::config,
             "canonicalizer-only training needs a nonzero loss weight");
  }
}

namespace {

double now_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_dataset_fit(const TrainConfig& cfg, const Dataset& ds, const char* which) {
  CK_CHECK(ds.size() > 0, ErrKind::config, std::string(which) + " dataset is empty");
  const Tensor& im = ds.images[0];
  CK_CHECK(im.dim(0) == cfg.predictor.in_channels && im.dim(1) == cfg.predictor.image_size,
           ErrKind::config, std::string(which) + " dataset shape does not match the predictor spec");
  CK_CHECK(cfg.predictor.num_classes >= ds.num_classes, ErrKind::config,
           "predictor num_classes is smaller than the dataset's");
  if (cfg.canonicalized())
    CK_CHECK(im.dim(0) == cfg.canonicalizer.in_channels &&
                 im.dim(1) == cfg.canonicalizer.image_size,
             ErrKind::config,
             std::string(which) + " dataset shape does not match the canonicalizer spec");
}

std::vector<std::vector<int>> make_batches(const std::vector<int>& order, int batch_size) {
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

Tensor mean_of(const std::vector<Tensor>& terms) {
  Tensor acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

struct BatchLosses {
  Tensor objective;  // weighted sum of the active terms
  double task = 0.0, opt = 0.0, prior = 0.0, total = 0.0;
  int identity_hits = 0;
  int n = 0;
};

/// One batch of the per-setup objective. Augment transforms and gumbel
/// streams are pre-drawn so the parallel section stays deterministic.
BatchLosses run_batch(const Parameters& params, const TrainConfig& cfg, const CanonConfig& canon,
                      const Group& group, const Dataset& ds, const std::vector<int>& idx,
                      bool augmenting, Rng* augment_rng, Rng* gumbel_rng) {
  const int n = static_cast<int>(idx.size());
  BatchLosses out;
  out.n = n;
  const bool canonized = cfg.canonicalized();
  // gumbel_rng is null on snapshot passes, which fall back to the hard path
  const bool gumbel =
      cfg.setup == "equioptadapt" && canon.st_mode == "gumbel" && gumbel_rng != nullptr;

  std::vector<GroupElement> aug(static_cast<size_t>(n));
  if (augmenting)
    for (auto& g : aug) g = group.elements()[static_cast<size_t>(augment_rng->below(group.size()))];
  std::vector<uint64_t> gumbel_seeds(static_cast<size_t>(n), 0);
  if (canonized && gumbel && cfg.train_predictor)
    for (auto& s : gumbel_seeds) s = gumbel_rng->next_u64();

  std::vector<Tensor> task(static_cast<size_t>(n));
  std::vector<CanonResult> results(static_cast<size_t>(n));
  parallel_for(n, [&](int i) {
    const auto s = static_cast<size_t>(idx[static_cast<size_t>(i)]);
    Tensor x = augmenting ? act_image(aug[static_cast<size_t>(i)], ds.images[s]) : ds.images[s];
    Tensor pred_in = x;
    if (canonized) {
      CanonResult res = cfg.setup == "equiadapt"
                            ? direct_canonicalize(params, cfg.canonicalizer, x, group, "canon.")
                            : canonicalize(params, cfg.canonicalizer, x, group, canon, "canon.");
      if (cfg.train_predictor) {
        if (gumbel) {
          Rng local(gumbel_seeds[static_cast<size_t>(i)]);
          pred_in = gumbel_select(res.probs, res.orbit, canon.gumbel_temp, local);
        } else {
          pred_in = st_select(res.probs, res.orbit, res.selected_index);
        }
      }
      results[static_cast<size_t>(i)] = std::move(res);
    }
    if (cfg.train_predictor) {
      Tensor logits = predictor_forward(params, cfg.predictor, pred_in, "pred.");
      task[static_cast<size_t>(i)] = cross_entropy(softmax(logits, 1.0), ds.labels[s]);
    }
  });

  if (canonized) {
    for (const auto& res : results) out.identity_hits += res.selected_index == 0 ? 1 : 0;
  } else {
    out.identity_hits = n;
  }

  auto add_term = [&](const Tensor& t, double w) {
    Tensor wt = w == 1.0 ? t : scale(t, w);
    out.objective = out.objective.defined() ? add(out.objective, wt) : wt;
  };
  if (cfg.train_predictor) {
    Tensor tl = mean_of(task);
    out.task = tl.item();
    add_term(tl, 1.0);
  }
  if (cfg.setup == "equioptadapt" && canon.lambda_opt > 0.0 && group.size() > 1) {
    Tensor ol = orbit_separation_from(results);
    out.opt = ol.item();
    add_term(ol, canon.lambda_opt);
  }
  if (canonized && canon.lambda_prior > 0.0) {
    Tensor pl = prior_loss_delta_from(results);
    out.prior = pl.item();
    add_term(pl, canon.lambda_prior);
  }
  out.total = out.task + canon.lambda_opt * out.opt + canon.lambda_prior * out.prior;
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& train_ds, const Dataset& val_ds) {
  cfg.validate();
  train_ds.validate();
  check_dataset_fit(cfg, train_ds, "train");
  if (val_ds.size() > 0) val_ds.validate();

  const Group group = Group::from_name(cfg.group);
  TrainResult result;
  Parameters& params = result.params;
  params.merge("pred.", init_params(cfg.predictor, mix_seed(cfg.seed, 1)));
  CanonConfig canon = cfg.canon;
  if (cfg.canonicalized()) {
    params.merge("canon.", init_params(cfg.canonicalizer, mix_seed(cfg.seed, 2)));
    if (cfg.setup == "equioptadapt") {
      // carried in the checkpoint either way; fixed mode takes no gradient
      canon.v_r = canon.v_r.detached_copy();
      params.add("canon.v_r", canon.v_r);
      params.at("canon.v_r").set_requires_grad(canon.v_r_mode == "learned");
    }
  }

  Adam opt;
  opt.lr = cfg.lr;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.eps = cfg.eps;
  Rng shuffle_rng(mix_seed(cfg.seed, 3));
  Rng augment_rng(mix_seed(cfg.seed, 4));
  Rng gumbel_rng(mix_seed(cfg.seed, 5));
  const bool augmenting = cfg.setup == "augment";

  std::vector<int> order(static_cast<size_t>(train_ds.size()));
  for (int i = 0; i < train_ds.size(); ++i) order[static_cast<size_t>(i)] = i;

  const auto t0 = std::chrono::steady_clock::now();
  auto emit = [&](int epoch, double task_sum, double opt_sum, double prior_sum, double total_sum,
                  int64_t id_hits, int64_t samples) {
    EpochLog row;
    row.epoch = epoch;
    row.task_loss = task_sum / static_cast<double>(samples);
    row.opt_loss = opt_sum / static_cast<double>(samples);
    row.prior_loss = prior_sum / static_cast<double>(samples);
    row.total_loss = total_sum / static_cast<double>(samples);
    row.identity_metric = static_cast<double>(id_hits) / static_cast<double>(samples);
    row.wall_seconds = now_since(t0);
    result.log.push_back(row);
  };

  // Row 0 snapshots the untrained state on untransformed data; no updates.
  {
    double ts = 0, os = 0, ps = 0, tot = 0;
    int64_t hits = 0;
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      BatchLosses b = run_batch(params, cfg, canon, group, train_ds, batch, false, nullptr, nullptr);
      ts += b.task * b.n;
      os += b.opt * b.n;
      ps += b.prior * b.n;
      tot += b.total * b.n;
      hits += b.identity_hits;
    }
    emit(0, ts, os, ps, tot, hits, train_ds.size());
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double ts = 0, os = 0, ps = 0, tot = 0;
    int64_t hits = 0;
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      params.zero_grad();
      BatchLosses b =
          run_batch(params, cfg, canon, group, train_ds, batch, augmenting, &augment_rng, &gumbel_rng);
      backward(b.objective);
      opt.step(params);
      ts += b.task * b.n;
      os += b.opt * b.n;
      ps += b.prior * b.n;
      tot += b.total * b.n;
      hits += b.identity_hits;
    }
    emit(epoch, ts, os, ps, tot, hits, train_ds.size());
  }
  return result;
}

Metrics evaluate(const Parameters& params, const TrainConfig& cfg, const Dataset& test_ds) {
  cfg.validate();
  test_ds.validate();
  check_dataset_fit(cfg, test_ds, "test");
  const Group group = Group::from_name(cfg.group);
  const int n = test_ds.size();
  CanonConfig canon = cfg.canon;
  if (cfg.setup == "equioptadapt" && params.has("canon.v_r"))
    canon.v_r = params.at("canon.v_r");

  auto predict = [&](const Tensor& x, uint8_t* identity_sel) -> int {
    if (cfg.canonicalized()) {
      CanonResult res = cfg.setup == "equiadapt"
                            ? direct_canonicalize(params, cfg.canonicalizer, x, group, "canon.")
                            : canonicalize(params, cfg.canonicalizer, x, group, canon, "canon.");
      if (identity_sel) *identity_sel = res.selected_index == 0 ? 1 : 0;
      return argmax(predictor_forward(params, cfg.predictor, res.canonical, "pred.").data());
    }
    if (identity_sel) *identity_sel = 1;
    return argmax(predictor_forward(params, cfg.predictor, x, "pred.").data());
  };

  Metrics m;
  m.total = n;
  m.g_total = static_cast<int64_t>(n) * group.size();
  std::vector<uint8_t> correct(static_cast<size_t>(n)), idhit(static_cast<size_t>(n));
  parallel_for(n, [&](int i) {
    const auto s = static_cast<size_t>(i);
    correct[s] = predict(test_ds.images[s], &idhit[s]) == test_ds.labels[s] ? 1 : 0;
  });
  for (int i = 0; i < n; ++i) {
    m.correct += correct[static_cast<size_t>(i)];
    m.identity_hits += idhit[static_cast<size_t>(i)];
  }
  // element 0 is the identity: its pass would recompute the plain accuracy
  m.g_correct = m.correct;
  for (int gi = 1; gi < group.size(); ++gi) {
    const GroupElement g = group.elements()[static_cast<size_t>(gi)];
    std::vector<uint8_t> gc(static_cast<size_t>(n));
    parallel_for(n, [&](int i) {
      const auto s = static_cast<size_t>(i);
      gc[s] = predict(act_image(g, test_ds.images[s]), nullptr) == test_ds.labels[s] ? 1 : 0;
    });
    for (int i = 0; i < n; ++i) m.g_correct += gc[static_cast<size_t>(i)];
  }
  m.acc = static_cast<double>(m.correct) / static_cast<double>(m.total);
  m.g_avg_acc = static_cast<double>(m.g_correct) / static_cast<double>(m.g_total);
  m.identity_metric = static_cast<double>(m.identity_hits) / static_cast<double>(m.total);
  return m;
}

namespace {

Parameters detach_all(const Parameters& p) {
  Parameters q;
  for (const auto& [name, t] : p.items) q.items.emplace(name, t.detached_copy());
  return q;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

BenchReport benchmark_canon(const CanonicalizerSetup& a, const CanonicalizerSetup& b,
                            const Dataset& ds, int repeats, int batch_size) {
  CK_CHECK(repeats >= 1, ErrKind::config, "repeats must be positive");
  ds.validate();
  CK_CHECK(ds.size() > 0, ErrKind::config, "benchmark dataset is empty");
  for (const auto* s : {&a, &b})
    CK_CHECK(s->kind == "energy" || s->kind == "direct", ErrKind::config,
             "canonicalizer kind must be energy or direct");

  const int64_t pa = a.params.count(), pb = b.params.count();
  const double budget = static_cast<double>(std::max(pa, pb)) / static_cast<double>(std::min(pa, pb));
  CK_CHECK(budget <= 1.25, ErrKind::config,
           "parameter budgets differ by more than 25%: " + std::to_string(pa) + " vs " +
               std::to_string(pb));

  std::vector<int> order(static_cast<size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<size_t>(i)] = i;
  const auto batches = make_batches(order, batch_size);

  const int saved_threads = get_num_threads();
  set_num_threads(1);  // timing runs sequentially to avoid contention noise
  BenchReport report;
  auto run_entry = [&](const CanonicalizerSetup& s, BenchEntry& entry) {
    entry.name = s.name;
    entry.param_count = s.params.count();
    const Group group = Group::from_name(s.group);
    const Parameters frozen = detach_all(s.params);
    auto stage = [&](const Tensor& x) {
      if (s.kind == "energy")
        canonicalize(frozen, s.spec, x, group, s.canon);
      else
        direct_canonicalize(frozen, s.spec, x, group);
    };
    auto pass = [&] {
      for (const auto& batch : batches)
        for (int i : batch) stage(ds.images[static_cast<size_t>(i)]);
    };
    pass();  // warmup
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      pass();
      entry.per_batch_seconds.push_back(now_since(t0) / static_cast<double>(batches.size()));
    }
    entry.median_seconds = quantile(entry.per_batch_seconds, 0.5);
    entry.iqr_seconds =
        quantile(entry.per_batch_seconds, 0.75) - quantile(entry.per_batch_seconds, 0.25);
  };
  run_entry(a, report.first);
  run_entry(b, report.second);
  set_num_threads(saved_threads);
  report.ratio = report.first.median_seconds / report.second.median_seconds;
  return report;
}

std::vector<CurvePoint> canon_training_curve(const std::vector<EpochLog>& log) {
  double first_wall = 0.0;
  for (const auto& row : log)
    if (row.epoch >= 1) {
      first_wall = row.wall_seconds;
      break;
    }
  std::vector<CurvePoint> curve;
  curve.reserve(log.size());
  for (const auto& row : log) {
    CurvePoint p;
    p.epoch = row.epoch;
    p.wall_seconds = row.wall_seconds;
    p.relative_wall = first_wall > 0.0 ? row.wall_seconds / first_wall : 0.0;
    p.identity_metric = row.identity_metric;
    curve.push_back(p);
  }
  return curve;
}

// ---- checkpoint container -------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'A', 'N', 'O', 'N', 'K', 'I', 'T'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a(const uint8_t* p, size_t n) {
  uint64_t h = 1469598103934665603ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t off = 0;
  void need(size_t n) const {
    CK_CHECK(off + n <= buf.size(), ErrKind::artifact, "truncated checkpoint");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[off + static_cast<size_t>(i)]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[off + static_cast<size_t>(i)]) << (8 * i);
    off += 8;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + off), n);
    off += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Parameters& params, const std::string& config_json,
                     const std::string& path) {
  std::vector<uint8_t> region;
  put_u64(region, config_json.size());
  region.insert(region.end(), config_json.begin(), config_json.end());
  put_u32(region, static_cast<uint32_t>(params.items.size()));
  for (const auto& [name, t] : params.items) {
    put_u32(region, static_cast<uint32_t>(name.size()));
    region.insert(region.end(), name.begin(), name.end());
    put_u32(region, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(region, static_cast<uint32_t>(d));
    for (double v : t.data()) put_u64(region, std::bit_cast<uint64_t>(v));
  }
  std::ofstream out(path, std::ios::binary);
  CK_CHECK(out.good(), ErrKind::artifact, "cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  std::vector<uint8_t> header;
  put_u32(header, kVersion);
  put_u64(header, fnv1a(region.data(), region.size()));
  out.write(reinterpret_cast<const char*>(header.data()), static_cast<long>(header.size()));
  out.write(reinterpret_cast<const char*>(region.data()), static_cast<long>(region.size()));
  CK_CHECK(out.good(), ErrKind::artifact, "write failed: " + path);
}

std::pair<Parameters, std::string> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  CK_CHECK(in.good(), ErrKind::artifact, "cannot open checkpoint: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CK_CHECK(buf.size() >= 20, ErrKind::artifact, "truncated checkpoint");
  CK_CHECK(std::memcmp(buf.data(), kMagic, 8) == 0, ErrKind::artifact, "bad checkpoint magic");
  Reader r{buf, 8};
  const uint32_t version = r.u32();
  CK_CHECK(version == kVersion, ErrKind::artifact,
           "unsupported checkpoint version: " + std::to_string(version));
  const uint64_t digest = r.u64();
  CK_CHECK(fnv1a(buf.data() + r.off, buf.size() - r.off) == digest, ErrKind::artifact,
           "checkpoint digest mismatch");

  const uint64_t cfg_len = r.u64();
  const std::string config_json = r.str(cfg_len);
  const uint32_t count = r.u32();
  Parameters params;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const uint32_t rank = r.u32();
    CK_CHECK(rank >= 1 && rank <= 8, ErrKind::artifact, "corrupt tensor rank in checkpoint");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    std::vector<double> data(static_cast<size_t>(numel(shape)));
    for (auto& v : data) v = std::bit_cast<double>(r.u64());
    params.add(name, Tensor::from(std::move(shape), std::move(data)));
  }
  CK_CHECK(r.off == buf.size(), ErrKind::artifact, "trailing bytes in checkpoint");
  return {std::move(params), config_json};
}

}  // namespace canonkit
