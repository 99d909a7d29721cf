#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "canonkit/canon.hpp"
#include "canonkit/data.hpp"
#include "canonkit/nets.hpp"
#include "canonkit/tensor.hpp"

namespace canonkit {

/// One experiment. The predictor always trains under the task loss unless
/// train_predictor is off (canonicalizer-only runs); canonicalizer fields are
/// consulted only for the canonicalized setups.
struct TrainConfig {
  std::string setup = "equioptadapt";  // vanilla | augment | equiadapt | equioptadapt
  std::string group = "c4";
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 0;
  bool train_predictor = true;
  std::string output_kind = "invariant";
  NetSpec predictor;
  NetSpec canonicalizer;
  CanonConfig canon;

  void validate() const;
  bool canonicalized() const { return setup == "equiadapt" || setup == "equioptadapt"; }
};

/// Row 0 is the pre-training state; later rows are averages over the epoch's
/// training batches. Loss columns hold raw component values; total applies
/// the lambda weights. wall_seconds counts from the start of train().
struct EpochLog {
  int epoch = 0;
  double task_loss = 0.0;
  double opt_loss = 0.0;
  double prior_loss = 0.0;
  double total_loss = 0.0;
  double identity_metric = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Parameters params;  // names prefixed "pred." / "canon."
  std::vector<EpochLog> log;
};

TrainResult train(const TrainConfig& cfg, const Dataset& train_ds, const Dataset& val_ds);

/// Counts are kept alongside the fractions so exact-equality claims
/// (g_avg_acc == acc) survive the division.
struct Metrics {
  double acc = 0.0;
  double g_avg_acc = 0.0;
  double identity_metric = 0.0;
  double canon_time_per_batch = 0.0;
  int64_t correct = 0;
  int64_t total = 0;
  int64_t g_correct = 0;
  int64_t g_total = 0;
  int64_t identity_hits = 0;
};

Metrics evaluate(const Parameters& params, const TrainConfig& cfg, const Dataset& test_ds);

/// A canonicalizer under timing: "energy" runs orbit + backbone energies +
/// selection; "direct" runs the G-CNN logits + selection.
struct CanonicalizerSetup {
  std::string name;
  std::string kind;  // energy | direct
  std::string group = "c4";
  NetSpec spec;
  Parameters params;
  CanonConfig canon;  // energy kind only
};

struct BenchEntry {
  std::string name;
  int64_t param_count = 0;
  std::vector<double> per_batch_seconds;  // one per repeat
  double median_seconds = 0.0;
  double iqr_seconds = 0.0;
};

struct BenchReport {
  BenchEntry first;
  BenchEntry second;
  double ratio = 0.0;  // first median / second median
};

/// Times the canonicalization stage only, sequentially, after one warmup
/// pass. Parameter budgets must agree within 25%.
BenchReport benchmark_canon(const CanonicalizerSetup& a, const CanonicalizerSetup& b,
                            const Dataset& ds, int repeats, int batch_size);

/// Identity metric against wall time during canonicalizer training; relative
/// wall time is normalized to the first epoch's cumulative seconds.
struct CurvePoint {
  int epoch = 0;
  double wall_seconds = 0.0;
  double relative_wall = 0.0;
  double identity_metric = 0.0;
};

std::vector<CurvePoint> canon_training_curve(const std::vector<EpochLog>& log);

void save_checkpoint(const Parameters& params, const std::string& config_json,
                     const std::string& path);
std::pair<Parameters, std::string> load_checkpoint(const std::string& path);

}  // namespace canonkit
