#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "canonkit/canon.hpp"
#include "canonkit/data.hpp"
#include "canonkit/error.hpp"
#include "canonkit/gradcheck.hpp"
#include "canonkit/harness.hpp"
#include "canonkit/nets.hpp"
#include "canonkit/rng.hpp"
#include "canonkit/threads.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace canonkit;

namespace {

// seed streams: 7 reference vector, 11 data split, 12..13 bench params
constexpr uint64_t kStreamVr = 7;
constexpr uint64_t kStreamSplit = 11;

std::string fmt(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  CK_CHECK(j.is_object(), ErrKind::config, where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    CK_CHECK(allowed.count(it.key()) != 0, ErrKind::config,
             "unknown config key: " + where + it.key());
}

const std::set<std::string> kSpecKeys = {"arch",      "in_channels", "image_size",
                                         "channels",  "kernel",      "embed_dim",
                                         "num_classes", "dense_channels", "head", "group"};

NetSpec spec_from_json(const json& j, const std::string& where) {
  check_keys(j, kSpecKeys, where + ".");
  NetSpec s;
  s.arch = j.value("arch", s.arch);
  s.in_channels = j.value("in_channels", s.in_channels);
  s.image_size = j.value("image_size", s.image_size);
  s.channels = j.value("channels", s.channels);
  s.kernel = j.value("kernel", s.kernel);
  s.embed_dim = j.value("embed_dim", s.embed_dim);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.dense_channels = j.value("dense_channels", s.dense_channels);
  s.head = j.value("head", s.head);
  s.group = j.value("group", s.group);
  return s;
}

const std::set<std::string> kTrainKeys = {
    "setup",      "group",       "epochs",     "batch_size",      "lr",
    "beta1",      "beta2",       "eps",        "seed",            "train_predictor",
    "output_kind", "tau",        "v_r_mode",   "normalize_embeddings", "st_mode",
    "gumbel_temp", "lambda_opt", "lambda_prior", "predictor",     "canonicalizer"};

TrainConfig train_config_from_json(const json& j) {
  check_keys(j, kTrainKeys, "");
  TrainConfig cfg;
  cfg.setup = j.value("setup", cfg.setup);
  cfg.group = j.value("group", cfg.group);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.eps = j.value("eps", cfg.eps);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.train_predictor = j.value("train_predictor", cfg.train_predictor);
  cfg.output_kind = j.value("output_kind", cfg.output_kind);
  if (j.contains("predictor")) cfg.predictor = spec_from_json(j.at("predictor"), "predictor");
  if (j.contains("canonicalizer"))
    cfg.canonicalizer = spec_from_json(j.at("canonicalizer"), "canonicalizer");
  cfg.canon.tau = j.value("tau", cfg.canon.tau);
  cfg.canon.v_r_mode = j.value("v_r_mode", cfg.canon.v_r_mode);
  cfg.canon.normalize_embeddings = j.value("normalize_embeddings", cfg.canon.normalize_embeddings);
  cfg.canon.st_mode = j.value("st_mode", cfg.canon.st_mode);
  cfg.canon.gumbel_temp = j.value("gumbel_temp", cfg.canon.gumbel_temp);
  cfg.canon.lambda_opt = j.value("lambda_opt", cfg.canon.lambda_opt);
  cfg.canon.lambda_prior = j.value("lambda_prior", cfg.canon.lambda_prior);
  if (cfg.setup == "equioptadapt") {
    cfg.canon.embed_dim = cfg.canonicalizer.embed_dim;
    cfg.canon.v_r = CanonConfig::make(cfg.canon.embed_dim, mix_seed(cfg.seed, kStreamVr)).v_r;
  }
  return cfg;
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  CK_CHECK(in.good(), ErrKind::config, "cannot open config: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrKind::parse, "config parse error: " + std::string(e.what()));
  }
}

void apply_overrides(json& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    CK_CHECK(eq != std::string::npos && eq > 0, ErrKind::config,
             "--set expects key=value, got: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;  // unquoted strings pass through
    }
    json* p = &cfg;
    size_t start = 0;
    for (size_t dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
      p = &(*p)[key.substr(start, dot - start)];
      start = dot + 1;
    }
    (*p)[key.substr(start)] = value;
  }
}

std::string resolve_data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("CANONKIT_DATA_DIR")) return env;
  fail(ErrKind::config, "data dir not set (use --data-dir or CANONKIT_DATA_DIR)");
}

Dataset load_split(const std::string& dir, const std::string& split) {
  const std::string images = dir + "/" + split + "-images-idx3-ubyte";
  const std::string labels = dir + "/" + split + "-labels-idx1-ubyte";
  CK_CHECK(fs::exists(images), ErrKind::config, "dataset not found: " + images);
  CK_CHECK(fs::exists(labels), ErrKind::config, "dataset not found: " + labels);
  return load_idx(images, labels);
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
  fs::create_directories(dir);
  const std::string path = dir + "/" + name;
  std::ofstream out(path, std::ios::binary);  // binary keeps LF endings
  CK_CHECK(out.good(), ErrKind::artifact, "cannot write: " + path);
  return out;
}

// ---- subcommands ----------------------------------------------------------

struct GenDataArgs {
  std::string data_dir;
  int count = 2500;
  int classes = 4;
  int image_size = 16;
  double train_frac = 0.8;
  uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& a) {
  const std::string dir = resolve_data_dir(a.data_dir);
  CK_CHECK(a.classes > 0 && a.count % a.classes == 0, ErrKind::config,
           "count must be a positive multiple of classes");
  CK_CHECK(a.train_frac > 0.0 && a.train_frac < 1.0, ErrKind::config,
           "train-frac must be in (0,1)");
  Dataset all = gen_shapes(a.seed, a.count / a.classes, a.classes, a.image_size);
  auto parts = split(all, {a.train_frac, 1.0 - a.train_frac}, mix_seed(a.seed, kStreamSplit));
  fs::create_directories(dir);
  save_idx(parts[0], dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
  save_idx(parts[1], dir + "/test-images-idx3-ubyte", dir + "/test-labels-idx1-ubyte");
  json meta = {{"seed", a.seed},
               {"classes", a.classes},
               {"count", a.count},
               {"image_size", a.image_size},
               {"train_count", parts[0].size()},
               {"test_count", parts[1].size()},
               {"stabilizer", "trivial"},
               {"source", "gen_shapes"}};
  auto out = open_out(dir, "meta.json");
  out << meta.dump(2) << "\n";
  std::cout << "wrote " << parts[0].size() << " train / " << parts[1].size() << " test samples to "
            << dir << "\n";
  return 0;
}

struct RunArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = ".";
  std::string data_dir;
  std::string checkpoint;
  uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
};

int cmd_train(const RunArgs& a) {
  json cfg_json = load_config(a.config_path);
  apply_overrides(cfg_json, a.sets);
  if (a.seed_given) cfg_json["seed"] = a.seed;
  TrainConfig cfg;
  try {
    cfg = train_config_from_json(cfg_json);
  } catch (const json::exception& e) {
    fail(ErrKind::parse, "config type error: " + std::string(e.what()));
  }
  const std::string dir = resolve_data_dir(a.data_dir);
  Dataset train_ds = load_split(dir, "train");
  Dataset test_ds = load_split(dir, "test");

  TrainResult res = train(cfg, train_ds, test_ds);
  for (const auto& row : res.log)
    std::cout << "epoch " << row.epoch << "  task " << row.task_loss << "  opt " << row.opt_loss
              << "  prior " << row.prior_loss << "  total " << row.total_loss << "  identity "
              << row.identity_metric << "  wall " << row.wall_seconds << "s\n";

  std::string overrides = "none";
  if (!a.sets.empty()) {
    overrides.clear();
    for (size_t i = 0; i < a.sets.size(); ++i) overrides += (i ? " " : "") + a.sets[i];
  }
  {
    auto out = open_out(a.out_dir, "train_log.csv");
    out << "# config: " << a.config_path << "\n";
    out << "# overrides: " << overrides << "\n";
    out << "epoch,task_loss,opt_loss,prior_loss,total_loss,identity_metric,wall_seconds\n";
    for (const auto& r : res.log)
      out << r.epoch << ',' << fmt(r.task_loss) << ',' << fmt(r.opt_loss) << ','
          << fmt(r.prior_loss) << ',' << fmt(r.total_loss) << ',' << fmt(r.identity_metric) << ','
          << fmt(r.wall_seconds) << "\n";
  }
  {
    auto out = open_out(a.out_dir, "curve.csv");
    out << "# relative_wall = wall_seconds / wall_seconds(epoch 1)\n";
    out << "epoch,wall_seconds,relative_wall,identity_metric\n";
    for (const auto& p : canon_training_curve(res.log))
      out << p.epoch << ',' << fmt(p.wall_seconds) << ',' << fmt(p.relative_wall) << ','
          << fmt(p.identity_metric) << "\n";
  }
  const std::string ckpt =
      a.checkpoint.empty() ? a.out_dir + "/checkpoint.ck" : a.checkpoint;
  fs::create_directories(fs::path(ckpt).parent_path().empty() ? "." : fs::path(ckpt).parent_path().string());
  save_checkpoint(res.params, cfg_json.dump(2), ckpt);
  std::cout << "checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_eval(const RunArgs& a) {
  CK_CHECK(!a.checkpoint.empty(), ErrKind::config, "--checkpoint is required");
  auto [params, config_json] = load_checkpoint(a.checkpoint);
  json cfg_json;
  try {
    cfg_json = json::parse(config_json);
  } catch (const json::exception& e) {
    fail(ErrKind::artifact, "checkpoint config is not valid JSON: " + std::string(e.what()));
  }
  TrainConfig cfg = train_config_from_json(cfg_json);
  if (params.has("canon.v_r")) cfg.canon.v_r = params.at("canon.v_r").detached_copy();
  const std::string dir = resolve_data_dir(a.data_dir);
  Dataset test_ds = load_split(dir, "test");

  Metrics m = evaluate(params, cfg, test_ds);
  auto out = open_out(a.out_dir, "metrics.csv");
  out << "setup,group,acc,g_avg_acc,identity_metric\n";
  out << cfg.setup << ',' << cfg.group << ',' << fmt(m.acc) << ',' << fmt(m.g_avg_acc) << ','
      << fmt(m.identity_metric) << "\n";
  std::printf("%-14s %-6s %-10s %-10s %-10s\n", "setup", "group", "acc", "g_avg_acc", "identity");
  std::printf("%-14s %-6s %-10.4f %-10.4f %-10.4f\n", cfg.setup.c_str(), cfg.group.c_str(), m.acc,
              m.g_avg_acc, m.identity_metric);
  return 0;
}

const std::set<std::string> kBenchKeys = {"count",   "image_size", "num_classes", "batch_size",
                                          "repeats", "seed",       "first",       "second"};
const std::set<std::string> kBenchSideKeys = {"name", "kind",
                                              "group", "spec", "tau", "normalize_embeddings"};

CanonicalizerSetup bench_side_from_json(const json& j, const std::string& where, uint64_t seed,
                                        uint64_t stream) {
  check_keys(j, kBenchSideKeys, where + ".");
  CanonicalizerSetup s;
  s.name = j.value("name", where);
  s.kind = j.value("kind", std::string("energy"));
  s.group = j.value("group", std::string("c4"));
  CK_CHECK(j.contains("spec"), ErrKind::config, where + ".spec is required");
  s.spec = spec_from_json(j.at("spec"), where + ".spec");
  s.params = init_params(s.spec, mix_seed(seed, stream));
  if (s.kind == "energy") {
    s.canon.embed_dim = s.spec.embed_dim;
    s.canon.tau = j.value("tau", s.canon.tau);
    s.canon.normalize_embeddings = j.value("normalize_embeddings", s.canon.normalize_embeddings);
    s.canon.v_r = CanonConfig::make(s.canon.embed_dim, mix_seed(seed, stream + 2)).v_r;
    s.params.add("v_r", s.canon.v_r);  // counts toward the parameter budget
    s.params.at("v_r").set_requires_grad(false);
  }
  return s;
}

int cmd_bench(const RunArgs& a) {
  json cfg = load_config(a.config_path);
  apply_overrides(cfg, a.sets);
  check_keys(cfg, kBenchKeys, "");
  const uint64_t seed = a.seed_given ? a.seed : cfg.value("seed", 0ULL);
  const int count = cfg.value("count", 64);
  const int image_size = cfg.value("image_size", 16);
  const int num_classes = cfg.value("num_classes", 4);
  const int batch_size = cfg.value("batch_size", 16);
  const int repeats = cfg.value("repeats", 5);
  CK_CHECK(cfg.contains("first") && cfg.contains("second"), ErrKind::config,
           "bench config needs first and second canonicalizer entries");
  CK_CHECK(num_classes > 0 && count % num_classes == 0, ErrKind::config,
           "count must be a positive multiple of num_classes");
  CanonicalizerSetup first = bench_side_from_json(cfg.at("first"), "first", seed, 12);
  CanonicalizerSetup second = bench_side_from_json(cfg.at("second"), "second", seed, 13);
  Dataset ds = gen_shapes(seed, count / num_classes, num_classes, image_size);

  BenchReport rep = benchmark_canon(first, second, ds, repeats, batch_size);
  auto out = open_out(a.out_dir, "bench.csv");
  out << "# first: " << rep.first.name << " (params=" << rep.first.param_count
      << ")  second: " << rep.second.name << " (params=" << rep.second.param_count << ")\n";
  out << "repeat,first_seconds,second_seconds\n";
  for (int r = 0; r < repeats; ++r)
    out << r << ',' << fmt(rep.first.per_batch_seconds[static_cast<size_t>(r)]) << ','
        << fmt(rep.second.per_batch_seconds[static_cast<size_t>(r)]) << "\n";
  out << "median," << fmt(rep.first.median_seconds) << ',' << fmt(rep.second.median_seconds)
      << "\n";
  std::printf("%s: median %.6fs iqr %.6fs (%lld params)\n", rep.first.name.c_str(),
              rep.first.median_seconds, rep.first.iqr_seconds,
              static_cast<long long>(rep.first.param_count));
  std::printf("%s: median %.6fs iqr %.6fs (%lld params)\n", rep.second.name.c_str(),
              rep.second.median_seconds, rep.second.iqr_seconds,
              static_cast<long long>(rep.second.param_count));
  std::printf("canonicalization ratio (first/second): %.4f\n", rep.ratio);
  return 0;
}

int cmd_gradcheck(uint64_t seed, const std::string& fault) {
  auto results = run_gradchecks(seed, fault);
  bool all = true;
  std::vector<std::string> offenders;
  for (const auto& r : results) {
    std::printf("%-24s max_rel_err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                r.pass ? "ok" : "FAIL");
    if (!r.pass) offenders.push_back(r.name);
    all = all && r.pass;
  }
  if (!all) {
    std::string list;
    for (size_t i = 0; i < offenders.size(); ++i) list += (i ? ", " : "") + offenders[i];
    std::cout << "gradient check failed: " << list << "\n";
    return 1;
  }
  std::cout << "all " << results.size() << " gradient checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optimization-based canonicalization experiments on synthetic image corpora"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic IDX corpus");
  gen->add_option("--data-dir", gd.data_dir, "target directory (or CANONKIT_DATA_DIR)");
  gen->add_option("--count", gd.count, "total sample count");
  gen->add_option("--classes", gd.classes, "number of classes");
  gen->add_option("--image-size", gd.image_size, "square image side");
  gen->add_option("--train-frac", gd.train_frac, "train split fraction");
  gen->add_option("--seed", gd.seed, "generation seed");

  RunArgs tr, ev, be;
  uint64_t gc_seed = 0;
  std::string gc_fault;
  int gc_threads = 1;

  auto add_common = [](CLI::App* sub, RunArgs& a, bool with_config) {
    if (with_config)
      sub->add_option("--config", a.config_path, "JSON config path")->required();
    sub->add_option("--set", a.sets, "dotted key=value config override")->take_all();
    sub->add_option("--out-dir", a.out_dir, "artifact directory");
    sub->add_option("--data-dir", a.data_dir, "dataset directory (or CANONKIT_DATA_DIR)");
    sub->add_option("--threads", a.threads, "worker threads (default 1)");
  };

  auto* train_cmd = app.add_subcommand("train", "train a setup and write a checkpoint");
  add_common(train_cmd, tr, true);
  auto* tr_seed = train_cmd->add_option("--seed", tr.seed, "overrides the config seed");
  train_cmd->add_option("--checkpoint", tr.checkpoint, "checkpoint path (default out-dir/checkpoint.ck)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, ev, false);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint path")->required();

  auto* bench_cmd = app.add_subcommand("bench", "time two canonicalizers on equal budgets");
  add_common(bench_cmd, be, true);
  auto* be_seed = bench_cmd->add_option("--seed", be.seed, "overrides the config seed");

  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference checks for every op");
  gc_cmd->add_option("--seed", gc_seed, "input draw seed");
  gc_cmd->add_option("--threads", gc_threads, "worker threads (default 1)");
  gc_cmd->add_option("--fault", gc_fault, "test fixture: skew one case's analytic gradients");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  tr.seed_given = tr_seed->count() > 0;
  be.seed_given = be_seed->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen_data(gd);
    if (train_cmd->parsed()) {
      set_num_threads(tr.threads);
      return cmd_train(tr);
    }
    if (eval_cmd->parsed()) {
      set_num_threads(ev.threads);
      return cmd_eval(ev);
    }
    if (bench_cmd->parsed()) {
      set_num_threads(be.threads);
      return cmd_bench(be);
    }
    if (gc_cmd->parsed()) {
      set_num_threads(gc_threads);
      return cmd_gradcheck(gc_seed, gc_fault);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrKind::artifact ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
