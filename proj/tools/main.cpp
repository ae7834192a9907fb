// iwprm: data generation, cold start, bi-level training, best-of-N
// evaluation and weight reporting for the synthetic step-reward benchmark.
//
// Exit codes: 0 success, 1 usage error, 2 validation failure (bad inputs,
// train/eval overlap, unbalanced sets), 3 numeric failure (non-finite loss).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "iwprm/bilevel.hpp"
#include "iwprm/checkpoint.hpp"
#include "iwprm/config.hpp"
#include "iwprm/dataset.hpp"
#include "iwprm/errors.hpp"
#include "iwprm/generator.hpp"
#include "iwprm/report.hpp"
#include "iwprm/selection.hpp"
#include "iwprm/vocab.hpp"

namespace fs = std::filesystem;
using namespace iwprm;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

OptKind opt_kind_from_name(const std::string& name) {
  if (name == "sgd") return OptKind::kSgd;
  if (name == "adamw") return OptKind::kAdamW;
  throw ValidationError("unknown optimizer '" + name + "' (expected sgd|adamw)");
}

const char* opt_kind_name(OptKind k) { return k == OptKind::kSgd ? "sgd" : "adamw"; }

// ---- typed config <-> key/value ---------------------------------------------

GenSpec genspec_from(const KvConfig& kv) {
  GenSpec s;
  s.seed = kv_get_uint(kv, "seed", s.seed);
  s.n_train = kv_get_int(kv, "n_train", s.n_train);
  s.n_meta = kv_get_int(kv, "n_meta", s.n_meta);
  s.n_eval_pools = kv_get_int(kv, "n_eval_pools", s.n_eval_pools);
  s.candidates_per_pool = static_cast<int>(kv_get_int(kv, "k", s.candidates_per_pool));
  s.chain_min = static_cast<int>(kv_get_int(kv, "chain_min", s.chain_min));
  s.chain_max = static_cast<int>(kv_get_int(kv, "chain_max", s.chain_max));
  s.step_error = kv_get_double(kv, "step_error", s.step_error);
  s.label_noise = kv_get_double(kv, "noise", s.label_noise);
  s.trivial_frac = kv_get_double(kv, "trivial", s.trivial_frac);
  s.workers = static_cast<int>(kv_get_int(kv, "workers", s.workers));
  return s;
}

KvConfig kv_from_genspec(const GenSpec& s) {
  KvConfig kv;
  kv["seed"] = std::to_string(s.seed);
  kv["n_train"] = std::to_string(s.n_train);
  kv["n_meta"] = std::to_string(s.n_meta);
  kv["n_eval_pools"] = std::to_string(s.n_eval_pools);
  kv["k"] = std::to_string(s.candidates_per_pool);
  kv["chain_min"] = std::to_string(s.chain_min);
  kv["chain_max"] = std::to_string(s.chain_max);
  kv["step_error"] = fmt_double(s.step_error);
  kv["noise"] = fmt_double(s.label_noise);
  kv["trivial"] = fmt_double(s.trivial_frac);
  return kv;
}

RunConfig runconfig_from(const KvConfig& kv) {
  RunConfig c;
  c.seed = kv_get_uint(kv, "seed", c.seed);
  c.strategy = strategy_from_name(kv_get(kv, "strategy", "table"));
  c.hypergrad_mode = hypergrad_mode_from_name(kv_get(kv, "hypergrad", "exact-unroll"));
  c.lower_opt = opt_kind_from_name(kv_get(kv, "lower_opt", "adamw"));
  c.iterations = kv_get_uint(kv, "iterations", c.iterations);
  c.stop_after = kv_get_uint(kv, "stop_after", c.stop_after);
  c.lower_lr = kv_get_double(kv, "lower_lr", c.lower_lr);
  c.lower_wd = kv_get_double(kv, "lower_wd", c.lower_wd);
  c.upper_lr = kv_get_double(kv, "upper_lr", c.upper_lr);
  c.upper_wd = kv_get_double(kv, "upper_wd", c.upper_wd);
  c.lower_batch = static_cast<int>(kv_get_int(kv, "lower_batch", c.lower_batch));
  c.meta_batch = static_cast<int>(kv_get_int(kv, "meta_batch", c.meta_batch));
  c.warmup_frac = kv_get_double(kv, "warmup_frac", c.warmup_frac);
  c.unroll_steps = static_cast<int>(kv_get_int(kv, "unroll_steps", c.unroll_steps));
  c.clip_lo = kv_get_double(kv, "clip_lo", c.clip_lo);
  c.clip_hi = kv_get_double(kv, "clip_hi", c.clip_hi);
  c.table_init = kv_get_double(kv, "table_init", c.table_init);
  c.embed_dim = kv_get_int(kv, "embed_dim", c.embed_dim);
  c.net_hidden = kv_get_int(kv, "net_hidden", c.net_hidden);
  c.checkpoint_every = kv_get_uint(kv, "checkpoint_every", c.checkpoint_every);
  c.eq2_literal = kv_get_bool(kv, "eq2_literal", c.eq2_literal);
  return c;
}

KvConfig kv_from_runconfig(const RunConfig& c) {
  KvConfig kv;
  kv["seed"] = std::to_string(c.seed);
  kv["strategy"] = strategy_name(c.strategy);
  kv["hypergrad"] = hypergrad_mode_name(c.hypergrad_mode);
  kv["lower_opt"] = opt_kind_name(c.lower_opt);
  kv["iterations"] = std::to_string(c.iterations);
  kv["lower_lr"] = fmt_double(c.lower_lr);
  kv["lower_wd"] = fmt_double(c.lower_wd);
  kv["upper_lr"] = fmt_double(c.upper_lr);
  kv["upper_wd"] = fmt_double(c.upper_wd);
  kv["lower_batch"] = std::to_string(c.lower_batch);
  kv["meta_batch"] = std::to_string(c.meta_batch);
  kv["warmup_frac"] = fmt_double(c.warmup_frac);
  kv["unroll_steps"] = std::to_string(c.unroll_steps);
  kv["clip_lo"] = fmt_double(c.clip_lo);
  kv["clip_hi"] = fmt_double(c.clip_hi);
  kv["table_init"] = fmt_double(c.table_init);
  kv["embed_dim"] = std::to_string(c.embed_dim);
  kv["net_hidden"] = std::to_string(c.net_hidden);
  kv["checkpoint_every"] = std::to_string(c.checkpoint_every);
  kv["eq2_literal"] = c.eq2_literal ? "true" : "false";
  return kv;
}

// ---- shared command state ----------------------------------------------------

struct CmdState {
  std::string config_path;
  KvConfig flags;  // only what the user set on the command line
  std::string out_dir;
  bool allow_overlap = false;

  KvConfig resolved() const {
    KvConfig kv;
    if (!config_path.empty()) kv = parse_config_file(config_path);
    for (const auto& [k, v] : flags) kv[k] = v;
    return kv;
  }

  fs::path out() const {
    std::string dir = out_dir;
    if (dir.empty()) {
      if (const char* env = std::getenv("IWPRM_OUT_DIR")) dir = env;
    }
    if (dir.empty()) {
      throw ValidationError("no output directory (use --out-dir or set IWPRM_OUT_DIR)");
    }
    fs::create_directories(dir);
    return dir;
  }
};

void add_common(CLI::App* cmd, CmdState& st) {
  cmd->add_option("--config", st.config_path, "key = value config file");
  cmd->add_option("--out-dir", st.out_dir, "output directory (or IWPRM_OUT_DIR)");
}

CLI::Option* add_kv(CLI::App* cmd, CmdState& st, const std::string& flag, const std::string& key,
                    const std::string& desc) {
  return cmd->add_option_function<std::string>(
      flag, [&st, key](const std::string& v) { st.flags[key] = v; }, desc);
}

void snapshot(const fs::path& out_dir, KvConfig kv, const CmdState& st) {
  kv["out_dir"] = out_dir.string();
  if (!st.config_path.empty()) kv["config"] = st.config_path;
  write_config_snapshot(out_dir / "resolved_config.txt", kv);
}

Vocab load_or_default_vocab(const fs::path& next_to) {
  const fs::path vocab_path = next_to.parent_path() / "vocab.tsv";
  if (fs::exists(vocab_path)) return Vocab::load(vocab_path);
  return synthetic_vocab(kChainModulus);
}

// ---- subcommands ---------------------------------------------------------------

int run_gen_data(const CmdState& st, bool no_balance) {
  const auto kv = st.resolved();
  GenSpec spec = genspec_from(kv);
  spec.validate();
  const fs::path out = st.out();

  auto data = generate(spec);
  const auto raw_train = data.train.size();
  const auto raw_meta = data.meta.size();
  std::vector<ReasoningTrajectory> train = std::move(data.train);
  std::vector<MetaSample> meta = std::move(data.meta);
  if (!no_balance) {
    train = balance_by_step_majority(train, spec.seed);
    meta = balance_by_correct(meta, spec.seed);
  }

  const auto meta_overlap = dedup_check(train, meta);
  const auto pool_overlap = dedup_check(train, data.pools);
  if (!st.allow_overlap && (!meta_overlap.empty() || !pool_overlap.empty())) {
    for (const auto& o : meta_overlap) {
      std::cerr << "overlap: train " << o.train_id << " vs meta " << o.other_id << "\n";
    }
    for (const auto& o : pool_overlap) {
      std::cerr << "overlap: train " << o.train_id << " vs pool " << o.other_id << "\n";
    }
    std::cerr << "error: train/eval overlap detected (use --allow-overlap to keep going)\n";
    return 2;
  }

  save_trajectories(out / "train.jsonl", train);
  save_meta(out / "meta.jsonl", meta);
  save_pools(out / "pools.jsonl", data.pools);
  auto kv_out = kv_from_genspec(spec);
  kv_out["workers"] = std::to_string(spec.workers);
  if (no_balance) kv_out["no_balance"] = "true";
  snapshot(out, kv_out, st);

  size_t noisy = 0, trivial = 0;
  for (const auto& t : train) {
    noisy += t.noisy.value_or(false) ? 1 : 0;
    trivial += t.trivial.value_or(false) ? 1 : 0;
  }
  std::printf("gen-data: train %zu (from %zu; noisy %zu, trivial %zu), meta %zu (from %zu), "
              "pools %zu\n",
              train.size(), raw_train, noisy, trivial, meta.size(), raw_meta,
              data.pools.size());
  return 0;
}

int run_cold_start(const CmdState& st, const std::string& train_path) {
  const auto kv = st.resolved();
  RunConfig cfg = runconfig_from(kv);
  cfg.strategy = StrategyKind::kUniform;  // cold start is plain SFT
  cfg.validate();
  const fs::path out = st.out();

  const auto train_set = load_trajectories(train_path);
  const Vocab vocab = synthetic_vocab(kChainModulus);
  PrmParams phi = init_prm(cfg, vocab);
  uint64_t steps = 0;
  phi = cold_start(std::move(phi), vocab, train_set, cfg, &steps);

  auto kv_out = kv_from_runconfig(cfg);
  kv_out["train"] = train_path;
  const uint64_t hash = config_hash(kv_out);
  Checkpoint ck = make_initial_checkpoint(cfg, phi, {}, hash);
  save_checkpoint(out / "cold_start.ckpt", ck);
  vocab.save(out / "vocab.tsv");
  snapshot(out, kv_out, st);
  std::printf("cold-start: %zu instances, %llu steps, checkpoint %s\n", train_set.size(),
              static_cast<unsigned long long>(steps), (out / "cold_start.ckpt").c_str());
  return 0;
}

int run_train(const CmdState& st, const std::string& train_path, const std::string& meta_path,
              const std::string& init_path, const std::string& resume_path) {
  const auto kv = st.resolved();
  RunConfig cfg = runconfig_from(kv);
  cfg.validate();
  const fs::path out = st.out();

  const auto train_set = load_trajectories(train_path);
  const auto meta_set = load_meta(meta_path);

  const auto overlap = dedup_check(train_set, meta_set);
  if (!overlap.empty() && !st.allow_overlap) {
    for (const auto& o : overlap) {
      std::cerr << "overlap: train " << o.train_id << " vs meta " << o.other_id << "\n";
    }
    std::cerr << "error: train/meta overlap detected (use --allow-overlap to keep going)\n";
    return 2;
  }

  auto kv_out = kv_from_runconfig(cfg);
  kv_out["train"] = train_path;
  kv_out["meta"] = meta_path;
  if (cfg.stop_after > 0) kv_out["stop_after"] = std::to_string(cfg.stop_after);
  const uint64_t hash = config_hash(kv_out);

  Checkpoint init;
  bool append_metrics = false;
  Vocab vocab = synthetic_vocab(kChainModulus);
  if (!resume_path.empty()) {
    init = load_checkpoint(resume_path);
    if (init.config_hash != hash) {
      throw ValidationError("resume: checkpoint config hash does not match this run");
    }
    vocab = load_or_default_vocab(resume_path);
    append_metrics = true;
  } else {
    if (init_path.empty()) {
      throw ValidationError("train: need --init (cold-start checkpoint) or --resume");
    }
    const Checkpoint cold = load_checkpoint(init_path);
    vocab = load_or_default_vocab(init_path);
    init = make_initial_checkpoint(cfg, cold.phi, train_set, hash);
  }

  MetricsCsv csv(out / "metrics.csv", append_metrics);
  MetricsSink metrics = [&](const MetricsRow& row) { csv.write(row); };
  CheckpointSink on_ckpt = [&](const Checkpoint& ck) {
    save_checkpoint(out / ("ckpt_" + std::to_string(ck.iteration) + ".ckpt"), ck);
  };

  const Checkpoint final_ck = train(cfg, vocab, train_set, meta_set, init, metrics, on_ckpt);
  save_checkpoint(out / "final.ckpt", final_ck);
  vocab.save(out / "vocab.tsv");
  snapshot(out, kv_out, st);
  std::printf("train: %s strategy, reached iteration %llu, final checkpoint %s\n",
              strategy_name(cfg.strategy), static_cast<unsigned long long>(final_ck.iteration),
              (out / "final.ckpt").c_str());
  return 0;
}

int run_eval(const CmdState& st, const std::string& pools_path, const std::string& ckpt_path,
             const std::string& method_name) {
  const auto pools = load_pools(pools_path);
  const fs::path out = st.out();

  Checkpoint ck;
  Vocab vocab = synthetic_vocab(kChainModulus);
  const bool have_ckpt = !ckpt_path.empty();
  if (have_ckpt) {
    ck = load_checkpoint(ckpt_path);
    vocab = load_or_default_vocab(ckpt_path);
  }

  std::vector<EvalMethod> methods;
  if (method_name == "all") {
    methods = {EvalMethod::kFirst, EvalMethod::kSelfConsistency};
    if (have_ckpt) methods.push_back(EvalMethod::kPrmBest);
  } else {
    methods = {eval_method_from_name(method_name)};
  }

  const int k = pools.empty() ? 0 : static_cast<int>(pools.front().candidates.size());
  std::vector<EvalRow> rows;
  for (EvalMethod m : methods) {
    const double acc = evaluate(pools, m, have_ckpt ? &ck.phi : nullptr,
                                have_ckpt ? &vocab : nullptr);
    rows.push_back(EvalRow{eval_method_name(m), k, acc, pools.size()});
    std::printf("eval: %-16s accuracy %.4f over %zu pools (K=%d)\n", eval_method_name(m), acc,
                pools.size(), k);
  }
  write_eval_report(out / "eval_report.csv", rows);

  KvConfig kv_out = st.resolved();
  kv_out["pools"] = pools_path;
  if (have_ckpt) kv_out["checkpoint"] = ckpt_path;
  kv_out["method"] = method_name;
  snapshot(out, kv_out, st);
  return 0;
}

int run_weights_report(const CmdState& st, const std::string& ckpt_path,
                       const std::string& train_path) {
  const auto train_set = load_trajectories(train_path);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Vocab vocab = load_or_default_vocab(ckpt_path);
  const fs::path out = st.out();

  const WeightsReport report = weights_report(ck, vocab, train_set);
  write_weights_csv(out / "weights.csv", report);

  if (report.has_provenance) {
    std::printf("weights-report: %zu instances, clean_mean %.4f, noisy_mean %.4f, auc %.4f\n",
                report.rows.size(), report.clean_mean, report.noisy_mean, report.auc);
  } else {
    std::printf("weights-report: %zu instances (no provenance flags; summary omitted)\n",
                report.rows.size());
  }

  KvConfig kv_out = st.resolved();
  kv_out["checkpoint"] = ckpt_path;
  kv_out["train"] = train_path;
  snapshot(out, kv_out, st);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"instance-reweighted step-level reward model training"};
  app.require_subcommand(1);

  CmdState gen_st, cold_st, train_st, eval_st, weights_st;
  bool no_balance = false;
  std::string train_path, meta_path, init_path, resume_path, pools_path, ckpt_path;
  std::string method = "all";

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark datasets");
  add_common(gen, gen_st);
  add_kv(gen, gen_st, "--seed", "seed", "generation seed");
  add_kv(gen, gen_st, "--n-train", "n_train", "training instances");
  add_kv(gen, gen_st, "--n-meta", "n_meta", "meta questions (each yields K samples)");
  add_kv(gen, gen_st, "--n-eval-pools", "n_eval_pools", "held-out candidate pools");
  add_kv(gen, gen_st, "--k", "k", "candidates per pool");
  add_kv(gen, gen_st, "--chain-min", "chain_min", "minimum chain length");
  add_kv(gen, gen_st, "--chain-max", "chain_max", "maximum chain length");
  add_kv(gen, gen_st, "--step-error", "step_error", "per-step corruption probability");
  add_kv(gen, gen_st, "--noise", "noise", "flipped-label instance fraction");
  add_kv(gen, gen_st, "--trivial", "trivial", "1-step instance fraction");
  add_kv(gen, gen_st, "--workers", "workers", "generation worker threads");
  gen->add_flag("--no-balance", no_balance, "skip class balancing");
  gen->add_flag("--allow-overlap", gen_st.allow_overlap, "do not abort on question overlap");

  auto* cold = app.add_subcommand("cold-start", "one SFT epoch to initialize the scorer");
  add_common(cold, cold_st);
  cold->add_option("--train", train_path, "training trajectories (jsonl)")->required();
  add_kv(cold, cold_st, "--seed", "seed", "run seed");
  add_kv(cold, cold_st, "--lower-lr", "lower_lr", "learning rate");
  add_kv(cold, cold_st, "--lower-wd", "lower_wd", "weight decay");
  add_kv(cold, cold_st, "--lower-batch", "lower_batch", "batch size");
  add_kv(cold, cold_st, "--lower-opt", "lower_opt", "sgd|adamw");
  add_kv(cold, cold_st, "--embed-dim", "embed_dim", "encoder width");
  add_kv(cold, cold_st, "--warmup-frac", "warmup_frac", "schedule warm-up fraction");

  auto* tr = app.add_subcommand("train", "bi-level instance-reweighted training");
  add_common(tr, train_st);
  tr->add_option("--train", train_path, "training trajectories (jsonl)")->required();
  tr->add_option("--meta", meta_path, "meta samples (jsonl)")->required();
  tr->add_option("--init", init_path, "cold-start checkpoint to start from");
  tr->add_option("--resume", resume_path, "checkpoint to resume");
  tr->add_flag("--allow-overlap", train_st.allow_overlap, "do not abort on question overlap");
  add_kv(tr, train_st, "--seed", "seed", "run seed");
  add_kv(tr, train_st, "--strategy", "strategy", "uniform|table|net");
  add_kv(tr, train_st, "--hypergrad", "hypergrad", "exact-unroll|sgd-proxy");
  add_kv(tr, train_st, "--lower-opt", "lower_opt", "sgd|adamw");
  add_kv(tr, train_st, "--iterations", "iterations", "outer iterations");
  add_kv(tr, train_st, "--stop-after", "stop_after", "pause after this iteration");
  add_kv(tr, train_st, "--lower-lr", "lower_lr", "lower learning rate");
  add_kv(tr, train_st, "--lower-wd", "lower_wd", "lower weight decay");
  add_kv(tr, train_st, "--upper-lr", "upper_lr", "upper learning rate (0 = strategy default)");
  add_kv(tr, train_st, "--upper-wd", "upper_wd", "upper weight decay");
  add_kv(tr, train_st, "--lower-batch", "lower_batch", "lower batch size");
  add_kv(tr, train_st, "--meta-batch", "meta_batch", "meta batch size");
  add_kv(tr, train_st, "--warmup-frac", "warmup_frac", "schedule warm-up fraction");
  add_kv(tr, train_st, "--clip-lo", "clip_lo", "table clip lower bound");
  add_kv(tr, train_st, "--clip-hi", "clip_hi", "table clip upper bound");
  add_kv(tr, train_st, "--embed-dim", "embed_dim", "encoder width");
  add_kv(tr, train_st, "--net-hidden", "net_hidden", "instance net hidden units");
  add_kv(tr, train_st, "--checkpoint-every", "checkpoint_every", "checkpoint cadence");
  tr->add_flag_function("--eq2-literal",
                        [&](int64_t) { train_st.flags["eq2_literal"] = "true"; },
                        "literal aggregation-loss target convention");

  auto* ev = app.add_subcommand("eval", "best-of-N evaluation on candidate pools");
  add_common(ev, eval_st);
  ev->add_option("--pools", pools_path, "candidate pools (jsonl)")->required();
  ev->add_option("--checkpoint", ckpt_path, "trained checkpoint (needed for prm-best)");
  ev->add_option("--method", method, "first|self-consistency|prm-best|all");

  auto* wr = app.add_subcommand("weights-report", "dump learned instance weights");
  add_common(wr, weights_st);
  wr->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  wr->add_option("--train", train_path, "training trajectories (jsonl)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_st, no_balance);
    if (cold->parsed()) return run_cold_start(cold_st, train_path);
    if (tr->parsed()) return run_train(train_st, train_path, meta_path, init_path, resume_path);
    if (ev->parsed()) return run_eval(eval_st, pools_path, ckpt_path, method);
    if (wr->parsed()) return run_weights_report(weights_st, ckpt_path, train_path);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
