#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "srnn/data.hpp"
#include "srnn/model_io.hpp"
#include "srnn/train.hpp"
#include "srnn/verify.hpp"

namespace srnn::cli {

// ---------------------------------------------------------------------------
// Run configuration: plain `key = value` lines, '#' comments. Unknown keys
// are hard errors; missing keys fall back to documented defaults.
// ---------------------------------------------------------------------------

struct RunConfig {
  TrainConfig train;
  std::string dataset = "synthetic";  // synthetic[:k=v,...] | cifar10
  std::string data_path;
  std::string out_dir = ".";
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& v, std::size_t line) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(line) + ": bad number '" + v +
                      "'");
  }
  if (used != v.size())
    throw ConfigError("line " + std::to_string(line) + ": bad number '" + v +
                      "'");
  return out;
}

inline std::size_t parse_count(const std::string& v, std::size_t line) {
  const double d = parse_double(v, line);
  if (d < 0 || d != std::floor(d))
    throw ConfigError("line " + std::to_string(line) +
                      ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(d);
}

inline bool parse_bool(const std::string& v, std::size_t line) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("line " + std::to_string(line) + ": bad flag '" + v +
                    "' (want true/false)");
}

// "16x16,32x32,64x64"
inline std::vector<Size2d> parse_scales(const std::string& v,
                                        std::size_t line) {
  std::vector<Size2d> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto x = item.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= item.size())
      throw ConfigError("line " + std::to_string(line) + ": bad scale '" +
                        item + "' (want HxW)");
    out.push_back({parse_count(trim(item.substr(0, x)), line),
                   parse_count(trim(item.substr(x + 1)), line)});
  }
  if (out.empty())
    throw ConfigError("line " + std::to_string(line) + ": empty scale list");
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].first * out[i].second <= out[i - 1].first * out[i - 1].second)
      throw ConfigError("line " + std::to_string(line) +
                        ": scales must strictly ascend in area");
  return out;
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in) {
  RunConfig rc;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = detail::trim(raw);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line) +
                        ": expected 'key = value'");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string val = detail::trim(s.substr(eq + 1));
    if (key == "head") {
      try {
        rc.train.head = head_from_string(val);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line) + ": " + e.what());
      }
    } else if (key == "dataset") {
      rc.dataset = val;
    } else if (key == "data_path") {
      rc.data_path = val;
    } else if (key == "scales") {
      rc.train.scales = detail::parse_scales(val, line);
    } else if (key == "lr0") {
      rc.train.lr0 = detail::parse_double(val, line);
    } else if (key == "momentum") {
      rc.train.momentum = detail::parse_double(val, line);
    } else if (key == "nesterov") {
      rc.train.nesterov = detail::parse_bool(val, line);
    } else if (key == "weight_decay") {
      rc.train.weight_decay = detail::parse_double(val, line);
    } else if (key == "decay_every") {
      rc.train.decay_every = detail::parse_count(val, line);
    } else if (key == "decay_factor") {
      rc.train.decay_factor = detail::parse_double(val, line);
    } else if (key == "epochs") {
      rc.train.epochs = detail::parse_count(val, line);
    } else if (key == "batch_size") {
      rc.train.batch_size = detail::parse_count(val, line);
    } else if (key == "seed") {
      rc.train.seed = detail::parse_count(val, line);
    } else if (key == "pretrain_epochs") {
      rc.train.pretrain_epochs = detail::parse_count(val, line);
    } else if (key == "out_dir") {
      rc.out_dir = val;
    } else {
      throw ConfigError("line " + std::to_string(line) + ": unknown key '" +
                        key + "'");
    }
  }
  return rc;
}

inline RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_run_config(in);
}

// ---------------------------------------------------------------------------
// Dataset resolution
// ---------------------------------------------------------------------------

// "synthetic" with optional overrides, e.g. "synthetic:G=2,T=2,train=8,val=4".
inline SyntheticSpec parse_synthetic_spec(const std::string& value,
                                          std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  const auto colon = value.find(':');
  if (colon == std::string::npos) return spec;
  std::stringstream ss(value.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("dataset option '" + item + "' is not k=v");
    const std::string k = detail::trim(item.substr(0, eq));
    const std::string v = detail::trim(item.substr(eq + 1));
    if (k == "G") spec.coarse_shapes = detail::parse_count(v, 0);
    else if (k == "T") spec.fine_textures = detail::parse_count(v, 0);
    else if (k == "canvas") spec.canvas = detail::parse_count(v, 0);
    else if (k == "train") spec.train_per_class = detail::parse_count(v, 0);
    else if (k == "val") spec.val_per_class = detail::parse_count(v, 0);
    else if (k == "noise") spec.noise_amplitude = detail::parse_double(v, 0);
    else throw ConfigError("unknown dataset option '" + k + "'");
  }
  return spec;
}

template <typename T>
std::pair<Dataset<T>, Dataset<T>> load_dataset(const RunConfig& rc) {
  if (rc.dataset.rfind("synthetic", 0) == 0)
    return generate_scale_task<T>(
        parse_synthetic_spec(rc.dataset, rc.train.seed));
  if (rc.dataset == "cifar10") {
    if (rc.data_path.empty())
      throw ConfigError("dataset cifar10 requires data_path");
    namespace fs = std::filesystem;
    if (fs::is_directory(rc.data_path)) {
      Dataset<T> train;
      train.classes = 10;
      train.split = "train";
      for (int i = 1; i <= 5; ++i) {
        Dataset<T> part = load_cifar10_binary<T>(
            rc.data_path + "/data_batch_" + std::to_string(i) + ".bin");
        for (auto& s : part.samples) train.samples.push_back(std::move(s));
      }
      Dataset<T> val = load_cifar10_binary<T>(rc.data_path + "/test_batch.bin");
      val.split = "val";
      return {std::move(train), std::move(val)};
    }
    Dataset<T> train = load_cifar10_binary<T>(rc.data_path);
    Dataset<T> val = train;
    train.split = "train";
    val.split = "val";
    return {std::move(train), std::move(val)};
  }
  throw ConfigError("unknown dataset '" + rc.dataset + "'");
}

// ---------------------------------------------------------------------------
// CSV output (fixed formatting so reruns are byte-identical)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace detail

inline void write_metrics_csv(const std::string& path,
                              const std::vector<EpochStats>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out << "epoch,lr,train_loss,val_top1,val_top5\n";
  for (const auto& e : history)
    out << e.epoch << ',' << detail::fmt("%.10g", e.lr) << ','
        << detail::fmt("%.6f", e.train_loss) << ','
        << detail::fmt("%.4f", e.val_top1) << ','
        << detail::fmt("%.4f", e.val_top5) << '\n';
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline BaseCnnConfig default_cnn_config(std::size_t in_channels) {
  BaseCnnConfig cfg;
  cfg.in_channels = in_channels;
  return cfg;
}

template <typename T>
void save_model(const std::string& path,
                const std::vector<NamedParam<T>>& params) {
  checkpoint_save(path, state_of(params));
}

// Stage 1 pretrains the single-scale base at the largest configured scale
// (reused from <out_dir>/pretrain.srnn when present); stage 2 fine-tunes
// the selected SRNN head over the full scale list.
inline int cmd_train(const std::string& config_path) {
  const RunConfig rc = parse_run_config_file(config_path);
  rc.train.validate();
  if (rc.train.head == Head::ens_logit || rc.train.head == Head::ens_prob)
    throw ConfigError("head " + std::string(head_name(rc.train.head)) +
                      " is inference-only; train single or an srnn head");
  auto [train_ds, val_ds] = load_dataset<float>(rc);
  const std::size_t in_channels = train_ds.samples.at(0).image.channels();
  const BaseCnnConfig cnn_cfg = default_cnn_config(in_channels);

  namespace fs = std::filesystem;
  fs::create_directories(rc.out_dir);
  const std::string model_path = rc.out_dir + "/model.srnn";
  const std::string metrics_path = rc.out_dir + "/metrics.csv";

  Rng init_rng(mix_seed(rc.train.seed, 0x1417));

  if (rc.train.head == Head::single) {
    // the single-scale model trains at its native scale, the smallest one,
    // with scale-jittered crops so it stays usable on larger pyramid levels
    CnnClassifier<float> model =
        CnnClassifier<float>::init(cnn_cfg, train_ds.classes, init_rng);
    TrainConfig cfg = rc.train;
    cfg.scales = {rc.train.scales.front()};
    cfg.scale_crop = true;
    const auto history = fit(cfg, train_ds, val_ds, model);
    write_metrics_csv(metrics_path, history);
    save_model(model_path, model.named_params());
    std::cout << "trained single-scale model: top1 "
              << detail::fmt("%.4f", history.back().val_top1) << " -> "
              << model_path << "\n";
    return 0;
  }

  // stage 1: pretrained single-scale base (native = smallest scale)
  const std::string pretrain_path = rc.out_dir + "/pretrain.srnn";
  CnnClassifier<float> base;
  if (fs::exists(pretrain_path)) {
    base = base_from_state<float>(checkpoint_load(pretrain_path));
    std::cout << "reusing pretrained base " << pretrain_path << "\n";
  } else {
    base = CnnClassifier<float>::init(cnn_cfg, train_ds.classes, init_rng);
    if (rc.train.pretrain_epochs > 0) {
      TrainConfig pre = rc.train;
      pre.head = Head::single;
      pre.epochs = rc.train.pretrain_epochs;
      pre.scales = {rc.train.scales.front()};
      pre.scale_crop = true;
      const auto history = fit(pre, train_ds, val_ds, base);
      write_metrics_csv(rc.out_dir + "/pretrain_metrics.csv", history);
      std::cout << "pretrained base: top1 "
                << detail::fmt("%.4f", history.back().val_top1) << "\n";
    }
    save_model(pretrain_path, base.named_params());
  }

  // stage 2: fine-tune the selected head across all scales
  std::vector<EpochStats> history;
  if (rc.train.head == Head::srnn_vanilla) {
    SrnnVanilla<float> model = SrnnVanilla<float>::from_pretrained(base);
    history = fit(rc.train, train_ds, val_ds, model);
    save_model(model_path, model.named_params());
  } else {
    SrnnHalfGru<float> model = SrnnHalfGru<float>::from_pretrained(base);
    history = fit(rc.train, train_ds, val_ds, model);
    save_model(model_path, model.named_params());
  }
  write_metrics_csv(metrics_path, history);
  std::cout << "trained " << head_name(rc.train.head) << ": top1 "
            << detail::fmt("%.4f", history.back().val_top1) << " -> "
            << model_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string head;
  EvalResult result;
};

// Comparison table: single scales ascending, ens_prob, ens_logit, then the
// SRNN heads for whichever checkpoints were given. Base rows come from the
// first base-kind checkpoint (or the first checkpoint's CNN+classifier).
template <typename T>
std::vector<EvalRow> eval_rows(
    const std::vector<std::vector<NamedTensorF>>& states,
    const Dataset<T>& val, const std::vector<Size2d>& scales,
    std::size_t batch_size) {
  const std::vector<NamedTensorF>* base_state = &states.front();
  for (const auto& st : states)
    if (checkpoint_kind(st) == ModelKind::base) {
      base_state = &st;
      break;
    }
  const CnnClassifier<T> base = base_from_state<T>(*base_state);

  std::vector<EvalRow> rows;
  for (const Size2d& sz : scales) {
    const std::string name = "single_" + std::to_string(sz.first) + "x" +
                             std::to_string(sz.second);
    rows.push_back({name, evaluate_model(base, val, {sz}, batch_size)});
  }
  rows.push_back({"ens_prob", evaluate_ensemble(base, val, scales,
                                                EnsembleMode::prob_mean,
                                                batch_size)});
  rows.push_back({"ens_logit", evaluate_ensemble(base, val, scales,
                                                 EnsembleMode::logit_mean,
                                                 batch_size)});
  for (const auto& st : states)
    if (checkpoint_kind(st) == ModelKind::vanilla) {
      const SrnnVanilla<T> m = vanilla_from_state<T>(st);
      rows.push_back(
          {"srnn_vanilla", evaluate_model(m, val, scales, batch_size)});
      break;
    }
  for (const auto& st : states)
    if (checkpoint_kind(st) == ModelKind::half_gru) {
      const SrnnHalfGru<T> m = halfgru_from_state<T>(st);
      rows.push_back(
          {"srnn_halfgru", evaluate_model(m, val, scales, batch_size)});
      break;
    }
  return rows;
}

inline int cmd_eval(const std::vector<std::string>& checkpoint_paths,
                    const std::string& config_path) {
  const RunConfig rc = parse_run_config_file(config_path);
  auto [train_ds, val_ds] = load_dataset<float>(rc);
  (void)train_ds;
  std::vector<std::vector<NamedTensorF>> states;
  for (const auto& p : checkpoint_paths) states.push_back(checkpoint_load(p));
  const auto rows =
      eval_rows(states, val_ds, rc.train.scales, rc.train.batch_size);

  std::ofstream csv(rc.out_dir + "/eval.csv", std::ios::trunc);
  if (!csv) throw ConfigError("cannot write " + rc.out_dir + "/eval.csv");
  csv << "head,top1,top5\n";
  std::printf("%-14s %8s %8s\n", "head", "top1", "top5");
  for (const auto& r : rows) {
    csv << r.head << ',' << detail::fmt("%.4f", r.result.top1_error) << ','
        << detail::fmt("%.4f", r.result.top5_error) << '\n';
    std::printf("%-14s %8.4f %8.4f\n", r.head.c_str(), r.result.top1_error,
                r.result.top5_error);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

inline int cmd_gradcheck(std::uint64_t seed, const GradMutator& mutate = {}) {
  const GradcheckReport report = run_srnn_gradcheck(seed, 1e-4, 1e-5, mutate);
  std::printf("gradcheck seed %llu: %zu parameter tensors, worst %s rel %.3g"
              " (tolerance %.3g)\n",
              static_cast<unsigned long long>(seed), report.entries.size(),
              report.worst_name.c_str(), report.worst_error,
              report.tolerance);
  if (!report.pass) {
    std::fprintf(stderr, "gradcheck FAILED: %s rel error %.6g >= %.3g\n",
                 report.worst_name.c_str(), report.worst_error,
                 report.tolerance);
    return 5;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bench: anytime inference over pyramid prefixes
// ---------------------------------------------------------------------------

struct BenchRow {
  std::size_t scales_used;
  double top1;
  std::size_t mac_count;  // per-sample, analytic
};

template <typename T, typename M>
std::vector<BenchRow> bench_rows(const M& model, SrnnKind kind,
                                 const Dataset<T>& val,
                                 const std::vector<Size2d>& scales,
                                 std::size_t batch_size) {
  std::vector<BenchRow> rows;
  for (std::size_t k = 1; k <= scales.size(); ++k) {
    const std::vector<Size2d> prefix(scales.begin(), scales.begin() + k);
    const EvalResult ev = evaluate_logits(
        val, batch_size,
        [&](const Dataset<T>& d, const std::vector<std::size_t>& idxs) {
          const auto states =
              model.forward_states(pyramid_batch(d, idxs, prefix));
          return model.fc.logits(states.back())->value;
        });
    rows.push_back({k, ev.top1_error,
                    srnn_prefix_macs(model.cnn.cfg, scales, k,
                                     model.fc.classes(), kind)});
  }
  return rows;
}

inline int cmd_bench(const std::string& checkpoint_path,
                     const std::string& config_path) {
  const RunConfig rc = parse_run_config_file(config_path);
  auto [train_ds, val_ds] = load_dataset<float>(rc);
  (void)train_ds;
  const auto state = checkpoint_load(checkpoint_path);
  const ModelKind kind = checkpoint_kind(state);
  if (kind == ModelKind::base)
    throw CheckpointError(
        "bench needs an SRNN checkpoint; missing tensors: srnn.U");

  std::vector<BenchRow> rows;
  if (kind == ModelKind::vanilla) {
    const SrnnVanilla<float> m = vanilla_from_state<float>(state);
    rows = bench_rows(m, SrnnKind::vanilla, val_ds, rc.train.scales,
                      rc.train.batch_size);
  } else {
    const SrnnHalfGru<float> m = halfgru_from_state<float>(state);
    rows = bench_rows(m, SrnnKind::half_gru, val_ds, rc.train.scales,
                      rc.train.batch_size);
  }

  std::ofstream csv(rc.out_dir + "/bench.csv", std::ios::trunc);
  if (!csv) throw ConfigError("cannot write " + rc.out_dir + "/bench.csv");
  csv << "scales_used,top1,mac_count\n";
  std::printf("%-12s %8s %14s\n", "scales_used", "top1", "mac_count");
  for (const auto& r : rows) {
    csv << r.scales_used << ',' << detail::fmt("%.4f", r.top1) << ','
        << r.mac_count << '\n';
    std::printf("%-12zu %8.4f %14zu\n", r.scales_used, r.top1, r.mac_count);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int usage() {
  std::fprintf(stderr,
               "usage:\n"
               "  srnn train <config>\n"
               "  srnn eval <checkpoint>... <config>\n"
               "  srnn gradcheck [--seed N]\n"
               "  srnn bench <checkpoint> <config>\n");
  return 2;
}

inline int run(const std::vector<std::string>& args) {
  try {
    if (args.empty()) return usage();
    const std::string& verb = args[0];
    if (verb == "train") {
      if (args.size() != 2) return usage();
      return cmd_train(args[1]);
    }
    if (verb == "eval") {
      if (args.size() < 3) return usage();
      return cmd_eval({args.begin() + 1, args.end() - 1}, args.back());
    }
    if (verb == "gradcheck") {
      std::uint64_t seed = 1;
      if (args.size() == 3 && args[1] == "--seed")
        seed = std::stoull(args[2]);
      else if (args.size() != 1)
        return usage();
      return cmd_gradcheck(seed);
    }
    if (verb == "bench") {
      if (args.size() != 3) return usage();
      return cmd_bench(args[1], args[2]);
    }
    return usage();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 3;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace srnn::cli
