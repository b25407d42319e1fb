#pragma once

// Command-line front end: gen-synth | train | eval | predict.
// Exit codes: 0 success, 1 numeric failure, 2 I/O or format error, 3 config or usage error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctpvt/checkpoint.hpp"
#include "ctpvt/dataset.hpp"
#include "ctpvt/error.hpp"
#include "ctpvt/metrics.hpp"
#include "ctpvt/pvt_model.hpp"
#include "ctpvt/rng.hpp"
#include "ctpvt/run_config.hpp"
#include "ctpvt/sampling.hpp"
#include "ctpvt/synthetic.hpp"
#include "ctpvt/train.hpp"

namespace ctpvt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumeric = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitConfig = 3;

inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kLossFile = "loss.csv";
inline constexpr const char* kConfigFile = "config.txt";

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << text;
  os.flush();
  if (!os) throw io_error("cannot write " + path.string());
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw io_error("cannot create directory " + dir.string());
}

inline bool has_class_dirs(const std::filesystem::path& root) {
  std::error_code ec;
  return std::filesystem::is_directory(root / kPositiveDir, ec) ||
         std::filesystem::is_directory(root / kNegativeDir, ec);
}

/// Base config for a command that reads a checkpoint: explicit --config, else
/// the config.txt written next to the checkpoint by `train`, else defaults.
inline RunConfig config_for_checkpoint(const std::optional<std::string>& config_path,
                                       const std::filesystem::path& checkpoint) {
  RunConfig config;
  if (config_path) {
    apply_config_file(config, *config_path);
  } else {
    const auto sibling = checkpoint.parent_path() / kConfigFile;
    std::error_code ec;
    if (std::filesystem::is_regular_file(sibling, ec)) apply_config_file(config, sibling);
  }
  return config;
}

inline PvtClassifier<float> load_model(const RunConfig& config, const std::filesystem::path& checkpoint) {
  const auto entries = load_checkpoint(checkpoint);
  PvtClassifier<float> model(config.model, config.seed);
  load_checkpoint_entries(model, entries);
  return model;
}

inline void log_warnings(std::ostream& err, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
}

inline std::string csv_real(double v) { return ctpvt::detail::format_double(v); }

}  // namespace detail

struct GenSynthArgs {
  std::string out;
  std::size_t cases_per_class = 30;
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::size_t min_slices = kMinScanSlices;
  std::size_t max_slices = kMaxScanSlices;
};

inline int cmd_gen_synth(const GenSynthArgs& args, std::ostream& out, std::ostream& err) {
  SyntheticSpec spec;
  spec.positive_cases = args.cases_per_class;
  spec.negative_cases = args.cases_per_class;
  spec.seed = args.seed;
  spec.image_size = args.image_size;
  spec.min_slices = args.min_slices;
  spec.max_slices = args.max_slices;
  spec.validate();
  const std::filesystem::path root(args.out);
  err << "generating " << 2 * args.cases_per_class << " synthetic cases in " << root.string() << '\n';
  const SyntheticManifest manifest = generate_synthetic(spec, root);
  std::size_t total_slices = 0;
  for (const auto& c : manifest.cases) total_slices += c.slices;
  nlohmann::ordered_json summary;
  summary["out"] = root.string();
  summary["positive_cases"] = spec.positive_cases;
  summary["negative_cases"] = spec.negative_cases;
  summary["total_slices"] = total_slices;
  summary["seed"] = spec.seed;
  summary["manifest_fnv1a"] = detail::hex64(fnv1a(detail::read_file(root / "manifest.json")));
  out << summary.dump() << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::optional<std::string> data;
  std::optional<std::string> config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

inline RunConfig resolve_train_config(const TrainArgs& args) {
  RunConfig config;
  if (args.config) apply_config_file(config, *args.config);
  for (const auto& kv : args.overrides) apply_assignment(config, kv);
  if (args.seed) config.seed = *args.seed;
  config.validate();
  return config;
}

inline int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  if (!args.data) throw config_error("train: --data is required (a directory holding train/ and val/ splits)");
  const RunConfig config = resolve_train_config(args);
  const std::filesystem::path data(*args.data);
  const std::filesystem::path out_dir(args.out);

  const LoadedDataset train_set = load_dataset(data / "train");
  detail::log_warnings(err, train_set.warnings);
  const LoadedDataset val_set = load_dataset(data / "val");
  detail::log_warnings(err, val_set.warnings);

  detail::ensure_dir(out_dir);
  detail::write_file(out_dir / kConfigFile, to_config_text(config));

  PvtClassifier<float> model(config.model, config.seed);
  err << "training: " << train_set.cases.size() << " train / " << val_set.cases.size() << " val cases, "
      << model.parameter_count() << " parameters, " << config.train.epochs << " epochs\n";

  std::ofstream csv(out_dir / kLossFile, std::ios::binary | std::ios::trunc);
  if (!csv) throw io_error("cannot write " + (out_dir / kLossFile).string());
  csv << "epoch,mean_loss,val_macro_f1\n";
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    csv << r.epoch << ',' << detail::csv_real(r.mean_loss) << ','
        << (r.val_macro_f1 ? detail::csv_real(*r.val_macro_f1) : std::string()) << '\n';
    csv.flush();
    if (!csv) throw io_error("cannot write " + (out_dir / kLossFile).string());
    err << "epoch " << r.epoch << " loss " << r.mean_loss;
    if (r.val_macro_f1) err << " val_macro_f1 " << *r.val_macro_f1;
    err << '\n';
  };
  hooks.on_checkpoint = [&](std::size_t epoch, const PvtClassifier<float>& m) {
    save_checkpoint(out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), checkpoint_entries(m));
  };
  const TrainResult result =
      train(model, train_set.cases, val_set.cases, config.preprocess(), config.resolved_train(), hooks);
  save_checkpoint(out_dir / kCheckpointFile, result.best_weights);

  nlohmann::ordered_json summary;
  summary["checkpoint"] = (out_dir / kCheckpointFile).string();
  summary["best_epoch"] = result.best_epoch;
  summary["best_val_macro_f1"] =
      result.best_val_macro_f1 ? nlohmann::ordered_json(*result.best_val_macro_f1) : nlohmann::ordered_json();
  summary["final_loss"] = result.curve.back().mean_loss;
  out << summary.dump() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::optional<std::size_t> rounds;
  std::uint64_t seed = 0;
  std::optional<std::string> config;
};

inline int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig config = detail::config_for_checkpoint(args.config, args.checkpoint);
  if (args.rounds) config.voting.rounds = *args.rounds;
  config.validate();
  std::filesystem::path root(args.data);
  if (!detail::has_class_dirs(root) && std::filesystem::is_directory(root / "val")) root /= "val";
  const LoadedDataset data = load_dataset(root);
  detail::log_warnings(err, data.warnings);
  const PvtClassifier<float> model = detail::load_model(config, args.checkpoint);
  const EvalReport report =
      evaluate_model(data.cases, model, config.voting, config.preprocess(), config.sigma_fraction, args.seed);
  for (const auto& id : report.excluded_cases) err << "warning: unlabeled case excluded: " << id << '\n';
  out << to_json(report).dump(2) << '\n';
  return kExitOk;
}

struct PredictArgs {
  std::string case_dir;
  std::string checkpoint;
  std::optional<std::size_t> rounds;
  std::uint64_t seed = 0;
  std::optional<std::string> config;
};

inline int cmd_predict(const PredictArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig config = detail::config_for_checkpoint(args.config, args.checkpoint);
  if (args.rounds) config.voting.rounds = *args.rounds;
  config.validate();
  std::vector<std::string> warnings;
  const auto scan = load_case_dir(args.case_dir, Label::unknown, warnings);
  detail::log_warnings(err, warnings);
  if (!scan) throw io_error("no readable slices in " + args.case_dir);
  const PvtClassifier<float> model = detail::load_model(config, args.checkpoint);
  SliceSampler sampler(case_seed(args.seed, scan->case_id), config.sigma_fraction);
  const CaseVerdict verdict = diagnose_case(
      *scan, [&model](const Tensor& batch) { return model.forward(batch); }, sampler, config.voting,
      config.preprocess());
  out << verdict_json_line(verdict) << '\n';
  return kExitOk;
}

/// Parses `args` (without the program name) and runs the chosen command.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pyramid vision transformer CT-scan classifier", "ctpvt"};
  app.require_subcommand(1);

  GenSynthArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Write a synthetic labeled dataset tree");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--cases-per-class", gen.cases_per_class, "Cases per class")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
  gen_cmd->add_option("--image-size", gen.image_size, "Slice side length in pixels")->capture_default_str();
  gen_cmd->add_option("--min-slices", gen.min_slices, "Minimum slices per case")->capture_default_str();
  gen_cmd->add_option("--max-slices", gen.max_slices, "Maximum slices per case")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train on data/train, validate on data/val");
  train_cmd->add_option("--data", tr.data, "Dataset root with train/ and val/ splits");
  train_cmd->add_option("--config", tr.config, "key=value config file");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--seed", tr.seed, "Root seed (overrides config)");
  train_cmd->add_option("--set", tr.overrides, "Config override key=value (repeatable)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled dataset");
  eval_cmd->add_option("--data", ev.data, "Dataset root (class dirs, or a root holding val/)")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--rounds", ev.rounds, "Voting rounds per case");
  eval_cmd->add_option("--seed", ev.seed, "Sampler seed")->capture_default_str();
  eval_cmd->add_option("--config", ev.config, "key=value config file (default: config.txt beside the checkpoint)");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Diagnose one case directory");
  predict_cmd->add_option("--case-dir", pr.case_dir, "Directory of numbered slice PNGs")->required();
  predict_cmd->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  predict_cmd->add_option("--rounds", pr.rounds, "Voting rounds");
  predict_cmd->add_option("--seed", pr.seed, "Sampler seed")->capture_default_str();
  predict_cmd->add_option("--config", pr.config, "key=value config file (default: config.txt beside the checkpoint)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_synth(gen, out, err);
    if (train_cmd->parsed()) return cmd_train(tr, out, err);
    if (eval_cmd->parsed()) return cmd_eval(ev, out, err);
    if (predict_cmd->parsed()) return cmd_predict(pr, out, err);
  } catch (const numeric_error& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const io_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const format_error& e) {
    err << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const config_error& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  }
  err << "usage error: no command given\n";
  return kExitConfig;
}

}  // namespace ctpvt::cli
