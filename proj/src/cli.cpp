#include "crossfuse/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "crossfuse/errors.hpp"
#include "crossfuse/gradcheck.hpp"
#include "crossfuse/model.hpp"
#include "crossfuse/serialize.hpp"
#include "crossfuse/synth.hpp"
#include "crossfuse/training.hpp"

namespace crossfuse::cli {

namespace {

namespace fs = std::filesystem;

// Raised by commands to leave with a specific exit code.
struct Exit {
  int code;
  std::string message;
};

std::optional<std::uint64_t> seed_override() {
  const char* env = std::getenv("CROSSFUSE_SEED");
  if (env == nullptr || *env == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("CROSSFUSE_SEED is not an unsigned integer: '") + env + "'");
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

Dataset load_data_or_exit(const std::string& dir) {
  try {
    return load_dataset(dir);
  } catch (const IoError& e) {
    throw Exit{kIo, e.what()};
  } catch (const FormatError& e) {
    throw Exit{kIo, e.what()};
  }
}

int cmd_gen(const std::string& spec_path, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  SynthSpec spec;
  try {
    spec = synth_spec_from_json(load_json_file(spec_path));
    if (auto seed = seed_override()) spec.seed = *seed;
    spec.validate();
  } catch (const std::exception& e) {
    throw Exit{kConfig, e.what()};
  }
  const Dataset data = generate(spec);
  save_dataset(data, out_dir);
  err << "wrote " << data.train.size() << " train and " << data.val.size() << " val examples to " << out_dir << '\n';
  out << "examples=" << data.train.size() + data.val.size() << '\n';
  return kOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, const std::string& ckpt_path,
              const std::string& ablation_name, std::string log_path, std::ostream& out, std::ostream& err) {
  RunConfig run_cfg = run_config_from_json(load_json_file(config_path));
  if (!ablation_name.empty()) run_cfg.ablation = parse_ablation(ablation_name);
  if (auto seed = seed_override()) run_cfg.train.seed = *seed;
  run_cfg.model.validate();
  run_cfg.train.validate();
  if (log_path.empty()) log_path = ckpt_path + ".log.jsonl";
  for (const auto& p : {fs::path(ckpt_path), fs::path(log_path)}) {
    const fs::path parent = p.parent_path();
    if (!parent.empty() && !fs::is_directory(parent)) throw IoError("output directory does not exist: " + parent.string());
  }

  const Dataset data = load_data_or_exit(data_dir);
  FusionModel model = FusionModel::create(run_cfg.model, run_cfg.train.seed);
  err << "training " << to_string(run_cfg.ablation) << ": " << model.parameter_count() << " parameters, "
      << data.train.size() << " train / " << data.val.size() << " val\n";

  std::string log;
  const TrainResult result = train(model, data, run_cfg.train, run_cfg.ablation, [&](const EpochRecord& r) {
    const std::string line = epoch_log_line(r);
    err << line << '\n';
    log += line + '\n';
  });
  save_checkpoint(ckpt_path, result.best_model);
  write_file_atomic(log_path, std::string_view(log));
  err << "best epoch " << result.best_epoch << ", checkpoint " << ckpt_path << '\n';
  out << "val_accuracy=" << format_double(result.best_val_accuracy) << '\n';
  return kOk;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path, const std::string& confusion_path,
             const std::string& config_path, const std::string& ablation_name, std::ostream& out, std::ostream& err) {
  std::optional<FusionModelConfig> expected;
  Ablation ablation = Ablation::Full;
  if (!config_path.empty()) {
    const RunConfig run_cfg = run_config_from_json(load_json_file(config_path));
    expected = run_cfg.model;
    ablation = run_cfg.ablation;
  }
  if (!ablation_name.empty()) ablation = parse_ablation(ablation_name);

  FusionModel model;
  try {
    model = expected ? load_checkpoint(ckpt_path, *expected) : load_checkpoint(ckpt_path);
  } catch (const FormatError& e) {
    throw Exit{kConfig, e.what()};
  }
  const Dataset data = load_data_or_exit(data_dir);
  const EvalReport report = evaluate(model, data.val, ablation);
  if (!confusion_path.empty()) write_file_atomic(confusion_path, std::string_view(report.confusion_csv()));
  err << "evaluated " << report.total() << " validation examples\n";
  out << "val_accuracy=" << format_double(report.accuracy) << '\n';
  return kOk;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> items;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

int cmd_gradcheck(const std::string& config_path, const std::string& ops_list, const std::string& corrupt,
                  std::ostream& out) {
  FusionModelConfig model_cfg = gradcheck::tiny_model_config();
  if (!config_path.empty()) model_cfg = run_config_from_json(load_json_file(config_path)).model;

  std::vector<std::string> ops = ops_list.empty() ? gradcheck::primitive_ops() : split_list(ops_list);
  bool whole_model = ops_list.empty();
  std::erase_if(ops, [&](const std::string& op) {
    if (op != "whole_model") return false;
    whole_model = true;
    return true;
  });

  std::vector<gradcheck::OpResult> results = gradcheck::check_primitives(ops, {}, 7, corrupt);
  if (whole_model) results.push_back(gradcheck::check_model(model_cfg, 50, {}, 11, corrupt == "whole_model"));

  std::vector<std::string> failed;
  for (const auto& r : results) {
    out << r.op << ' ' << r.precision << " max_rel_error=" << std::scientific << std::setprecision(3)
        << r.max_rel_error << " tolerance=" << r.tolerance << std::defaultfloat << " coords=" << r.coordinates << ' '
        << (r.passed() ? "ok" : "FAIL") << '\n';
    if (!r.passed()) failed.push_back(r.op + "/" + r.precision);
  }
  if (failed.empty()) return kOk;
  std::string joined;
  for (const auto& f : failed) joined += (joined.empty() ? "" : ", ") + f;
  throw Exit{kGradcheck, "gradient check failed for: " + joined};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"crossfuse: audio-visual fusion training harness", "crossfuse"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "SynthSpec JSON")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string data_dir, config_path, ckpt_out, ablation, log_path;
  auto* tr = app.add_subcommand("train", "Train a fusion model");
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--config", config_path, "Run config JSON")->required();
  tr->add_option("--out", ckpt_out, "Checkpoint path")->required();
  tr->add_option("--ablation", ablation, "full, video_only, audio_only or two_stage");
  tr->add_option("--log", log_path, "JSON-lines log (default <out>.log.jsonl)");

  std::string eval_data, ckpt_in, confusion, eval_config, eval_ablation;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  ev->add_option("--data", eval_data, "Dataset directory")->required();
  ev->add_option("--ckpt", ckpt_in, "Checkpoint path")->required();
  ev->add_option("--confusion", confusion, "Write the 3x3 confusion matrix as CSV");
  ev->add_option("--config", eval_config, "Run config the checkpoint must match");
  ev->add_option("--ablation", eval_ablation, "Ablation used at evaluation");

  std::string gc_config, gc_ops, gc_corrupt;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--config", gc_config, "Run config whose model is used for the whole-model check");
  gc->add_option("--ops", gc_ops, "Comma-separated ops (whole_model selects the model check)");
  gc->add_option("--corrupt", gc_corrupt)->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen(spec_path, out_dir, out, err);
    if (*tr) return cmd_train(data_dir, config_path, ckpt_out, ablation, log_path, out, err);
    if (*ev) return cmd_eval(eval_data, ckpt_in, confusion, eval_config, eval_ablation, out, err);
    if (*gc) return cmd_gradcheck(gc_config, gc_ops, gc_corrupt, out);
  } catch (const Exit& e) {
    err << "error: " << e.message << '\n';
    return e.code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const InputTooShortError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const NonFiniteLossError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const EvaluationError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kIo;
  }
  return kConfig;
}

}  // namespace crossfuse::cli
