// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0
//
// fabricnet: synth | train | eval | flops | gradcheck
//
// Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime or
// data failure (unreadable manifest, bad image, corrupt checkpoint, failed
// gradient check).

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fabricnet/data_io.hpp"
#include "fabricnet/ensemble.hpp"
#include "fabricnet/error.hpp"
#include "fabricnet/gradcheck.hpp"
#include "fabricnet/kernels.hpp"
#include "fabricnet/metrics.hpp"
#include "fabricnet/model_graph.hpp"
#include "fabricnet/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fabricnet;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

// Raised when a command ran to completion but its verdict is a failure.
class CommandFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kMissingFile, "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError(DataError::Kind::kIo, "cannot write '" + path.string() + "'");
}

std::string to_hex(const unsigned char* bytes, unsigned len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += kDigits[bytes[i] >> 4];
    out += kDigits[bytes[i] & 0xf];
  }
  return out;
}

std::string sha1_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  return to_hex(digest, len);
}

// Same id git assigns to a file's contents.
std::string git_blob_hash(const std::string& contents) {
  return sha1_hex("blob " + std::to_string(contents.size()) + '\0' + contents);
}

// Hash over the blob ids of every input file, in the given order.
json hash_inputs(const std::vector<fs::path>& files) {
  std::string listing;
  for (const auto& f : files) listing += git_blob_hash(read_file(f)) + ' ' + f.filename().string() + '\n';
  return {{"files", files.size()}, {"sha1", sha1_hex(listing)}};
}

std::vector<fs::path> manifest_inputs(const fs::path& manifest_path, const Manifest& manifest) {
  std::vector<fs::path> files{manifest_path};
  for (const auto& row : manifest.rows) files.push_back(row.path);
  return files;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Printed to stderr as one line when a run starts and, for commands with an
// output directory, also written there as run.json.
void emit_run_manifest(const std::string& command, const json& config, std::uint64_t seed, const json& inputs,
                       const fs::path& out_dir = {}) {
  const json manifest = {{"command", command},   {"config", config},  {"seed", seed},
                         {"started_at", utc_now()}, {"inputs", inputs}, {"threads", kernels::num_threads()}};
  std::cerr << manifest.dump() << '\n';
  if (!out_dir.empty()) write_text(out_dir / "run.json", manifest.dump(2) + '\n');
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(DataError::Kind::kIo, "cannot create '" + dir.string() + "': " + ec.message());
}

Architecture parse_arch(const std::string& name) {
  if (name == "fabricnet") return Architecture::kFabricNet;
  if (name == "monolithic") return Architecture::kMonolithic;
  if (name == "xception") return Architecture::kXception;
  throw ValidationError("unknown architecture '" + name + "'");
}

json config_json(const ModelConfig& c) {
  return {{"model", c.to_string()}, {"classes", c.n_classes}, {"middle", c.middle_flows},
          {"input", c.input_size},  {"spec", c.ensemble_spec}};
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  SynthConfig config;
  fs::path out;
  bool force = false;
};

void run_synth(const SynthArgs& a) {
  if (a.config.n_classes < 2) throw ValidationError("--classes must be at least 2");
  std::error_code ec;
  if (fs::exists(a.out, ec) && !fs::is_empty(a.out, ec) && !a.force) {
    throw ValidationError("output directory '" + a.out.string() + "' is not empty; pass --force to overwrite");
  }
  emit_run_manifest("synth",
                    {{"classes", a.config.n_classes},
                     {"samples", a.config.n_samples},
                     {"max_labels", a.config.max_labels_per_sample},
                     {"size", a.config.image_size},
                     {"noise", a.config.noise},
                     {"out", a.out.string()}},
                    a.config.seed, json::object());
  const Dataset data = gen_synthetic(a.config);
  export_dataset(data, a.out);
  std::cout << "wrote " << data.size() << " images, " << data.n_classes() << " classes to " << a.out.string()
            << '\n';
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  fs::path data;
  fs::path out = "runs";
  std::size_t classes = 0;
  std::string arch = "fabricnet";
  std::size_t middle = 2;
  std::string spec = std::string(kDefaultEnsembleSpec);
  std::size_t input = kDefaultImageSize;
  std::size_t fold_index = 0;
  std::size_t runs = 3;
  bool no_augment = false;
  TrainConfig train;
};

std::string join_vocabulary(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ";") + n;
  return out;
}

void run_train(const TrainArgs& a) {
  TrainConfig tc = a.train;
  tc.augment.enabled = !a.no_augment;
  tc.validate();
  if (a.runs < 1) throw ValidationError("--runs must be at least 1");
  if (a.fold_index >= tc.k_folds) {
    throw ValidationError("--fold-index " + std::to_string(a.fold_index) + " must be below --folds " +
                          std::to_string(tc.k_folds));
  }
  const Manifest manifest = load_manifest(a.data);
  const std::size_t n_classes = manifest.vocabulary.size();
  if (a.classes != 0 && a.classes != n_classes) {
    throw ValidationError("--classes " + std::to_string(a.classes) + " does not match the " +
                          std::to_string(n_classes) + " labels in the manifest");
  }
  ModelConfig mc;
  mc.architecture = parse_arch(a.arch);
  mc.n_classes = n_classes;
  mc.middle_flows = a.middle;
  mc.input_size = a.input;
  mc.ensemble_spec = a.spec;
  build_model<float>(mc);  // rejects bad architecture settings before any data is decoded

  prepare_out_dir(a.out);
  json config = config_json(mc);
  config.update({{"data", a.data.string()},
                 {"out", a.out.string()},
                 {"epochs", tc.max_epochs},
                 {"batch", tc.batch_size},
                 {"lr", tc.lr},
                 {"folds", tc.k_folds},
                 {"fold_index", a.fold_index},
                 {"runs", a.runs},
                 {"threshold", tc.threshold},
                 {"augment", tc.augment.enabled}});
  emit_run_manifest("train", config, tc.seed, hash_inputs(manifest_inputs(a.data, manifest)), a.out);

  const Dataset data = load_dataset(manifest, a.input);
  const FoldSplit split = kfold_split(data.size(), tc.k_folds, tc.seed).at(a.fold_index);
  std::cout << "fold " << a.fold_index << ": train " << split.train.size() << ", val " << split.val.size()
            << ", test " << split.test.size() << '\n';

  std::vector<MetricsReport> reports;
  std::string csv = "run," + MetricsReport::csv_header() + '\n';
  for (std::size_t r = 0; r < a.runs; ++r) {
    TrainConfig run_config = tc;
    run_config.seed = tc.seed + r;
    ModelGraph model = build_model<float>(mc);
    init_params(model, run_config.seed);
    Adam adam(model.params(), AdamOptions{.lr = tc.lr});
    const TrainResult result = train(model, data, split.train, split.val, run_config, adam, [&](const EpochRecord& e) {
      std::printf("run %zu epoch %zu train loss %.4f f1 %.4f | val loss %.4f f1 %.4f\n", r, e.epoch, e.train_loss,
                  e.train_f1, e.val_loss, e.val_f1);
      std::fflush(stdout);
    });

    const fs::path run_dir = a.out / ("run_" + std::to_string(r));
    prepare_out_dir(run_dir);
    write_text(run_dir / "history.log", result.history.to_log());
    const std::vector<std::pair<std::string, std::string>> meta = {
        {"seed", std::to_string(run_config.seed)},
        {"fold", std::to_string(a.fold_index)},
        {"folds", std::to_string(tc.k_folds)},
        {"best_epoch", std::to_string(result.best_epoch)},
        {"vocabulary", join_vocabulary(manifest.vocabulary.names)}};
    write_checkpoint(run_dir / "best.ckpt", make_checkpoint(model, mc, meta, &adam));

    const Evaluation test = evaluate(model, data, split.test, tc.threshold);
    std::cout << "run " << r << " best epoch " << result.best_epoch << " test:\n" << test.report.to_text();
    csv += std::to_string(r) + ',' + test.report.to_csv_row() + '\n';
    reports.push_back(test.report);
  }

  std::string text;
  for (const auto& m : aggregate_runs(reports)) text += m.name + ": " + m.formatted() + '\n';
  write_text(a.out / "report.txt", text);
  write_text(a.out / "report.csv", csv);
  std::cout << "test metrics over " << a.runs << " run(s):\n" << text;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  fs::path out;
  double threshold = 0.5;
};

std::vector<std::string> split_vocabulary(const std::string& joined) {
  std::vector<std::string> out;
  std::stringstream ss(joined);
  for (std::string name; std::getline(ss, name, ';');) out.push_back(name);
  return out;
}

void run_eval(const EvalArgs& a) {
  validate_threshold(a.threshold);
  const Checkpoint ckpt = read_checkpoint(a.checkpoint);
  const ModelConfig mc = ModelConfig::parse(ckpt.model_config);
  const Manifest manifest = load_manifest(a.data);

  // Labels are re-indexed to the vocabulary the model was trained with.
  std::vector<std::string> vocabulary = manifest.vocabulary.names;
  if (const auto joined = ckpt.meta("vocabulary")) vocabulary = split_vocabulary(*joined);
  if (vocabulary.size() != mc.n_classes) {
    throw ValidationError("checkpoint has " + std::to_string(mc.n_classes) + " classes but the vocabulary has " +
                          std::to_string(vocabulary.size()));
  }
  const LabelVocabulary model_vocab{vocabulary};
  std::vector<std::size_t> column(manifest.vocabulary.size());
  for (std::size_t c = 0; c < column.size(); ++c) {
    const auto idx = std::find(vocabulary.begin(), vocabulary.end(), manifest.vocabulary.names[c]);
    if (idx == vocabulary.end()) {
      throw ValidationError("label '" + manifest.vocabulary.names[c] + "' is not known to the checkpoint");
    }
    column[c] = static_cast<std::size_t>(idx - vocabulary.begin());
  }

  const fs::path out = a.out.empty() ? a.checkpoint.parent_path() : a.out;
  if (!out.empty()) prepare_out_dir(out);
  json config = config_json(mc);
  config.update({{"checkpoint", a.checkpoint.string()}, {"data", a.data.string()}, {"threshold", a.threshold}});
  std::vector<fs::path> inputs = manifest_inputs(a.data, manifest);
  inputs.insert(inputs.begin(), a.checkpoint);
  emit_run_manifest("eval", config, 0, hash_inputs(inputs));

  ModelGraph model = model_from_checkpoint(ckpt);
  Dataset data = load_dataset(manifest, mc.input_size);
  const LabelMatrix source = data.labels;
  data.labels = LabelMatrix(source.rows, vocabulary.size());
  for (std::size_t i = 0; i < source.rows; ++i) {
    for (std::size_t c = 0; c < source.cols; ++c) data.labels(i, column[c]) = source(i, c);
  }
  data.vocabulary = vocabulary;

  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Evaluation ev = evaluate(model, data, all, a.threshold);
  std::cout << ev.report.to_text();
  write_text(out / "eval_report.txt", ev.report.to_text());
  write_text(out / "eval_report.csv", MetricsReport::csv_header() + '\n' + ev.report.to_csv_row() + '\n');
}

// ---- flops ------------------------------------------------------------------

struct FlopsArgs {
  ModelConfig model;
  std::string arch = "fabricnet";
  unsigned flops_per_mac = kDefaultFlopsPerMac;
};

void run_flops(FlopsArgs a) {
  if (a.model.n_classes < 1) throw ValidationError("--classes must be at least 1");
  if (a.flops_per_mac < 1 || a.flops_per_mac > 2) throw ValidationError("--flops-per-mac must be 1 or 2");
  a.model.architecture = parse_arch(a.arch);
  emit_run_manifest("flops", config_json(a.model), 0, json::object());
  const ModelGraph model = build_model<float>(a.model);
  const Shape input{a.model.input_size, a.model.input_size, 3};
  const ParamCount params = count_params(model);
  const FlopCount flops = count_flops(model, input);

  std::printf("model            %s\n", a.model.to_string().c_str());
  std::printf("trainable params %llu\n", static_cast<unsigned long long>(params.trainable));
  std::printf("total params     %llu\n", static_cast<unsigned long long>(params.total));
  std::printf("MACs             %llu\n", static_cast<unsigned long long>(flops.macs));
  std::printf("other ops        %llu\n", static_cast<unsigned long long>(flops.other));
  std::printf("FLOPs            %llu (%u per MAC)\n", static_cast<unsigned long long>(flops.total(a.flops_per_mac)),
              a.flops_per_mac);

  // Per-class submodels are summarised as one line; the head and the output
  // stage keep their own rows.
  const auto groups = cost_by_group(model, input);
  GroupCost ensembles{"ensembles", {}, {}};
  std::size_t n_submodels = 0;
  std::printf("\n%-12s %14s %16s\n", "group", "params", "FLOPs");
  for (const auto& g : groups) {
    if (g.group.rfind("class_", 0) == 0) {
      ensembles.params.trainable += g.params.trainable;
      ensembles.params.total += g.params.total;
      ensembles.flops += g.flops;
      ++n_submodels;
      continue;
    }
    std::printf("%-12s %14llu %16llu\n", g.group.c_str(), static_cast<unsigned long long>(g.params.trainable),
                static_cast<unsigned long long>(g.flops.total(a.flops_per_mac)));
  }
  if (n_submodels > 0) {
    const std::string label = "ensembles x" + std::to_string(n_submodels);
    std::printf("%-12s %14llu %16llu\n", label.c_str(), static_cast<unsigned long long>(ensembles.params.trainable),
                static_cast<unsigned long long>(ensembles.flops.total(a.flops_per_mac)));
  }
}

// ---- gradcheck --------------------------------------------------------------

struct GradCheckArgs {
  std::uint64_t seed = 0;
  int dtype = 64;
  bool corrupt = false;
  bool skip_model = false;
};

void run_gradcheck_cmd(const GradCheckArgs& a) {
  if (a.dtype != 32 && a.dtype != 64) throw ValidationError("--dtype must be 32 or 64");
  GradCheckOptions opt;
  opt.precision = a.dtype == 64 ? Precision::kFloat64 : Precision::kFloat32;
  opt.seed = a.seed;
  opt.corrupt_backward = a.corrupt;
  opt.include_model = !a.skip_model;
  emit_run_manifest("gradcheck", {{"dtype", a.dtype}, {"corrupt", a.corrupt}, {"model", opt.include_model}}, a.seed,
                    json::object());
  bool ok = true;
  std::printf("%-30s %12s %10s %6s %6s\n", "check", "rel_error", "tolerance", "coords", "skip");
  for (const auto& r : run_gradcheck(opt)) {
    std::printf("%-30s %12.3e %10.0e %6zu %6zu %s\n", r.name.c_str(), r.max_rel_error, r.tolerance, r.coordinates,
                r.skipped, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  if (!ok) throw CommandFailed("gradient check failed");
  std::printf("all gradient checks passed\n");
}

void apply_threads(int threads) {
  if (threads == 0) {
    if (const char* env = std::getenv("FABRICNET_THREADS"); env != nullptr && *env != '\0') {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        throw ValidationError(std::string("FABRICNET_THREADS is not a number: '") + env + "'");
      }
    }
  }
  if (threads != 0) kernels::set_num_threads(threads);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FabricNet: class-based ensemble classifier toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: FABRICNET_THREADS, else all cores)")
      ->check(CLI::NonNegativeNumber);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic multi-label dataset");
  synth_cmd->add_option("--classes", synth.config.n_classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--samples", synth.config.n_samples, "Number of images")->capture_default_str();
  synth_cmd->add_option("--max-labels", synth.config.max_labels_per_sample, "Most labels per image")
      ->capture_default_str();
  synth_cmd->add_option("--size", synth.config.image_size, "Image side in pixels")->capture_default_str();
  synth_cmd->add_option("--noise", synth.config.noise, "Gaussian pixel noise std")->capture_default_str();
  synth_cmd->add_option("--seed", synth.config.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_flag("--force", synth.force, "Write into a non-empty directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train with k-fold splits and repeated runs");
  train_cmd->add_option("--data", tr.data, "Manifest CSV")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->capture_default_str();
  train_cmd->add_option("--classes", tr.classes, "Expected class count (default: from manifest)");
  train_cmd->add_option("--arch", tr.arch, "fabricnet or monolithic")->capture_default_str();
  train_cmd->add_option("--middle", tr.middle, "Middle flow blocks")->capture_default_str();
  train_cmd->add_option("--spec", tr.spec, "Ensemble layer spec")->capture_default_str();
  train_cmd->add_option("--input", tr.input, "Input image side")->capture_default_str();
  train_cmd->add_option("--epochs", tr.train.max_epochs, "Epochs per run")->capture_default_str();
  train_cmd->add_option("--batch", tr.train.batch_size, "Batch size")->capture_default_str();
  train_cmd->add_option("--lr", tr.train.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--folds", tr.train.k_folds, "Number of folds")->capture_default_str();
  train_cmd->add_option("--fold-index", tr.fold_index, "Fold used as the test split")->capture_default_str();
  train_cmd->add_option("--runs", tr.runs, "Runs on the chosen fold")->capture_default_str();
  train_cmd->add_option("--threshold", tr.train.threshold, "Decision threshold")->capture_default_str();
  train_cmd->add_option("--seed", tr.train.seed, "Random seed")->capture_default_str();
  train_cmd->add_flag("--no-augment", tr.no_augment, "Disable training augmentation");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Manifest CSV")->required();
  eval_cmd->add_option("--out", ev.out, "Report directory (default: next to the checkpoint)");
  eval_cmd->add_option("--threshold", ev.threshold, "Decision threshold")->capture_default_str();

  FlopsArgs fl;
  auto* flops_cmd = app.add_subcommand("flops", "Report parameters and FLOPs");
  flops_cmd->add_option("--classes", fl.model.n_classes, "Number of classes")->capture_default_str();
  flops_cmd->add_option("--arch", fl.arch, "fabricnet, monolithic or xception")->capture_default_str();
  flops_cmd->add_option("--middle", fl.model.middle_flows, "Middle flow blocks")->capture_default_str();
  flops_cmd->add_option("--spec", fl.model.ensemble_spec, "Ensemble layer spec")->capture_default_str();
  flops_cmd->add_option("--input", fl.model.input_size, "Input image side")->capture_default_str();
  flops_cmd->add_option("--flops-per-mac", fl.flops_per_mac, "1 or 2")->capture_default_str();

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  gc_cmd->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  gc_cmd->add_option("--dtype", gc.dtype, "32 or 64")->capture_default_str();
  gc_cmd->add_flag("--ops-only", gc.skip_model, "Skip the end-to-end model check");
  gc_cmd->add_flag("--corrupt-backward", gc.corrupt, "Add an op with a wrong backward")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    apply_threads(threads);
    if (*synth_cmd) run_synth(synth);
    if (*train_cmd) run_train(tr);
    if (*eval_cmd) run_eval(ev);
    if (*flops_cmd) run_flops(fl);
    if (*gc_cmd) run_gradcheck_cmd(gc);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CommandFailed& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
