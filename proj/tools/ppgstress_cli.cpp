// Pipeline driver: synthesize PPG, featurize to scalograms, train, compress,
// run inference, and emit metric/budget reports. Every artifact is a pure
// function of the inputs and --seed; no timestamps or environment state leak
// into outputs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ppgstress/compress.hpp"
#include "ppgstress/eval.hpp"
#include "ppgstress/model_io.hpp"
#include "ppgstress/qengine.hpp"
#include "ppgstress/scalogram_io.hpp"
#include "ppgstress/signal.hpp"
#include "ppgstress/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;  // validation/pipeline failure (budget FAIL, bad data)
constexpr int kExitUsage = 2;    // bad flags or missing input files

// ---- config file ------------------------------------------------------------

// Flat key=value store. JSON files may nest (keys flatten to dotted paths);
// TOML support covers the scalar subset: key = value lines, [section]
// prefixes, # comments, quoted strings, numbers, booleans.
using ConfigMap = std::map<std::string, std::string>;

void flatten_json(const json& j, const std::string& prefix, ConfigMap& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    return;
  }
  if (j.is_string())
    out[prefix] = j.get<std::string>();
  else
    out[prefix] = j.dump();
}

std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

ConfigMap load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  ConfigMap out;
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string body = strip(text);
  if (!body.empty() && body[0] == '{') {
    flatten_json(json::parse(body), "", out);
    return out;
  }
  std::istringstream lines(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = strip(line.substr(1, line.size() - 2));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config parse error at " + path + ":" + std::to_string(lineno));
    std::string key = strip(line.substr(0, eq));
    std::string val = strip(line.substr(eq + 1));
    if (val.size() >= 2 && (val.front() == '"' || val.front() == '\'') && val.back() == val.front())
      val = val.substr(1, val.size() - 2);
    out[section.empty() ? key : section + "." + key] = val;
  }
  return out;
}

// The section-qualified name wins over the bare key.
std::string cfg_get(const ConfigMap& cfg, const std::string& section, const std::string& key,
                    const std::string& fallback) {
  auto it = cfg.find(section + "." + key);
  if (it != cfg.end()) return it->second;
  it = cfg.find(key);
  if (it != cfg.end()) return it->second;
  return fallback;
}

void require_input(const std::string& path) {
  if (!fs::exists(path)) throw CLI::ValidationError("missing input file: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
}

void write_json_file(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

// ---- subcommand bodies --------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  int records = 5;
  double duration_s = 60.0;
  std::string classes = "both";
};

int run_synth(const SynthArgs& a, uint64_t seed) {
  fs::create_directories(a.out_dir);
  const bool want_non = a.classes == "both" || a.classes == "non_stress";
  const bool want_str = a.classes == "both" || a.classes == "stress";
  if (!want_non && !want_str) throw CLI::ValidationError("--class must be both, stress, or non_stress");
  int written = 0;
  for (int cls = 0; cls < 2; ++cls) {
    if ((cls == 0 && !want_non) || (cls == 1 && !want_str)) continue;
    for (int r = 0; r < a.records; ++r) {
      ppgstress::SynthParams p = cls == 0 ? ppgstress::SynthParams::non_stress(0)
                                          : ppgstress::SynthParams::stress(0);
      p.duration_s = a.duration_s;
      p.seed = seed + 1000003ull * static_cast<uint64_t>(cls * a.records + r);
      const ppgstress::PpgRecord rec = ppgstress::synth_ppg(p);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%02d.csv", cls == 0 ? "non_stress" : "stress", r);
      ppgstress::write_ppg_csv(rec, (fs::path(a.out_dir) / name).string());
      ++written;
    }
  }
  std::printf("wrote %d records to %s\n", written, a.out_dir.c_str());
  return kExitOk;
}

struct FeaturizeArgs {
  std::vector<std::string> inputs;
  std::string out_path;
  std::string backend = "fft";
  double sample_rate_hz = 64.0;
  double window_s = 10.0;
  double stride_s = 1.0;
  std::string pgm_dir;
};

int run_featurize(const FeaturizeArgs& a) {
  ppgstress::CwtConfig cfg;
  cfg.sample_rate_hz = a.sample_rate_hz;
  if (a.backend == "direct")
    cfg.backend = ppgstress::CwtBackend::direct;
  else if (a.backend == "fft")
    cfg.backend = ppgstress::CwtBackend::fft;
  else
    throw CLI::ValidationError("--backend must be fft or direct");

  std::vector<ppgstress::ScalogramImage> images;
  for (std::size_t src = 0; src < a.inputs.size(); ++src) {
    require_input(a.inputs[src]);
    const auto rec = ppgstress::load_ppg_csv(a.inputs[src], a.sample_rate_hz);
    for (const auto& win : ppgstress::segment_windows(rec, a.window_s, a.stride_s)) {
      auto img = ppgstress::render_image(ppgstress::cwt(win, cfg));
      img.label = win.label;
      img.source_id = static_cast<uint32_t>(src);
      img.window_start = static_cast<uint32_t>(win.start_index);
      images.push_back(std::move(img));
    }
  }
  if (images.empty()) throw std::runtime_error("featurize: no windows produced");
  ppgstress::save_images(images, a.out_path);
  if (!a.pgm_dir.empty()) {
    fs::create_directories(a.pgm_dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "img_%05zu.pgm", i);
      ppgstress::write_pgm(images[i], (fs::path(a.pgm_dir) / name).string());
    }
  }
  std::printf("wrote %zu scalograms to %s\n", images.size(), a.out_path.c_str());
  return kExitOk;
}

struct TrainArgs {
  std::string in_path;
  std::string out_path;
  std::string history_csv;
  std::string history_json;
  int epochs = 5;
  int batch_size = 32;
  double val_split = 0.2;
  double learning_rate = 0.001;
};

int run_train(const TrainArgs& a, uint64_t seed) {
  require_input(a.in_path);
  const auto images = ppgstress::load_images(a.in_path);
  ppgstress::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.val_split = a.val_split;
  cfg.learning_rate = a.learning_rate;
  cfg.seed = seed;
  cfg.augment.seed = seed;
  const ppgstress::Model start = ppgstress::build_default_model(seed);
  const auto result = ppgstress::train(start, images, cfg);
  ppgstress::save_model(result.model, a.out_path);
  if (!a.history_csv.empty()) ppgstress::write_history_csv(result.history, a.history_csv);
  if (!a.history_json.empty()) write_json_file(a.history_json, ppgstress::history_json(result.history));
  const auto& last = result.history.epochs.back();
  std::printf("trained %d epochs: train_acc=%.4f val_acc=%.4f loss=%.4f\n", last.epoch,
              last.train_acc, last.val_acc, last.mean_loss);
  return kExitOk;
}

struct PruneArgs {
  std::string in_path;
  std::string out_path;
  int keep_units = 128;
};

int run_prune(const PruneArgs& a) {
  require_input(a.in_path);
  const ppgstress::Model m = ppgstress::load_model(a.in_path);
  ppgstress::PruneConfig cfg;
  cfg.keep_units = a.keep_units;
  const ppgstress::Model pruned = ppgstress::prune_dense_units(m, cfg);
  ppgstress::save_model(pruned, a.out_path);
  std::printf("pruned to %d hidden units: %zu parameters, %zu payload bytes\n", a.keep_units,
              ppgstress::parameter_count(pruned), ppgstress::float_payload_bytes(pruned));
  return kExitOk;
}

struct QuantizeArgs {
  std::string in_path;
  std::string calib_path;
  std::string out_path;
};

int run_quantize(const QuantizeArgs& a) {
  require_input(a.in_path);
  require_input(a.calib_path);
  const ppgstress::Model m = ppgstress::load_model(a.in_path);
  const auto calib_images = ppgstress::load_images(a.calib_path);
  std::vector<ppgstress::Tensor> calib;
  calib.reserve(calib_images.size());
  for (const auto& img : calib_images) calib.push_back(ppgstress::image_tensor<float>(img));
  const auto ranges = ppgstress::calibrate(m, calib);
  const ppgstress::QuantModel qm = ppgstress::quantize_ptq(m, ranges);
  ppgstress::save_model(qm, a.out_path);
  std::printf("quantized: %zu payload bytes\n", ppgstress::quant_payload_bytes(qm));
  return kExitOk;
}

struct InferArgs {
  std::string in_path;
  std::string model_path;
  std::string out_path;
};

int run_infer(const InferArgs& a) {
  require_input(a.in_path);
  require_input(a.model_path);
  const auto images = ppgstress::load_images(a.in_path);
  const auto bytes = ppgstress::detail::read_file(a.model_path);

  std::string out = "index,p_non_stress,p_stress,pred,label\n";
  char buf[160];
  auto emit = [&](std::size_t i, double p0, double p1, const std::optional<int>& label) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%d,%d\n", i, p0, p1, p1 >= 0.5 ? 1 : 0,
                  label ? *label : -1);
    out += buf;
  };
  if (ppgstress::is_quantized_model_file(bytes)) {
    const ppgstress::QuantModel qm = ppgstress::deserialize_quant_model(bytes);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto p = ppgstress::qforward(qm, images[i]);
      emit(i, p[0], p[1], images[i].label);
    }
  } else {
    const ppgstress::Model m = ppgstress::deserialize_model(bytes);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto p = ppgstress::forward_single(m, ppgstress::image_tensor<float>(images[i]));
      emit(i, p[0], p[1], images[i].label);
    }
  }
  write_text(a.out_path, out);
  std::printf("wrote %zu predictions to %s\n", images.size(), a.out_path.c_str());
  return kExitOk;
}

struct EvaluateArgs {
  std::string in_path;
  std::string out_path;
  std::string pr_csv;
};

int run_evaluate(const EvaluateArgs& a) {
  require_input(a.in_path);
  std::ifstream f(a.in_path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("evaluate: empty predictions file");
  std::vector<double> scores;
  std::vector<int> labels;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (strip(line).empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5)
      throw std::runtime_error("evaluate: malformed row at line " + std::to_string(lineno));
    const int label = std::stoi(cells[4]);
    if (label < 0)
      throw std::runtime_error("evaluate: unlabeled prediction at line " + std::to_string(lineno));
    scores.push_back(std::stod(cells[2]));
    labels.push_back(label);
  }
  const ppgstress::MetricsReport report = ppgstress::evaluate_scores(scores, labels);
  write_json_file(a.out_path, ppgstress::metrics_json(report));
  if (!a.pr_csv.empty()) ppgstress::write_pr_csv(report.pr, a.pr_csv);
  std::printf("accuracy=%.4f roc_auc=%.4f over %zu predictions\n", report.accuracy, report.roc_auc,
              scores.size());
  return kExitOk;
}

struct BudgetArgs {
  std::string in_path;
  std::string out_path;
  std::size_t flash_budget = 2'000'000;
  std::size_t ram_budget = 512'000;
};

int run_budget(const BudgetArgs& a) {
  require_input(a.in_path);
  const auto bytes = ppgstress::detail::read_file(a.in_path);
  ppgstress::MemoryPlan plan;
  if (ppgstress::is_quantized_model_file(bytes))
    plan = ppgstress::plan_memory(ppgstress::deserialize_quant_model(bytes));
  else
    plan = ppgstress::plan_memory(ppgstress::deserialize_model(bytes));
  ppgstress::Budget budget;
  budget.flash_bytes = a.flash_budget;
  budget.ram_bytes = a.ram_budget;
  const ppgstress::BudgetReport report = ppgstress::check_budget(plan, budget);
  json j = ppgstress::budget_report_json(report, plan);
  j["model_file_bytes"] = bytes.size();  // container overhead, informational
  if (!a.out_path.empty()) write_json_file(a.out_path, j);
  std::printf("flash %zu/%zu ram %zu/%zu -> %s\n", report.flash_bytes, report.flash_budget,
              report.ram_peak_bytes, report.ram_budget, report.pass ? "PASS" : "FAIL");
  return report.pass ? kExitOk : kExitFailure;
}

struct ReportArgs {
  std::string in_dir;
  std::string out_path;
};

int run_report(const ReportArgs& a) {
  require_input(a.in_dir);
  json summary = json::object();
  const std::map<std::string, std::string> parts = {{"budget", "budget.json"},
                                                    {"metrics", "metrics.json"},
                                                    {"history", "history.json"}};
  for (const auto& [key, name] : parts) {
    const fs::path p = fs::path(a.in_dir) / name;
    if (!fs::exists(p)) continue;
    std::ifstream f(p);
    summary[key] = json::parse(f);
  }
  if (summary.empty())
    throw std::runtime_error("report: no budget.json, metrics.json, or history.json in " + a.in_dir);
  write_json_file(a.out_path, summary);
  std::printf("wrote summary with %zu sections to %s\n", summary.size(), a.out_path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PPG stress classification pipeline"};
  app.require_subcommand(1);

  // --config is resolved before CLI11 parses so file values become flag
  // defaults; explicit flags still win.
  ConfigMap cfg;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") {
      try {
        cfg = load_config(argv[i + 1]);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
      }
    }
  std::string config_path;
  app.add_option("--config", config_path, "TOML or JSON config supplying flag defaults");

  uint64_t seed = static_cast<uint64_t>(std::stoull(cfg_get(cfg, "", "seed", "0")));
  app.add_option("--seed", seed, "global RNG seed (synthesis, init, shuffle, augmentation)");

  SynthArgs synth;
  synth.records = std::stoi(cfg_get(cfg, "synth", "records", "5"));
  synth.duration_s = std::stod(cfg_get(cfg, "synth", "duration_s", "60"));
  auto* cmd_synth = app.add_subcommand("synth", "generate labeled synthetic PPG CSV records");
  cmd_synth->add_option("--out", synth.out_dir, "output directory")->required();
  cmd_synth->add_option("--records", synth.records, "records per class");
  cmd_synth->add_option("--duration", synth.duration_s, "record duration in seconds");
  cmd_synth->add_option("--class", synth.classes, "both | stress | non_stress");

  FeaturizeArgs feat;
  feat.backend = cfg_get(cfg, "featurize", "backend", "fft");
  feat.window_s = std::stod(cfg_get(cfg, "featurize", "window_s", "10"));
  feat.stride_s = std::stod(cfg_get(cfg, "featurize", "stride_s", "1"));
  auto* cmd_feat = app.add_subcommand("featurize", "PPG CSVs -> scalogram tensor file");
  cmd_feat->add_option("--in", feat.inputs, "input CSV paths")->required()->expected(-1);
  cmd_feat->add_option("--out", feat.out_path, "output scalogram file")->required();
  cmd_feat->add_option("--backend", feat.backend, "fft | direct");
  cmd_feat->add_option("--rate", feat.sample_rate_hz, "sample rate in Hz");
  cmd_feat->add_option("--window-s", feat.window_s, "window length in seconds");
  cmd_feat->add_option("--stride-s", feat.stride_s, "stride in seconds");
  cmd_feat->add_option("--pgm", feat.pgm_dir, "also export PGM images to this directory");

  TrainArgs train_args;
  train_args.epochs = std::stoi(cfg_get(cfg, "train", "epochs", "5"));
  train_args.batch_size = std::stoi(cfg_get(cfg, "train", "batch_size", "32"));
  train_args.val_split = std::stod(cfg_get(cfg, "train", "val_split", "0.2"));
  train_args.learning_rate = std::stod(cfg_get(cfg, "train", "learning_rate", "0.001"));
  auto* cmd_train = app.add_subcommand("train", "scalograms -> trained float model");
  cmd_train->add_option("--in", train_args.in_path, "input scalogram file")->required();
  cmd_train->add_option("--out", train_args.out_path, "output model file")->required();
  cmd_train->add_option("--epochs", train_args.epochs, "training epochs");
  cmd_train->add_option("--batch-size", train_args.batch_size, "examples per batch");
  cmd_train->add_option("--val-split", train_args.val_split, "validation fraction in (0,1)");
  cmd_train->add_option("--learning-rate", train_args.learning_rate, "Adam learning rate");
  cmd_train->add_option("--history", train_args.history_csv, "write history CSV here");
  cmd_train->add_option("--history-json", train_args.history_json, "write history JSON here");

  PruneArgs prune;
  prune.keep_units = std::stoi(cfg_get(cfg, "prune", "keep_units", "128"));
  auto* cmd_prune = app.add_subcommand("prune", "drop low-norm hidden units from a float model");
  cmd_prune->add_option("--in", prune.in_path, "input model file")->required();
  cmd_prune->add_option("--out", prune.out_path, "output model file")->required();
  cmd_prune->add_option("--keep-units", prune.keep_units, "hidden units to keep");

  QuantizeArgs quant;
  auto* cmd_quant = app.add_subcommand("quantize", "float model -> int8 model via calibration");
  cmd_quant->add_option("--in", quant.in_path, "input float model file")->required();
  cmd_quant->add_option("--calib", quant.calib_path, "calibration scalogram file")->required();
  cmd_quant->add_option("--out", quant.out_path, "output quantized model file")->required();

  InferArgs infer;
  auto* cmd_infer = app.add_subcommand("infer", "model + scalograms -> predictions CSV");
  cmd_infer->add_option("--in", infer.in_path, "input scalogram file")->required();
  cmd_infer->add_option("--model", infer.model_path, "model file (float or quantized)")->required();
  cmd_infer->add_option("--out", infer.out_path, "output predictions CSV")->required();

  EvaluateArgs eval_args;
  auto* cmd_eval = app.add_subcommand("evaluate", "predictions CSV -> metrics JSON");
  cmd_eval->add_option("--in", eval_args.in_path, "input predictions CSV")->required();
  cmd_eval->add_option("--out", eval_args.out_path, "output metrics JSON")->required();
  cmd_eval->add_option("--pr-csv", eval_args.pr_csv, "also write the PR curve as CSV");

  BudgetArgs budget;
  budget.flash_budget = std::stoull(cfg_get(cfg, "budget", "flash_budget", "2000000"));
  budget.ram_budget = std::stoull(cfg_get(cfg, "budget", "ram_budget", "512000"));
  auto* cmd_budget = app.add_subcommand("budget", "model -> flash/RAM budget report (exit 1 on FAIL)");
  cmd_budget->add_option("--in", budget.in_path, "model file")->required();
  cmd_budget->add_option("--out", budget.out_path, "output budget JSON");
  cmd_budget->add_option("--flash-budget", budget.flash_budget, "flash budget in bytes");
  cmd_budget->add_option("--ram-budget", budget.ram_budget, "RAM budget in bytes");

  ReportArgs report;
  auto* cmd_report = app.add_subcommand("report", "aggregate budget/metrics/history JSON");
  cmd_report->add_option("--in", report.in_dir, "directory holding the stage JSON files")->required();
  cmd_report->add_option("--out", report.out_path, "output summary JSON")->required();

  // global flags (--seed, --config) remain valid after the subcommand name
  for (CLI::App* sc : app.get_subcommands([](CLI::App*) { return true; })) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (cmd_synth->parsed()) return run_synth(synth, seed);
    if (cmd_feat->parsed()) return run_featurize(feat);
    if (cmd_train->parsed()) return run_train(train_args, seed);
    if (cmd_prune->parsed()) return run_prune(prune);
    if (cmd_quant->parsed()) return run_quantize(quant);
    if (cmd_infer->parsed()) return run_infer(infer);
    if (cmd_eval->parsed()) return run_evaluate(eval_args);
    if (cmd_budget->parsed()) return run_budget(budget);
    if (cmd_report->parsed()) return run_report(report);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
