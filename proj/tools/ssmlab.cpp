// ssmlab command-line surface: synth | train | analyze | compare | replay.
// Exit codes: 0 success, 2 usage or input error, 3 numerical divergence.

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssmlab/analysis.hpp"
#include "ssmlab/checkpoint.hpp"
#include "ssmlab/corpus.hpp"
#include "ssmlab/feature_blocks.hpp"
#include "ssmlab/train.hpp"
#include "ssmlab/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssmlab;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);  // round-trips exactly through stod
  return buf;
}

std::string fmt_fixed(double v, int places) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw DataError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

void write_file(const std::string& path, const std::string& text) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out.good()) throw DataError("cannot write " + path);
}

// Every command drops a manifest next to its outputs; `replay` re-runs the
// recorded command line, which must reproduce the listed files byte for byte.
void write_manifest(const std::string& path, const std::vector<std::string>& command,
                    const json& seed, const json& config,
                    const std::vector<std::string>& outputs, double wall_seconds) {
  json j;
  j["format_version"] = 1;
  j["tool_version"] = kVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  j["outputs"] = outputs;
  j["wall_clock_seconds"] = wall_seconds;
  write_file(path, j.dump(2) + "\n");
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& err) {
    throw DataError(path + " is not valid JSON: " + err.what());
  }
}

// SSMLAB_THREADS caps worker threads. All compute here is single-threaded, so
// any positive cap is honored; the value still gates Eigen's internal pool.
int apply_thread_cap() {
  const char* env = std::getenv("SSMLAB_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == nullptr || *end != '\0' || n < 1) {
    throw std::invalid_argument(std::string("SSMLAB_THREADS must be a positive integer, got \"") +
                                env + "\"");
  }
  Eigen::setNbThreads(static_cast<int>(n));
  return static_cast<int>(n);
}

std::string normalize_arch(std::string arch) {
  std::replace(arch.begin(), arch.end(), '-', '_');
  bool known = false;
  for (const auto& name : kArchNames) known = known || arch == name;
  if (!known) {
    std::string names;
    for (const auto& name : kArchNames) names += std::string(names.empty() ? "" : ", ") + name;
    throw std::invalid_argument("unknown architecture \"" + arch + "\" (expected one of " + names +
                                ")");
  }
  return arch;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

// ---- synth ------------------------------------------------------------

struct SynthOpts {
  std::string task;
  Index n = 2000;
  Index len = 256;
  Index distance = 64;
  std::uint64_t seed = 1;
  std::string out;
};

void run_synth(const SynthOpts& o) {
  Timer timer;
  const Dataset data = o.task == "longrange" ? synth_longrange(o.n, o.len, o.distance, Rng(o.seed))
                                             : synth_local(o.n, o.len, Rng(o.seed));
  const fs::path parent = fs::path(o.out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_jsonl(data, o.out);

  std::vector<std::string> cmd = {"synth", "--task", o.task,
                                  "--n",   std::to_string(o.n),
                                  "--len", std::to_string(o.len)};
  if (o.task == "longrange") {
    cmd.insert(cmd.end(), {"--distance", std::to_string(o.distance)});
  }
  cmd.insert(cmd.end(), {"--seed", std::to_string(o.seed), "--out", o.out});
  json config = {{"task", o.task}, {"n", o.n},       {"len", o.len},
                 {"distance", o.distance}, {"seed", o.seed}, {"out", o.out}};
  write_manifest(o.out + ".manifest.json", cmd, o.seed, config, {o.out}, timer.seconds());
  std::printf("synth %s: %lld examples (%lld positive) -> %s\n", o.task.c_str(),
              static_cast<long long>(data.size()), static_cast<long long>(data.n_pos()),
              o.out.c_str());
}

// ---- train ------------------------------------------------------------

struct TrainOpts {
  std::string arch = "conv1d";
  std::string data;
  std::string out;
  double lr = 1e-3;
  Index batch = 64;
  Index epochs = 10;
  double dropout = 0.5;
  Index embed = 64;
  Index hidden = 64;
  Index state = 16;
  Index len = 256;
  std::vector<Index> kernel_sizes = {6};
  double dt_min = 1e-3;
  double dt_max = 1e-1;
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
  double pos_weight = 0.0;  // <= 0 selects n_neg / n_pos
  std::uint64_t seed = 1;
};

TrainConfig to_train_config(const TrainOpts& o) {
  TrainConfig cfg;
  cfg.model.arch = normalize_arch(o.arch);
  cfg.model.embed_dim = o.embed;
  cfg.model.hidden = o.hidden;
  cfg.model.kernel_sizes = o.kernel_sizes;
  cfg.model.state_size = o.state;
  cfg.model.dropout_p = o.dropout;
  cfg.model.seq_len = o.len;
  cfg.model.dt_min = o.dt_min;
  cfg.model.dt_max = o.dt_max;
  cfg.lr = o.lr;
  cfg.batch_size = o.batch;
  cfg.epochs = o.epochs;
  cfg.seed = o.seed;
  cfg.pos_weight = o.pos_weight;
  cfg.split.train = o.train_frac;
  cfg.split.val = o.val_frac;
  cfg.split.test = o.test_frac;
  cfg.split.seed = o.seed;
  return cfg;
}

std::vector<std::string> train_command(const TrainOpts& o, const TrainConfig& cfg) {
  std::vector<std::string> cmd = {
      "train",     "--arch",    cfg.model.arch,        "--data",    o.data,
      "--out",     o.out,       "--lr",                fmt_double(o.lr),
      "--batch",   std::to_string(o.batch),            "--epochs",  std::to_string(o.epochs),
      "--dropout", fmt_double(o.dropout),              "--embed",   std::to_string(o.embed),
      "--hidden",  std::to_string(o.hidden),           "--state",   std::to_string(o.state),
      "--len",     std::to_string(o.len)};
  for (const Index k : o.kernel_sizes) {
    cmd.insert(cmd.end(), {"--kernel-size", std::to_string(k)});
  }
  cmd.insert(cmd.end(), {"--dt-min", fmt_double(o.dt_min),
                         "--dt-max", fmt_double(o.dt_max),
                         "--train-frac", fmt_double(o.train_frac),
                         "--val-frac", fmt_double(o.val_frac),
                         "--test-frac", fmt_double(o.test_frac),
                         "--pos-weight", fmt_double(o.pos_weight),
                         "--seed", std::to_string(o.seed)});
  return cmd;
}

void run_train(const TrainOpts& o) {
  Timer timer;
  const TrainConfig cfg = to_train_config(o);
  const Dataset data = load_jsonl(o.data);
  const TrainedModel trained = train(cfg, data);

  fs::create_directories(o.out);
  const std::string ckpt_path = o.out + "/checkpoint.json";
  const std::string metrics_path = o.out + "/metrics.json";
  const std::string epochs_path = o.out + "/epochs.csv";
  save_checkpoint(trained.params, trained.vocab, ckpt_path);

  json m;
  m["arch"] = cfg.model.arch;
  m["seed"] = o.seed;
  m["pos_weight"] = trained.pos_weight;
  m["best_epoch"] = trained.best_epoch;
  m["metrics"] = json::parse(metrics_to_json(trained.metrics));
  write_file(metrics_path, m.dump(2) + "\n");
  write_file(epochs_path, epoch_csv(trained.epochs));

  json config = {{"arch", cfg.model.arch},
                 {"data", o.data},
                 {"lr", o.lr},
                 {"batch", o.batch},
                 {"epochs", o.epochs},
                 {"dropout", o.dropout},
                 {"embed", o.embed},
                 {"hidden", o.hidden},
                 {"state", o.state},
                 {"len", o.len},
                 {"kernel_sizes", o.kernel_sizes},
                 {"dt_min", o.dt_min},
                 {"dt_max", o.dt_max},
                 {"split", {o.train_frac, o.val_frac, o.test_frac}},
                 {"pos_weight", o.pos_weight},
                 {"seed", o.seed}};
  write_manifest(o.out + "/manifest.json", train_command(o, cfg), o.seed, config,
                 {ckpt_path, metrics_path, epochs_path}, timer.seconds());

  const Metrics& test = trained.metrics.at("test");
  std::printf("train %s: %lld epochs, test accuracy %.2f, f1 %.2f -> %s\n", cfg.model.arch.c_str(),
              static_cast<long long>(o.epochs), test.accuracy, test.f1, o.out.c_str());
}

// ---- analyze ----------------------------------------------------------

struct AnalyzeOpts {
  std::string model;
  std::string out;  // prefix, prepended verbatim to report.json etc.
};

void run_analyze(const AnalyzeOpts& o) {
  Timer timer;
  const Checkpoint ck = load_checkpoint(o.model);
  const Eigen::ArrayXXd kernels = extract_kernels(ck.params);
  KernelReport report = analyze_kernels(kernels);
  report.arch = ck.params.config.arch;
  report.checkpoint = o.model;
  const Eigen::VectorXd mean_kernel = weighted_mean_kernel(kernels);

  const std::string report_path = o.out + "report.json";
  const std::string time_path = o.out + "time_response.csv";
  const std::string spectrum_path = o.out + "spectrum.csv";
  write_file(report_path, report_to_json(report));
  write_file(time_path, time_response_csv(mean_kernel, report.weighted_mean.time));
  write_file(spectrum_path, spectrum_csv(report.mean_psd));

  const std::vector<std::string> cmd = {"analyze", "--model", o.model, "--out", o.out};
  json config = {{"model", o.model}, {"out", o.out}, {"arch", report.arch}};
  // named after the primary artifact so a train manifest in the same
  // directory is never overwritten
  write_manifest(report_path + ".manifest.json", cmd, nullptr, config,
                 {report_path, time_path, spectrum_path}, timer.seconds());
  std::printf("analyze %s: %lld kernels of length %lld, %s, dominant %.6f cycles/sample, "
              "entropy %.4f -> %s\n",
              report.arch.c_str(), static_cast<long long>(report.channels),
              static_cast<long long>(report.length), report.filter_class.c_str(),
              report.mean_psd.dominant_frequency, report.mean_psd.entropy, report_path.c_str());
}

// ---- compare ----------------------------------------------------------

struct CompareRow {
  std::string arch;
  std::string seed;
  std::string accuracy, precision, recall, f1;      // from metrics files
  std::string dominant, entropy, filter_class;      // from report files
  bool has_metrics = false;
  bool has_report = false;
};

void fill_from_metrics(CompareRow& row, const json& j, const std::string& path) {
  row.arch = j.value("arch", "");
  if (j.contains("seed")) row.seed = std::to_string(j["seed"].get<std::uint64_t>());
  if (!j["metrics"].contains("test")) {
    throw DataError(path + " has no \"test\" split in its metrics");
  }
  const json& t = j["metrics"]["test"];
  row.accuracy = fmt_fixed(t.at("accuracy").get<double>(), 2);
  row.precision = fmt_fixed(t.at("precision").get<double>(), 2);
  row.recall = fmt_fixed(t.at("recall").get<double>(), 2);
  row.f1 = fmt_fixed(t.at("f1").get<double>(), 2);
  row.has_metrics = true;
}

void fill_from_report(CompareRow& row, const json& j) {
  row.arch = j.value("arch", "");
  const json& agg = j.at("aggregate").at("mean_psd");
  row.dominant = fmt_fixed(agg.at("dominant").at("frequency").get<double>(), 6);
  row.entropy = fmt_fixed(agg.at("entropy").get<double>(), 6);
  row.filter_class = j.at("filter_class").get<std::string>();
  row.has_report = true;
}

void run_compare(const std::vector<std::string>& inputs, const std::string& out) {
  Timer timer;
  std::vector<CompareRow> metric_rows;
  std::vector<CompareRow> report_rows;
  for (const std::string& path : inputs) {
    const json j = parse_json_file(path);
    CompareRow row;
    if (j.contains("metrics")) {
      fill_from_metrics(row, j, path);
      metric_rows.push_back(std::move(row));
    } else if (j.contains("filter_class")) {
      fill_from_report(row, j);
      report_rows.push_back(std::move(row));
    } else {
      throw DataError(path + " is neither a metrics file nor an analysis report");
    }
  }

  // One row per run: each metrics file claims the first unclaimed report of
  // the same architecture (argument order); leftover reports get bare rows.
  std::vector<CompareRow> rows = std::move(metric_rows);
  std::vector<bool> claimed(report_rows.size(), false);
  for (CompareRow& row : rows) {
    for (std::size_t r = 0; r < report_rows.size(); ++r) {
      if (claimed[r] || report_rows[r].arch != row.arch) continue;
      row.dominant = report_rows[r].dominant;
      row.entropy = report_rows[r].entropy;
      row.filter_class = report_rows[r].filter_class;
      row.has_report = true;
      claimed[r] = true;
      break;
    }
  }
  for (std::size_t r = 0; r < report_rows.size(); ++r) {
    if (!claimed[r]) rows.push_back(report_rows[r]);
  }

  std::string csv = "arch,accuracy,precision,recall,f1,dominant_freq,entropy,filter_class,seed\n";
  for (const CompareRow& row : rows) {
    csv += row.arch + "," + row.accuracy + "," + row.precision + "," + row.recall + "," + row.f1 +
           "," + row.dominant + "," + row.entropy + "," + row.filter_class + "," + row.seed + "\n";
  }
  write_file(out, csv);

  std::vector<std::string> cmd = {"compare"};
  cmd.insert(cmd.end(), inputs.begin(), inputs.end());
  cmd.insert(cmd.end(), {"--out", out});
  json config = {{"inputs", inputs}, {"out", out}};
  write_manifest(out + ".manifest.json", cmd, nullptr, config, {out}, timer.seconds());
  std::printf("compare: %zu rows -> %s\n", rows.size(), out.c_str());
}

// ---- replay -----------------------------------------------------------

int run_cli(std::vector<std::string> args);

void run_replay(const std::string& manifest_path) {
  const json j = parse_json_file(manifest_path);
  if (!j.contains("command") || !j["command"].is_array()) {
    throw DataError(manifest_path + " has no command array");
  }
  std::vector<std::string> cmd;
  for (const json& part : j["command"]) {
    if (!part.is_string()) throw DataError(manifest_path + " has a non-string command element");
    cmd.push_back(part.get<std::string>());
  }
  if (cmd.empty() || cmd[0] == "replay") {
    throw DataError(manifest_path + " does not record a replayable command");
  }
  std::printf("replay: %s\n", manifest_path.c_str());
  const int code = run_cli(std::move(cmd));
  if (code != 0) throw std::runtime_error("replayed command failed");
}

// ---- dispatcher ---------------------------------------------------------

int run_cli(std::vector<std::string> args) {
  CLI::App app{"six CNN/S4D sequence classifiers with kernel spectrum analysis"};
  app.require_subcommand(1);

  SynthOpts synth_opts;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic JSONL dataset");
  synth->add_option("--task", synth_opts.task, "longrange | local")
      ->required()
      ->check(CLI::IsMember({"longrange", "local"}));
  synth->add_option("--n", synth_opts.n, "number of examples")->check(CLI::PositiveNumber);
  synth->add_option("--len", synth_opts.len, "sequence length")->check(CLI::PositiveNumber);
  synth->add_option("--distance", synth_opts.distance, "mark-to-partner gap (longrange)");
  synth->add_option("--seed", synth_opts.seed, "generator seed");
  synth->add_option("--out", synth_opts.out, "output JSONL path")->required();

  TrainOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train one architecture on a JSONL dataset");
  train_cmd->add_option("--arch", train_opts.arch,
                        "conv1d | dwsep | s4d | dwsep-s4d | conv-s4d | smr-s4d");
  train_cmd->add_option("--data", train_opts.data, "JSONL dataset path")->required();
  train_cmd->add_option("--out", train_opts.out, "output directory")->required();
  train_cmd->add_option("--lr", train_opts.lr, "Adam learning rate");
  train_cmd->add_option("--batch", train_opts.batch, "batch size");
  train_cmd->add_option("--epochs", train_opts.epochs, "training epochs");
  train_cmd->add_option("--dropout", train_opts.dropout, "dropout probability before the head");
  train_cmd->add_option("--embed", train_opts.embed, "embedding dimension");
  train_cmd->add_option("--hidden", train_opts.hidden, "channels entering the head");
  train_cmd->add_option("--state", train_opts.state, "S4D modes per channel");
  train_cmd->add_option("--len", train_opts.len, "pad/truncate length");
  train_cmd->add_option("--kernel-size", train_opts.kernel_sizes,
                        "convolution kernel size (repeatable for conv1d)");
  train_cmd->add_option("--dt-min", train_opts.dt_min, "timescale grid lower bound");
  train_cmd->add_option("--dt-max", train_opts.dt_max, "timescale grid upper bound");
  train_cmd->add_option("--train-frac", train_opts.train_frac, "training split fraction");
  train_cmd->add_option("--val-frac", train_opts.val_frac, "validation split fraction");
  train_cmd->add_option("--test-frac", train_opts.test_frac, "test split fraction");
  train_cmd->add_option("--pos-weight", train_opts.pos_weight,
                        "positive-class loss weight; <= 0 selects n_neg/n_pos");
  train_cmd->add_option("--seed", train_opts.seed, "seed for split, init, dropout, batching");

  AnalyzeOpts analyze_opts;
  CLI::App* analyze = app.add_subcommand("analyze", "profile a checkpoint's kernels");
  analyze->add_option("--model", analyze_opts.model, "checkpoint path")->required();
  analyze->add_option("--out", analyze_opts.out,
                      "output prefix, prepended verbatim to report.json / "
                      "time_response.csv / spectrum.csv")
      ->required();

  std::vector<std::string> compare_inputs;
  std::string compare_out;
  CLI::App* compare = app.add_subcommand("compare", "tabulate runs into one CSV");
  compare->add_option("files", compare_inputs, "metrics.json and report.json files")
      ->required()
      ->expected(-1);
  compare->add_option("--out", compare_out, "output CSV path")->required();

  std::string replay_manifest;
  CLI::App* replay = app.add_subcommand("replay", "re-run a recorded manifest");
  replay->add_option("manifest", replay_manifest, "manifest.json path")->required();

  try {
    std::reverse(args.begin(), args.end());  // CLI11's vector overload pops from the back
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (synth->parsed()) run_synth(synth_opts);
  if (train_cmd->parsed()) run_train(train_opts);
  if (analyze->parsed()) run_analyze(analyze_opts);
  if (compare->parsed()) run_compare(compare_inputs, compare_out);
  if (replay->parsed()) run_replay(replay_manifest);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    apply_thread_cap();
    return run_cli(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const DivergenceError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 3;
  } catch (const DataError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const std::invalid_argument& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
}
