// leancnn command-line tool: analyze, train, evaluate, compare, curves, synth.
//
// Exit codes: 0 success, 2 usage or input error, 3 numeric failure.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "leancnn/leancnn.hpp"

namespace fs = std::filesystem;
using namespace leancnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

struct ArchOptions {
  std::string file;
  std::string builtin;
  std::string input_size = "auto";
  std::size_t resnet_hidden = 0;
  double resnet_hidden_dropout = 0.0;
  bool backbone_only = false;
};

struct DataOptions {
  std::string source;
  std::string metadata;
  std::vector<std::string> classes;
  std::string id_column = "image_id";
  std::string label_column = "dx";
  std::uint64_t data_seed = 0;
};

void add_arch_options(CLI::App* cmd, ArchOptions& a) {
  cmd->add_option("arch", a.file, "Architecture description file");
  cmd->add_option("--builtin", a.builtin, "Builtin architecture instead of a file")
      ->check(CLI::IsMember({"custom-cnn", "resnet50"}));
  cmd->add_option("--input-size", a.input_size,
                  "Square input resolution for builtin architectures ('auto': image size of the data, 224 without data)")
      ->capture_default_str();
  cmd->add_option("--resnet-hidden", a.resnet_hidden, "Width of an extra hidden dense layer in the resnet50 head (0: none)")
      ->capture_default_str();
  cmd->add_option("--resnet-hidden-dropout", a.resnet_hidden_dropout, "Dropout after the resnet50 hidden head layer")
      ->capture_default_str();
}

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data", d.source, "Image directory, or synthetic:<classes>,<per-class>,<size>")->required();
  cmd->add_option("--metadata", d.metadata, "Metadata table (default: <data>/metadata.csv)");
  cmd->add_option("--classes", d.classes, "Class names in index order (default: the seven HAM10000 diagnosis codes)")
      ->delimiter(',');
  cmd->add_option("--id-column", d.id_column, "Metadata column holding image ids")->capture_default_str();
  cmd->add_option("--label-column", d.label_column, "Metadata column holding labels")->capture_default_str();
  cmd->add_option("--data-seed", d.data_seed, "Seed of the synthetic generator")->capture_default_str();
}

/// LEANCNN_<LONG_NAME> for every option of every subcommand.
void bind_environment(CLI::App& app) {
  for (auto* sub : app.get_subcommands({})) {
    for (auto* opt : sub->get_options()) {
      std::string name = opt->get_single_name();
      if (name.empty() || name == "help") continue;
      std::string env = "LEANCNN_";
      for (char c : name) env.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      opt->envname(env);
    }
  }
}

struct SyntheticSource {
  std::size_t classes, per_class, size;
};

std::optional<SyntheticSource> parse_synthetic(const std::string& source) {
  const std::string prefix = "synthetic:";
  if (source.rfind(prefix, 0) != 0) return std::nullopt;
  std::vector<std::size_t> v;
  std::stringstream ss(source.substr(prefix.size()));
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw Error("bad synthetic data source '" + source + "'");
    v.push_back(static_cast<std::size_t>(x));
  }
  if (v.size() != 3) throw Error("synthetic data source needs synthetic:<classes>,<per-class>,<size>");
  return SyntheticSource{v[0], v[1], v[2]};
}

Dataset load_data(const DataOptions& d) {
  if (auto s = parse_synthetic(d.source)) {
    Dataset ds = synth_dataset(s->classes, s->per_class, s->size, d.data_seed);
    if (!d.classes.empty()) {
      if (d.classes.size() != ds.classes.size()) throw Error("--classes does not match the synthetic class count");
      ds.classes = d.classes;
    }
    return ds;
  }
  const fs::path dir = d.source;
  const fs::path meta = d.metadata.empty() ? dir / "metadata.csv" : fs::path(d.metadata);
  auto classes = d.classes.empty() ? ham10000_classes() : d.classes;
  return load_dataset(dir, meta, classes, MetadataColumns{d.id_column, d.label_column});
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Resolves the architecture. For builtins the class count follows the data
/// (when given) and the input size follows --input-size or the data.
ArchitectureSpec resolve_arch(const ArchOptions& a, std::optional<std::size_t> num_classes,
                              std::optional<std::size_t> data_size) {
  if (a.file.empty() == a.builtin.empty()) throw Error("give either an architecture file or --builtin");
  if (!a.file.empty()) {
    if (a.input_size != "auto") throw Error("--input-size applies to builtin architectures only");
    try {
      return parse_architecture(read_file(a.file));
    } catch (const ParseError& e) {
      throw Error(a.file + ": " + e.what());
    }
  }
  std::size_t size = data_size.value_or(224);
  if (a.input_size != "auto") {
    std::size_t used = 0;
    try {
      size = std::stoul(a.input_size, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != a.input_size.size() || size == 0) throw Error("bad --input-size '" + a.input_size + "'");
  }
  const std::size_t k = num_classes.value_or(7);
  if (a.builtin == "custom-cnn") return build_custom_cnn(size, k);
  HeadConfig head;
  head.enabled = !a.backbone_only;
  head.hidden_units = a.resnet_hidden;
  head.hidden_dropout = a.resnet_hidden_dropout;
  return build_resnet50(k, head, size);
}

std::string arch_source(const ArchOptions& a) { return a.file.empty() ? "builtin:" + a.builtin : a.file; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

void check_output_matches(const ArchitectureSpec& spec, std::size_t k) {
  const Shape out = output_shape(spec);
  if (out.size() != 1 || !(out[0] == k || (out[0] == 1 && k == 2))) {
    throw ShapeError("architecture output " + shape_to_string(out) + " does not fit " + std::to_string(k) +
                     " classes");
  }
}

/// Resizes every image to the architecture's input resolution.
void fit_to_input(Dataset& ds, const ArchitectureSpec& spec) {
  const Shape in = spec.input_shape();
  if (in.size() != 3 || in[2] != 3) throw ShapeError("architecture input must be (H, W, 3) for image data");
  resize_dataset(ds, in[0], in[1]);
}

/// Input size chosen by --input-size=auto: the synthetic image size, or the
/// 224 reference resolution for image directories.
std::optional<std::size_t> data_image_size(const DataOptions& d, const Dataset& ds) {
  if (!parse_synthetic(d.source) || ds.empty()) return std::nullopt;
  const Shape& s = ds.images.front().pixels.shape();
  return s[0] == s[1] ? std::optional<std::size_t>(s[0]) : std::nullopt;
}

// ---- analyze ----

struct AnalyzeArgs {
  ArchOptions arch;
  std::string convention = "mac-as-one";
  std::string format = "text";
  std::string out;
  std::size_t classes = 7;
  bool extended = false;
};

int run_analyze(const AnalyzeArgs& a) {
  ArchOptions arch = a.arch;
  const auto spec = resolve_arch(arch, a.classes, std::nullopt);
  const auto report = analyze(spec, AnalyzeOptions{parse_flop_convention(a.convention), a.extended, 4});
  std::string text;
  if (a.format == "text") text = render_text(report);
  else if (a.format == "csv") text = render_csv(report);
  else text = render_json(report);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  ArchOptions arch;
  DataOptions data;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::string loss = "auto";
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  std::vector<std::string> augment;
  std::vector<std::string> freeze, unfreeze;
  std::string init_weights;
  std::string out = "run";
};

LossKind resolve_loss(const std::string& s, std::size_t classes) {
  if (s == "bce") return LossKind::binary_cross_entropy;
  if (s == "categorical") return LossKind::categorical_cross_entropy;
  return classes == 2 ? LossKind::binary_cross_entropy : LossKind::categorical_cross_entropy;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

int run_train(const TrainArgs& a) {
  Dataset ds = load_data(a.data);
  if (ds.empty()) throw DataError("dataset is empty");
  const auto spec = resolve_arch(a.arch, ds.classes.size(), data_image_size(a.data, ds));
  check_output_matches(spec, ds.classes.size());
  fit_to_input(ds, spec);

  if (!(a.val_fraction >= 0.0 && a.val_fraction < 1.0)) throw Error("--val-fraction must be in [0, 1)");
  const auto parts = split(ds, SplitRatios{1.0 - a.val_fraction, a.val_fraction, 0.0}, a.seed);
  const auto stats = compute_stats(parts.train);
  Dataset train_ds = parts.train, val_ds = parts.val;
  normalize_dataset(train_ds, stats);
  normalize_dataset(val_ds, stats);

  auto params = init_parameters<float>(spec, a.seed);
  if (!a.init_weights.empty()) params = load_weights<float>(a.init_weights, std::move(params)).params;
  for (const auto& p : a.freeze) set_trainable(params, p, false);
  for (const auto& p : a.unfreeze) set_trainable(params, p, true);

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.loss = resolve_loss(a.loss, ds.classes.size());
  cfg.adam = AdamConfig{a.lr, a.beta1, a.beta2, a.epsilon};
  cfg.seed = a.seed;
  for (const auto& op : a.augment) cfg.augment.push_back(parse_augment_op(op));

  const fs::path out = a.out;
  fs::create_directories(out);
  const Shape in = spec.input_shape();
  std::ostringstream echo;
  echo << "# leancnn train, effective configuration\n"
       << "arch = " << quoted(arch_source(a.arch)) << "\n"
       << "input_shape = " << quoted(shape_to_string(in)) << "\n"
       << "resnet_hidden = " << a.arch.resnet_hidden << "\n"
       << "resnet_hidden_dropout = " << a.arch.resnet_hidden_dropout << "\n"
       << "data = " << quoted(a.data.source) << "\n"
       << "data_seed = " << a.data.data_seed << "\n"
       << "classes = " << quoted(join(ds.classes)) << "\n"
       << "samples = " << ds.size() << "\n"
       << "train_samples = " << train_ds.size() << "\n"
       << "val_samples = " << val_ds.size() << "\n"
       << "val_fraction = " << a.val_fraction << "\n"
       << "normalization = \"per-channel z-score, training-split statistics\"\n"
       << "seed = " << a.seed << "\n"
       << "epochs = " << a.epochs << "\n"
       << "batch_size = " << a.batch_size << "\n"
       << "optimizer = \"adam\"\n"
       << "learning_rate = " << format_number(a.lr) << "\n"
       << "beta1 = " << format_number(a.beta1) << "\n"
       << "beta2 = " << format_number(a.beta2) << "\n"
       << "epsilon = " << format_number(a.epsilon) << "\n"
       << "loss = " << quoted(to_string(cfg.loss)) << "\n"
       << "augment = " << quoted(join(a.augment)) << "\n"
       << "freeze = " << quoted(join(a.freeze)) << "\n"
       << "unfreeze = " << quoted(join(a.unfreeze)) << "\n"
       << "init_weights = " << quoted(a.init_weights) << "\n"
       << "out = " << quoted(a.out) << "\n";
  write_text(out / "config.echo", echo.str());

  const auto train_set = to_training_set<float>(train_ds);
  std::optional<TrainingSet<float>> val_set;
  if (!val_ds.empty()) val_set = to_training_set<float>(val_ds);
  auto result = train(spec, std::move(params), train_set, cfg, val_set ? &*val_set : nullptr);

  write_history(out / "history.csv", result.history);
  save_weights(out / "weights.lcw", result.params, stats);
  for (const auto& r : result.history) {
    std::printf("epoch %zu: loss %.4f, acc %.4f", r.epoch, r.train_loss, r.train_acc);
    if (r.val_loss) std::printf(", val_loss %.4f, val_acc %.4f", *r.val_loss, *r.val_acc);
    std::printf("\n");
  }
  if (result.diverged) {
    std::cerr << "error: training diverged (" << result.message << "); history up to the last completed epoch kept\n";
    return kExitNumeric;
  }
  std::printf("wrote %s\n", (out / "weights.lcw").string().c_str());
  return kExitOk;
}

// ---- evaluate ----

struct EvaluateArgs {
  ArchOptions arch;
  DataOptions data;
  std::string weights;
  std::string out = "eval";
  std::size_t batch_size = 32;
};

int run_evaluate(const EvaluateArgs& a) {
  Dataset ds = load_data(a.data);
  if (ds.empty()) throw DataError("dataset is empty");
  const auto spec = resolve_arch(a.arch, ds.classes.size(), data_image_size(a.data, ds));
  check_output_matches(spec, ds.classes.size());
  fit_to_input(ds, spec);
  auto loaded = load_weights<float>(a.weights, init_parameters<float>(spec, 0));
  if (!loaded.stats) {
    std::cerr << "warning: weights file carries no normalization statistics; using statistics of the evaluated data\n";
    loaded.stats = compute_stats(ds);
  }
  normalize_dataset(ds, *loaded.stats);
  const auto set = to_training_set<float>(ds);
  const auto probs = predict_all(spec, loaded.params, set.inputs, a.batch_size);
  const auto report = evaluate(probs, std::span<const int>(set.labels), ds.classes);
  write_evaluation(report, a.out);
  std::cout << render_evaluation(report);
  return kExitOk;
}

// ---- compare ----

struct CompareArgs {
  std::string a, b;
  std::optional<double> acc_a, acc_b;
};

int run_compare(const CompareArgs& c) {
  const auto report = compare(read_cost_report(c.a), read_cost_report(c.b), c.acc_a, c.acc_b);
  std::cout << render_comparison(report);
  return kExitOk;
}

// ---- curves ----

struct CurvesArgs {
  std::string history;
  std::string svg = ".";
};

int run_curves(const CurvesArgs& c) {
  const auto h = read_history(c.history);
  write_curves(h, c.svg);
  std::printf("wrote %s and %s\n", (fs::path(c.svg) / "accuracy.svg").string().c_str(),
              (fs::path(c.svg) / "loss.svg").string().c_str());
  return kExitOk;
}

// ---- synth ----

struct SynthArgs {
  std::size_t classes = 3, per_class = 20, size = 32;
  std::uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthArgs& s) {
  write_dataset(synth_dataset(s.classes, s.per_class, s.size, s.seed), s.out);
  std::printf("wrote %zu images to %s\n", s.classes * s.per_class, s.out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"leancnn: CNN cost analysis, training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "leancnn 1.0.0");

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "Per-layer parameter, FLOP and memory report");
  add_arch_options(analyze_cmd, an.arch);
  analyze_cmd->add_flag("--backbone-only", an.arch.backbone_only, "resnet50 without classification head");
  analyze_cmd->add_option("--num-classes", an.classes, "Output classes of builtin architectures")->capture_default_str();
  analyze_cmd->add_option("--flops-convention", an.convention, "FLOP counting convention")
      ->check(CLI::IsMember({"mac-as-one", "mul-add-as-two"}))
      ->capture_default_str();
  analyze_cmd->add_flag("--extended", an.extended, "Also count elementwise operations (bias, activations, pooling)");
  analyze_cmd->add_option("--format", an.format, "Output format")
      ->check(CLI::IsMember({"text", "csv", "json"}))
      ->capture_default_str();
  analyze_cmd->add_option("-o,--out", an.out, "Write the report to a file instead of standard output");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a network and write weights, history and config echo");
  add_arch_options(train_cmd, tr.arch);
  add_data_options(train_cmd, tr.data);
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--beta1", tr.beta1)->capture_default_str();
  train_cmd->add_option("--beta2", tr.beta2)->capture_default_str();
  train_cmd->add_option("--epsilon", tr.epsilon)->capture_default_str();
  train_cmd->add_option("--loss", tr.loss, "Loss (auto: bce for two classes, categorical otherwise)")
      ->check(CLI::IsMember({"auto", "bce", "categorical"}))
      ->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "Seed for initialization, split, shuffling and dropout")->capture_default_str();
  train_cmd->add_option("--val-fraction", tr.val_fraction, "Stratified validation share (0 disables)")
      ->capture_default_str();
  train_cmd->add_option("--augment", tr.augment, "Augmentation ops: rot90,rot180,rot270,hflip,vflip")->delimiter(',');
  train_cmd->add_option("--freeze", tr.freeze, "Regex of layer names to freeze (repeatable)");
  train_cmd->add_option("--unfreeze", tr.unfreeze, "Regex of layer names to unfreeze, applied after --freeze");
  train_cmd->add_option("--init-weights", tr.init_weights, "Start from a weights file instead of random init");
  train_cmd->add_option("--out", tr.out, "Output directory")->capture_default_str();

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Confusion matrix, precision/recall/F1 and ROC for a trained model");
  add_arch_options(eval_cmd, ev.arch);
  add_data_options(eval_cmd, ev.data);
  eval_cmd->add_option("--weights", ev.weights, "Weights file")->required();
  eval_cmd->add_option("--batch-size", ev.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "Output directory")->capture_default_str();

  CompareArgs cmp;
  auto* compare_cmd = app.add_subcommand("compare", "Deviation of report B from report A");
  compare_cmd->add_option("report-a", cmp.a, "Reference cost report (csv or json)")->required();
  compare_cmd->add_option("report-b", cmp.b, "Compared cost report (csv or json)")->required();
  compare_cmd->add_option("--acc-a", cmp.acc_a, "Accuracy of A in percent");
  compare_cmd->add_option("--acc-b", cmp.acc_b, "Accuracy of B in percent");

  CurvesArgs cv;
  auto* curves_cmd = app.add_subcommand("curves", "Accuracy and loss curves from a history file");
  curves_cmd->add_option("history", cv.history, "history.csv")->required();
  curves_cmd->add_option("--svg", cv.svg, "Output directory for accuracy.svg and loss.svg")->capture_default_str();

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset (metadata.csv + PPM images)");
  synth_cmd->add_option("--classes", sy.classes)->capture_default_str();
  synth_cmd->add_option("--per-class", sy.per_class)->capture_default_str();
  synth_cmd->add_option("--size", sy.size)->capture_default_str();
  synth_cmd->add_option("--seed", sy.seed)->capture_default_str();
  synth_cmd->add_option("--out", sy.out, "Output directory")->required();

  bind_environment(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*analyze_cmd) return run_analyze(an);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_evaluate(ev);
    if (*compare_cmd) return run_compare(cmp);
    if (*curves_cmd) return run_curves(cv);
    if (*synth_cmd) return run_synth(sy);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
