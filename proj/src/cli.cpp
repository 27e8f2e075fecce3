#include "lmaml/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "lmaml/bench.hpp"
#include "lmaml/checkpoint.hpp"
#include "lmaml/report.hpp"
#include "lmaml/search.hpp"

namespace lmaml {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kBlocks = 5;
constexpr const char* kOutEnv = "LMAML_OUT_DIR";

class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> parse_steps(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& part : split(text, ',')) {
    const auto v = parse_uint(part);
    if (v == 0) throw std::invalid_argument("--steps: step counts must be >= 1");
    out.push_back(v);
  }
  return out;
}

std::string config_name(const TaskSpec& t) { return std::to_string(t.k_shot) + "s" + std::to_string(t.n_way) + "w"; }

TaskSpec parse_config_name(const std::string& name, std::size_t k_query) {
  const auto s = name.find('s');
  if (s == std::string::npos || name.empty() || name.back() != 'w') {
    throw std::invalid_argument("--configs: expected names like 1s5w, got '" + name + "'");
  }
  return {parse_uint(name.substr(s + 1, name.size() - s - 2)), parse_uint(name.substr(0, s)), k_query};
}

std::map<std::string, double> parse_floors(const std::string& text) {
  std::map<std::string, double> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--floors: expected config=accuracy, got '" + part + "'");
    out[trim(part.substr(0, eq))] = parse_double(part.substr(eq + 1));
  }
  return out;
}

std::vector<LambdaPattern> parse_patterns(const std::string& text) {
  if (text == "all") return enumerate_patterns(kBlocks);
  if (text == "trivial") return trivial_patterns(kBlocks);
  std::vector<LambdaPattern> out;
  for (const auto& part : split(text, ';')) {
    out.push_back(LambdaPattern::parse(part));
    if (out.back().size() != kBlocks) {
      throw std::invalid_argument("pattern " + out.back().str() + " needs " + std::to_string(kBlocks) + " bits");
    }
  }
  return out;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path make_run_dir(const RunConfig& cfg) {
  const fs::path root = cfg.out_dir;
  fs::path dir = root / (cfg.run_name.empty() ? cfg.command + "-" + timestamp() : cfg.run_name);
  if (cfg.run_name.empty()) {
    const fs::path base = dir;
    for (int i = 2; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::string read_file(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput(what + " not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SplitDatasets load_data(const RunConfig& cfg, std::ostream& err) {
  if (!cfg.cifar_dir.empty()) {
    if (cfg.split_file.empty()) throw MissingInput("missing required flag --split (needed with --cifar)");
    if (!fs::exists(cfg.split_file)) throw MissingInput("split manifest not found: " + cfg.split_file);
    if (!fs::is_directory(cfg.cifar_dir)) throw MissingInput("CIFAR-100 directory not found: " + cfg.cifar_dir);
    auto ds = apply_split(load_cifar100(cfg.cifar_dir), read_split_manifest(cfg.split_file));
    for (const auto& w : ds.warnings) err << "warning: " << w << "\n";
    return ds;
  }
  SynthSplitOptions o;
  o.shape = {3, cfg.image_size, cfg.image_size};
  o.difficulty = cfg.difficulty;
  o.images_per_class = cfg.images_per_class;
  o.seed = cfg.seed;
  return synth_splits(o);
}

MetaModel fresh_model(const RunConfig& cfg, const ImageShape& input, const TaskSpec& task) {
  Cnn4Options o;
  o.filters = cfg.filters;
  o.n_way = task.n_way;
  o.input = input;
  o.feature_dim = cfg.feature_dim;
  o.seed = cfg.seed;
  o.init_std = cfg.init_std;
  auto net = build_cnn4(o);
  o.feature_dim.reset();
  const auto derived = cnn4_architecture(o).feature_dim();
  if (net.arch.feature_dim() != derived) {
    throw std::invalid_argument("--feature-dim " + std::to_string(net.arch.feature_dim()) + " does not match the " +
                                std::to_string(derived) + " features of a " + std::to_string(input.height) + "x" +
                                std::to_string(input.width) + " input");
  }
  return make_meta_model(net.arch, net.weights, cfg.meta, task);
}

void check_shape(const MetaModel& m, const SplitDatasets& ds) {
  if (!(m.arch.input == ds.test.shape)) {
    throw std::invalid_argument("model expects " + std::to_string(m.arch.input.height) + "x" +
                                std::to_string(m.arch.input.width) + " images, data has " +
                                std::to_string(ds.test.shape.height) + "x" + std::to_string(ds.test.shape.width));
  }
}

struct Context {
  RunConfig cfg;
  std::set<std::string> given;  // flags set on the command line or in the config file
  fs::path dir;
  std::ostream& out;
  std::ostream& err;

  bool has(const std::string& key) const { return given.count(key) != 0; }
};

std::size_t single_steps(const Context& c) {
  if (c.cfg.steps.size() != 1) {
    throw std::invalid_argument(c.cfg.command + ": --steps takes a single value here, got " + join(c.cfg.steps));
  }
  return c.cfg.steps.front();
}

// Loads --checkpoint and applies explicit task and step-size overrides.
// Synthetic data follows the checkpoint's image size unless --image-size is given.
MetaModel checkpoint_model(Context& c, TaskSpec* task) {
  if (!fs::exists(c.cfg.checkpoint)) throw MissingInput("checkpoint not found: " + c.cfg.checkpoint);
  auto m = load_checkpoint(c.cfg.checkpoint);
  if (!c.has("image-size")) c.cfg.image_size = m.arch.input.height;
  if (c.has("n-way") && c.cfg.task.n_way != m.arch.n_way) {
    throw std::invalid_argument("--n-way " + std::to_string(c.cfg.task.n_way) + " does not match the checkpoint (" +
                                std::to_string(m.arch.n_way) + "-way)");
  }
  if (c.has("k-shot")) m.task.k_shot = c.cfg.task.k_shot;
  if (c.has("k-query")) m.task.k_query = c.cfg.task.k_query;
  if (c.has("alpha")) m.config.alpha = c.cfg.meta.alpha;
  if (task) *task = m.task;
  return m;
}

int cmd_train(Context& c) {
  const auto& cfg = c.cfg;
  auto meta = cfg.meta;
  meta.steps = single_steps(c);
  meta.validate();
  const auto pattern = parse_patterns(cfg.pattern).front();
  const auto ds = load_data(cfg, c.err);
  auto model = fresh_model(cfg, ds.train.shape, cfg.task);
  model.config = meta;
  const auto result = train(model, ds.train, ds.validation, meta, pattern);
  save_checkpoint(result.best, c.dir / "checkpoint.bin");
  save_checkpoint(result.final, c.dir / "final.bin");
  write_text(c.dir / "train_log.csv", train_log_csv(result.log));
  if (result.log.empty()) {
    c.out << "train: 0 epochs, checkpoint holds the initial weights -> " << c.dir.string() << "\n";
  } else {
    c.out << "train: " << result.log.size() << " epochs, best validation accuracy "
          << format_fixed(result.log[result.best_epoch - 1].val_accuracy, 4) << " at epoch " << result.best_epoch
          << " -> " << c.dir.string() << "\n";
  }
  return kExitOk;
}

int cmd_eval(Context& c) {
  if (c.cfg.checkpoint.empty()) throw MissingInput("missing required flag --checkpoint");
  const auto steps = single_steps(c);
  const auto pattern = parse_patterns(c.cfg.pattern).front();
  if (c.cfg.episodes == 0) throw std::invalid_argument("eval: --episodes must be positive");
  TaskSpec task;
  const auto model = checkpoint_model(c, &task);
  const auto ds = load_data(c.cfg, c.err);
  check_shape(model, ds);
  const auto r = evaluate(model, ds.test, c.cfg.episodes, pattern, steps, c.cfg.seed);
  std::string csv = "episode,accuracy\n";
  for (std::size_t i = 0; i < r.accuracies.size(); ++i) {
    csv += std::to_string(i) + "," + format_double(r.accuracies[i]) + "\n";
  }
  write_text(c.dir / "eval.csv", csv);
  const std::string line = "eval: accuracy " + format_fixed(r.mean, 4) + " +/- " + format_fixed(r.ci95, 4) +
                           " over " + std::to_string(r.accuracies.size()) + " episodes (" + model.task.label() +
                           ", pattern " + pattern.str() + ", P=" + std::to_string(steps) + ")";
  write_text(c.dir / "eval.txt", "mean = " + format_double(r.mean) + "\nci95 = " + format_double(r.ci95) +
                                     "\nepisodes = " + std::to_string(r.accuracies.size()) + "\n");
  c.out << line << "\n";
  return kExitOk;
}

std::vector<SweepRecord> run_sweep(Context& c) {
  const auto& cfg = c.cfg;
  const auto patterns = parse_patterns(cfg.patterns);
  if (cfg.episodes == 0) throw std::invalid_argument(cfg.command + ": --episodes must be positive");
  std::optional<MetaModel> shared;
  if (!cfg.checkpoint.empty()) shared = checkpoint_model(c, nullptr);
  const auto ds = load_data(cfg, c.err);

  std::vector<TaskSpec> tasks;
  if (cfg.configs.empty()) {
    tasks.push_back(shared && !c.has("n-way") && !c.has("k-shot") ? shared->task : cfg.task);
  } else {
    for (const auto& name : split(cfg.configs, ',')) tasks.push_back(parse_config_name(trim(name), cfg.task.k_query));
  }

  std::vector<SweepConfig> configs;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& task = tasks[i];
    MetaModel model;
    if (shared) {
      if (shared->arch.n_way != task.n_way) {
        throw std::invalid_argument("configuration " + config_name(task) + " does not match the " +
                                    std::to_string(shared->arch.n_way) + "-way checkpoint");
      }
      model = *shared;
      model.task = task;
    } else {
      model = fresh_model(cfg, ds.train.shape, task);
      if (cfg.meta.epochs > 0) {
        auto meta = cfg.meta;
        meta.steps = cfg.reference_steps;
        meta.validate();
        model = train(model, ds.train, ds.validation, meta, LambdaPattern::full(kBlocks)).best;
        c.err << "trained " << config_name(task) << " for " << meta.epochs << " epochs\n";
      }
    }
    check_shape(model, ds);
    configs.push_back({config_name(task), model, sample_episodes(ds.test, task, cfg.episodes, cfg.seed + i)});
  }
  SweepOptions opt;
  opt.warmup = cfg.warmup;
  return sweep(configs, patterns, cfg.steps, opt);
}

int cmd_sweep(Context& c) {
  const auto records = run_sweep(c);
  emit_report({}, records, nullptr, c.dir);
  c.out << "sweep: " << records.size() << " records -> " << c.dir.string() << "\n";
  return kExitOk;
}

int cmd_search(Context& c) {
  std::vector<SweepRecord> records;
  if (!c.cfg.records.empty()) {
    records = parse_sweep_csv(read_file(c.cfg.records, "sweep records"));
  } else {
    bool has_reference = false;
    for (auto s : c.cfg.steps) has_reference |= s == c.cfg.reference_steps;
    if (!has_reference) {
      throw std::invalid_argument("search: --steps " + join(c.cfg.steps) + " must include the reference P=" +
                                  std::to_string(c.cfg.reference_steps));
    }
    records = run_sweep(c);
  }
  const auto rep = select_fastest(records, c.cfg.threshold, c.cfg.reference_steps, parse_floors(c.cfg.floors));
  emit_report({}, records, &rep, c.dir);
  bool single_step = false;
  for (const auto& r : records) single_step |= r.steps == 1;
  if (single_step) write_text(c.dir / "best_p1.md", best_pattern_markdown(best_at_one_step(records)));
  c.out << "search: selected pattern " << rep.selected.pattern.str() << " at P=" << rep.selected.steps
        << ", speedup " << format_fixed(rep.speedup, 2) << " (" << rep.admissible.size() << " of " << records.size()
        << " records admissible) -> " << c.dir.string() << "\n";
  return kExitOk;
}

int cmd_bench(Context& c) {
  const auto& cfg = c.cfg;
  const auto patterns = parse_patterns(c.has("patterns") ? cfg.patterns : cfg.pattern);
  const std::size_t episodes = c.has("episodes") ? cfg.episodes : kMinTimedRuns;
  if (episodes == 0) throw std::invalid_argument("bench: --episodes must be positive");
  TaskSpec task = cfg.task;
  std::optional<MetaModel> loaded;
  if (!cfg.checkpoint.empty()) loaded = checkpoint_model(c, &task);
  const auto ds = load_data(cfg, c.err);
  const auto model = loaded ? *loaded : fresh_model(cfg, ds.test.shape, task);
  check_shape(model, ds);
  const auto eps = sample_episodes(ds.test, task, episodes, cfg.seed);
  TimingOptions opt;
  opt.warmup = cfg.warmup;
  std::vector<TimingSample> samples;
  for (const auto steps : cfg.steps) {
    for (const auto& p : patterns) {
      samples.push_back(cfg.float32
                            ? time_adaptation<float>(model.arch, model.theta, eps, p, steps, model.config.alpha, opt)
                            : time_adaptation<double>(model.arch, model.theta, eps, p, steps, model.config.alpha, opt));
      const auto& s = samples.back();
      c.out << "bench: pattern " << p.str() << " P=" << steps << " mean " << format_fixed(s.mean, 3) << " ms, median "
            << format_fixed(s.median, 3) << " ms over " << s.count() << " runs" << (s.reliable ? "" : " (unreliable)")
            << "\n";
    }
  }
  emit_report(samples, {}, nullptr, c.dir);
  return kExitOk;
}

int cmd_report(Context& c) {
  if (c.cfg.input.empty()) throw MissingInput("missing required flag --input");
  const auto records = parse_sweep_csv(read_file(fs::path(c.cfg.input) / "sweep.csv", "sweep.csv"));
  std::optional<SearchReport> rep;
  for (const auto& r : records) {
    if (r.pattern.is_full() && r.steps == c.cfg.reference_steps) {
      rep = select_fastest(records, c.cfg.threshold, c.cfg.reference_steps, parse_floors(c.cfg.floors));
      break;
    }
  }
  emit_report({}, records, rep ? &*rep : nullptr, c.dir);
  c.out << "report: " << records.size() << " records -> " << c.dir.string() << "\n";
  return kExitOk;
}

}  // namespace

KeyValueText RunConfig::resolved() const {
  KeyValueText kv;
  kv.set("cifar", cifar_dir);
  kv.set("split", split_file);
  kv.set("image-size", std::to_string(image_size));
  kv.set("difficulty", format_double(difficulty));
  kv.set("images-per-class", std::to_string(images_per_class));
  kv.set("n-way", std::to_string(task.n_way));
  kv.set("k-shot", std::to_string(task.k_shot));
  kv.set("k-query", std::to_string(task.k_query));
  kv.set("filters", std::to_string(filters));
  kv.set("feature-dim", feature_dim ? std::to_string(*feature_dim) : "0");
  kv.set("init-std", format_double(init_std));
  kv.set("alpha", format_double(meta.alpha));
  kv.set("beta", format_double(meta.beta));
  kv.set("meta-batch", std::to_string(meta.meta_batch));
  kv.set("epochs", std::to_string(meta.epochs));
  kv.set("tasks-per-epoch", std::to_string(meta.tasks_per_epoch));
  kv.set("val-episodes", std::to_string(meta.val_episodes));
  kv.set("first-order", meta.first_order ? "true" : "false");
  kv.set("steps", join(steps));
  kv.set("pattern", pattern);
  kv.set("patterns", patterns);
  kv.set("configs", configs);
  kv.set("episodes", std::to_string(episodes));
  kv.set("threshold", format_double(threshold));
  kv.set("reference-steps", std::to_string(reference_steps));
  kv.set("floors", floors);
  kv.set("checkpoint", checkpoint);
  kv.set("records", records);
  kv.set("input", input);
  kv.set("float32", float32 ? "true" : "false");
  kv.set("warmup", std::to_string(warmup));
  kv.set("seed", std::to_string(seed));
  return kv;
}

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Selective-layer MAML: train, evaluate, sweep and benchmark adaptation patterns", "lmaml"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1, 1);
  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "meta-train a CNN4 and write the best checkpoint and the training log"},
      {"eval", "evaluate a checkpoint on test episodes"},
      {"sweep", "accuracy and adaptation time for each pattern and step count"},
      {"search", "fastest pattern within an accuracy threshold"},
      {"bench", "time the adaptation loop"},
      {"report", "re-emit report files from a previous sweep"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  std::string config_file, steps_text = "10";
  std::size_t feature_dim = 0;
  bool synthetic = false;
  app.add_option("--config", config_file, "key = value file; command-line flags win");
  app.add_flag("--synthetic", synthetic, "use the synthetic task space (default when --cifar is absent)");
  app.add_option("--cifar", cfg.cifar_dir, "directory with CIFAR-100 train.bin/test.bin");
  app.add_option("--split", cfg.split_file, "class split manifest for --cifar");
  app.add_option("--image-size", cfg.image_size, "synthetic image height and width")->check(CLI::PositiveNumber);
  app.add_option("--difficulty", cfg.difficulty, "synthetic difficulty in [0,1]")->check(CLI::Range(0.0, 1.0));
  app.add_option("--images-per-class", cfg.images_per_class, "synthetic images per class");
  app.add_option("--n-way", cfg.task.n_way, "classes per task");
  app.add_option("--k-shot", cfg.task.k_shot, "support images per class");
  app.add_option("--k-query", cfg.task.k_query, "query images per class");
  app.add_option("--filters", cfg.filters, "convolution filters per block");
  app.add_option("--feature-dim", feature_dim, "force the linear layer input width (0: derived)");
  app.add_option("--init-std", cfg.init_std, "truncated normal std for weights");
  app.add_option("--alpha", cfg.meta.alpha, "adaptation step size");
  app.add_option("--beta", cfg.meta.beta, "meta learning rate");
  app.add_option("--steps", steps_text, "adaptation steps, comma separated where a list is accepted");
  app.add_option("--meta-batch", cfg.meta.meta_batch, "tasks per meta-update");
  app.add_option("--epochs", cfg.meta.epochs, "training epochs");
  app.add_option("--tasks-per-epoch", cfg.meta.tasks_per_epoch, "tasks sampled per epoch");
  app.add_option("--val-episodes", cfg.meta.val_episodes, "fixed validation episodes");
  app.add_flag("--first-order", cfg.meta.first_order, "drop second-order terms from the meta-gradient");
  app.add_option("--pattern", cfg.pattern, "adaptation pattern, e.g. 1,0,1,1,1");
  app.add_option("--patterns", cfg.patterns, "all, trivial, or patterns separated by ';'");
  app.add_option("--configs", cfg.configs, "task configurations such as 1s2w,5s5w");
  app.add_option("--episodes", cfg.episodes, "evaluation or timing episodes");
  app.add_option("--threshold", cfg.threshold, "relative accuracy loss allowed")->check(CLI::Range(0.0, 1.0));
  app.add_option("--reference-steps", cfg.reference_steps, "steps of the full-pattern baseline");
  app.add_option("--floors", cfg.floors, "minimum accuracies, e.g. 1s2w=0.76,5s2w=0.85");
  app.add_option("--checkpoint", cfg.checkpoint, "checkpoint file");
  app.add_option("--records", cfg.records, "sweep.csv to search instead of sweeping");
  app.add_option("--input", cfg.input, "directory of a previous sweep or search run");
  app.add_flag("--float32", cfg.float32, "time adaptation in 32-bit floating point");
  app.add_option("--warmup", cfg.warmup, "discarded warm-up runs before timing");
  app.add_option("--out", cfg.out_dir, "output root (env " + std::string(kOutEnv) + ")")->envname(kOutEnv);
  app.add_option("--run-name", cfg.run_name, "run directory name instead of a timestamp");
  app.add_option("--seed", cfg.seed, "seed for data, initialization and sampling");

  // Config file entries become leading flags, so anything on the command line
  // overrides them under the take-last policy.
  std::vector<std::string> args{argv.empty() ? std::string("lmaml") : argv[0]};
  std::set<std::string> given;
  try {
    for (std::size_t i = 1; i < argv.size(); ++i) {
      std::string path;
      if (argv[i] == "--config" && i + 1 < argv.size()) path = argv[i + 1];
      if (argv[i].rfind("--config=", 0) == 0) path = argv[i].substr(9);
      if (path.empty()) continue;
      const auto kv = KeyValueText::parse(read_file(path, "config file"));
      for (const auto& [key, value] : kv.entries()) {
        if (key == "out" && std::getenv(kOutEnv)) continue;
        if (value.empty()) continue;
        args.push_back("--" + key + "=" + value);
        given.insert(key);
      }
    }
  } catch (const MissingInput& e) {
    err << "lmaml: " << e.what() << "\n";
    return kExitMissing;
  } catch (const std::invalid_argument& e) {
    err << "lmaml: invalid config file: " << e.what() << "\n";
    return kExitInvalid;
  }
  args.insert(args.end(), argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  for (std::size_t i = 1 + given.size(); i < args.size(); ++i) {
    if (args[i].rfind("--", 0) == 0) given.insert(args[i].substr(2, args[i].find('=') - 2));
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "lmaml: " << e.what() << "\n";
    return kExitUsage;
  }

  cfg.command = app.get_subcommands().front()->get_name();
  if (feature_dim > 0) cfg.feature_dim = feature_dim;
  const std::string prefix = "lmaml " + cfg.command + ": ";
  try {
    if (synthetic && !cfg.cifar_dir.empty()) throw std::invalid_argument("--synthetic and --cifar are exclusive");
    cfg.steps = parse_steps(steps_text);
    if (cfg.steps.empty()) throw std::invalid_argument("--steps is empty");
    cfg.meta.steps = cfg.steps.front();
    cfg.meta.seed = cfg.seed;
    const auto pattern = LambdaPattern::parse(cfg.pattern);
    if (pattern.size() != kBlocks) {
      throw std::invalid_argument("--pattern " + pattern.str() + " needs " + std::to_string(kBlocks) + " bits");
    }
    if (cfg.task.n_way < 2) throw std::invalid_argument("--n-way must be >= 2");
    if (cfg.task.k_shot < 1 || cfg.task.k_query < 1) throw std::invalid_argument("--k-shot and --k-query must be >= 1");

    Context c{cfg, given, make_run_dir(cfg), out, err};
    write_text(c.dir / "config.txt", "# lmaml " + cfg.command + "\n" + cfg.resolved().str());
    if (cfg.command == "train") return cmd_train(c);
    if (cfg.command == "eval") return cmd_eval(c);
    if (cfg.command == "sweep") return cmd_sweep(c);
    if (cfg.command == "search") return cmd_search(c);
    if (cfg.command == "bench") return cmd_bench(c);
    return cmd_report(c);
  } catch (const MissingInput& e) {
    err << prefix << e.what() << "\n";
    return kExitMissing;
  } catch (const std::invalid_argument& e) {
    err << prefix << "invalid configuration: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    // Corrupt inputs (dataset, checkpoint, records) and unwritable outputs.
    err << prefix << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace lmaml
