// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset. Exit status is 1 when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "lmaml/bench.hpp"
#include "lmaml/cli.hpp"
#include "lmaml/report.hpp"
#include "lmaml/search.hpp"
#include "../support/reference_tables.hpp"
#include "../support/toys.hpp"

using namespace lmaml;
using namespace lmaml::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Verdict()> check;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Verdict parameter_counts() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (std::size_t n_way : {2u, 5u}) {
    Cnn4Options o;
    o.filters = 32;
    o.n_way = n_way;
    o.feature_dim = 800;
    const auto arch = cnn4_architecture(o);
    std::vector<std::size_t> counts;
    for (const auto& l : arch.layers) counts.push_back(l.param_count());
    const std::vector<std::size_t> expected{960, 9312, 9312, 9312, n_way == 5 ? 4005u : 1602u};
    const std::size_t total = n_way == 5 ? 32901 : 30498;
    ok &= counts == expected && arch.param_count() == total && build_cnn4(o).weights.param_count() == total;
    detail += fmt("%zu-way total %zu; ", n_way, arch.param_count());
  }
  const double s = seconds_since(t0);
  ok &= s < 1.0;
  return {ok, detail + fmt("%.3f s", s)};
}

Verdict gradient_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  const SmoothToy toy;
  const std::vector<TaskLosses> tasks{toy.task()};
  const auto unflatten = [&](const std::vector<double>& v) {
    return toy.theta.with_values({Tensor<double>({3, 3}, {v.begin(), v.begin() + 9}),
                                  Tensor<double>({2, 3}, {v.begin() + 9, v.end()})});
  };
  double worst_first = 0.0, worst_second = 0.0;
  for (const char* lit : {"1,1", "0,1", "1,0"}) {
    const auto pat = LambdaPattern::parse(lit);
    for (std::size_t steps : {1u, 2u, 3u}) {
      const auto so = meta_gradient(toy.theta, tasks, pat, steps, 0.4, false);
      const auto fd = central_differences(
          [&](const std::vector<double>& v) { return toy.objective(v, pat, steps, 0.4); }, toy.flat());
      worst_second = std::max(worst_second, relative_error(flatten(so.grads), fd));

      // First order: the query-loss gradient at the adapted weights.
      const auto fo = meta_gradient(toy.theta, tasks, pat, steps, 0.4, true);
      const auto adapted = adapt(toy.theta, tasks[0].support, pat, steps, 0.4, GraphMode::None);
      const auto fd_fo = central_differences(
          [&](const std::vector<double>& v) { return tasks[0].query(unflatten(v)).loss.item(); },
          flatten(adapted.values()));
      worst_first = std::max(worst_first, relative_error(flatten(fo.grads), fd_fo));
    }
  }
  const double s = seconds_since(t0);
  const bool ok = worst_first <= 1e-4 && worst_second <= 1e-4 && s < 60.0;
  return {ok, fmt("15 parameters, P in {1,2,3}: first-order rel err %.2e, second-order %.2e; %.2f s", worst_first,
                  worst_second, s)};
}

Verdict masking_soundness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto t = toy();
  std::size_t matched = 0, frozen_ok = 0;
  const auto patterns = enumerate_patterns(5);
  for (const auto& pat : patterns) {
    const auto fast = adapt(t.arch, t.theta, t.x, t.y, pat, 10, 0.1, GraphMode::None);
    matched += fast.identical(full_then_mask(t.arch, t.theta, t.x, t.y, pat, 10, 0.1));
    bool frozen = true;
    for (std::size_t i = 0; i < fast.size(); ++i) {
      if (!pat.active(fast.params[i].layer)) frozen &= fast.params[i].value.same_values(t.theta.params[i].value);
    }
    frozen_ok += frozen;
  }
  const double s = seconds_since(t0);
  const bool ok = matched == patterns.size() && frozen_ok == patterns.size() && s < 120.0;
  return {ok, fmt("filters=4, 3x16x16, P=10: %zu/31 bit-identical to the mask oracle, %zu/31 frozen layers "
                  "unchanged; %.2f s",
                  matched, frozen_ok, s)};
}

Verdict full_pattern_reduction() {
  const auto t = toy();
  WeightSet<double> plain = t.theta;
  for (int s = 0; s < 5; ++s) {
    Tape<double> tape;
    auto vals = plain.values();
    for (auto& v : vals) v = tape.watch(v);
    const auto g = grad(cross_entropy<double>(t.y, forward(t.arch, plain.with_values(vals), t.x)), vals);
    std::vector<Tensor<double>> next;
    for (std::size_t i = 0; i < vals.size(); ++i) next.push_back(sub(plain.params[i].value, scale(g[i], 0.05)));
    plain = plain.with_values(next);
  }
  const auto masked = adapt(t.arch, t.theta, t.x, t.y, LambdaPattern::full(5), 5, 0.05, GraphMode::None);
  const bool ok = masked.identical(plain);
  return {ok, ok ? "all-ones pattern, P=5: bit-identical to the unmasked update" : "all-ones pattern differs"};
}

Verdict desk_scale_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  Cnn4Options o;
  o.filters = 8;
  o.n_way = 2;
  o.seed = 7;
  const auto net = build_cnn4(o);
  MetaConfig c;
  c.steps = 5;
  c.epochs = 30;
  c.seed = 7;
  const TaskSpec task{2, 1, 15};
  const auto model = make_meta_model(net.arch, net.weights, c, task);
  SynthSplitOptions so;
  so.shape = o.input;
  so.seed = 7;
  const auto ds = synth_splits(so);
  const auto full = LambdaPattern::full(5);
  const auto result = train(model, ds.train, ds.validation, c, full);
  const auto trained = evaluate(result.best, ds.test, 400, full, c.steps, 99);
  const auto untrained = evaluate(model, ds.test, 400, full, c.steps, 99);
  const double s = seconds_since(t0);
  const bool ok = trained.mean >= 0.80 && s <= 600.0;
  return {ok, fmt("synthetic 2-way 1-shot, filters=8, 30 epochs, P=5: held-out %.3f +/- %.3f over 400 episodes "
                  "(untrained %.3f); %.0f s",
                  trained.mean, trained.ci95, untrained.mean, s)};
}

std::vector<Episode> timing_episodes(const Architecture& arch, std::size_t n) {
  SynthSplitOptions so;
  so.shape = arch.input;
  so.seed = 11;
  return sample_episodes(synth_splits(so).test, {arch.n_way, 1, 15}, n, 11);
}

Verdict speedup() {
  Cnn4Options o;
  o.filters = 32;
  o.n_way = 5;
  o.seed = 3;
  const auto net = build_cnn4(o);
  const auto eps = timing_episodes(net.arch, 30);
  const auto full = LambdaPattern::full(5);
  const auto head = LambdaPattern::parse("1,0,1,1,1");
  const auto fast = time_adaptation<double>(net.arch, net.weights, eps, head, 3, 0.01);
  const auto slow = time_adaptation<double>(net.arch, net.weights, eps, full, 10, 0.01);
  const auto short_full = time_adaptation<double>(net.arch, net.weights, eps, full, 3, 0.01);
  const double speedup = slow.mean / fast.mean;
  const double ratio = slow.mean / short_full.mean;
  const bool ok = fast.count() >= 30 && slow.count() >= 30 && short_full.count() >= 30 && speedup >= 2.0 &&
                  ratio >= 2.3 && ratio <= 4.3;
  return {ok, fmt("5-way 1-shot, 32x32: {1,0,1,1,1}@P3 %.1f ms, full@P10 %.1f ms, speedup %.2f; full P10/P3 %.2f; "
                  "%zu runs each",
                  fast.mean, slow.mean, speedup, ratio, fast.count())};
}

Verdict cost_model_properties() {
  Cnn4Options o;
  o.filters = 32;
  o.n_way = 5;
  const auto model = cost_model(cnn4_architecture(o), 5);
  const auto patterns = enumerate_patterns(5);
  std::size_t pairs = 0, monotone = 0, linear = 0, checks = 0;
  for (const auto& a : patterns) {
    for (const auto& b : patterns) {
      if (&a == &b || !a.subset_of(b)) continue;
      ++pairs;
      monotone += flop_cost(model, a, 1) < flop_cost(model, b, 1);
    }
    for (std::size_t p = 1; p <= 10; ++p) {
      ++checks;
      linear += flop_cost(model, a, p) == static_cast<double>(p) * flop_cost(model, a, 1);
    }
  }
  const bool ok = monotone == pairs && linear == checks;
  return {ok, fmt("%zu/%zu strict-subset pairs cheaper, %zu/%zu exact P-linearity checks", monotone, pairs, linear,
                  checks)};
}

Verdict search_procedure() {
  const auto table = speedup_table();
  const auto rep = select_fastest(table, 0.07);
  std::set<std::string> admissible;
  std::set<std::size_t> steps;
  for (const auto& r : rep.admissible) {
    admissible.insert(r.pattern.str());
    steps.insert(r.steps);
  }
  const auto fastest = std::min_element(rep.admissible.begin(), rep.admissible.end(), [](const auto& a, const auto& b) {
    return a.mean_time_ms < b.mean_time_ms;
  });
  const bool set_ok = admissible == std::set<std::string>{"0,1,1,1,1", "1,0,1,1,1", "1,1,1,1,1"} &&
                      steps == std::set<std::size_t>{3, 5, 10};
  const bool select_ok = !rep.degenerate && fastest != rep.admissible.end() &&
                         rep.selected.mean_time_ms == fastest->mean_time_ms;

  std::string five_shot;
  for (const auto& choice : best_at_one_step(single_step_table())) {
    if (choice.config == "5s5w") five_shot = choice.record.pattern.str();
  }
  const bool ok = set_ok && select_ok && five_shot == "1,1,0,1,1";
  return {ok, fmt("admissible {%s} over P {3,5,10}; selected %s@P%zu (speedup %.2f); one-step 5-shot 5-way %s",
                  set_ok ? "0,1,1,1,1 | 1,0,1,1,1 | 1,1,1,1,1" : "mismatch", rep.selected.pattern.str().c_str(),
                  rep.selected.steps, rep.speedup, five_shot.c_str())};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool timing_column(const std::string& name) {
  static const std::set<std::string> names{"time_ms", "mean_time_ms", "speedup", "selected", "mean_ms",
                                           "std_ms",  "median_ms",    "wall_ms"};
  return names.count(name) != 0;
}

// Drops columns (and long-format rows) that hold wall-clock measurements.
std::string without_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  std::vector<bool> keep;
  std::size_t metric = std::string::npos;
  while (std::getline(in, line)) {
    const auto cells = split_csv_line(line);
    if (keep.empty()) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        keep.push_back(!timing_column(cells[i]));
        if (cells[i] == "metric") metric = i;
      }
    } else if (metric < cells.size() && timing_column(cells[metric])) {
      continue;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i < keep.size() && keep[i]) out += cells[i] + "|";
    }
    out += "\n";
  }
  return out;
}

Verdict determinism() {
  const auto root = fs::temp_directory_path() / "lmaml_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<std::string> tiny{"--filters", "4", "--image-size", "16", "--n-way", "2", "--seed", "21"};
  struct Command {
    std::string name;
    std::vector<std::string> args;
  };
  const auto ckpt = (root / "train-a" / "checkpoint.bin").string();
  const std::vector<Command> commands{
      {"train",
       {"--epochs", "2", "--tasks-per-epoch", "8", "--meta-batch", "2", "--val-episodes", "6", "--steps", "2"}},
      {"eval", {"--checkpoint", ckpt, "--episodes", "20", "--steps", "2"}},
      {"sweep", {"--checkpoint", ckpt, "--episodes", "4", "--steps", "1,2", "--warmup", "0"}},
      {"search",
       {"--checkpoint", ckpt, "--episodes", "4", "--steps", "1,2", "--reference-steps", "2", "--warmup", "0"}},
      {"bench", {"--checkpoint", ckpt, "--episodes", "2", "--steps", "1", "--patterns", "trivial", "--warmup", "0"}},
      {"report", {"--input", (root / "sweep-a").string(), "--reference-steps", "2"}},
  };
  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const auto& cmd : commands) {
    for (const char* tag : {"a", "b"}) {
      std::vector<std::string> argv{"lmaml", cmd.name};
      argv.insert(argv.end(), tiny.begin(), tiny.end());
      argv.insert(argv.end(), cmd.args.begin(), cmd.args.end());
      argv.insert(argv.end(), {"--out", root.string(), "--run-name", cmd.name + "-" + tag});
      std::ostringstream out, err;
      if (run(argv, out, err) != kExitOk) return {false, cmd.name + " failed: " + err.str()};
    }
    for (const auto& entry : fs::directory_iterator(root / (cmd.name + "-a"))) {
      const auto name = entry.path().filename().string();
      const auto ext = entry.path().extension();
      if (ext != ".csv" && ext != ".bin" && name != "config.txt") continue;
      const auto a = slurp(entry.path());
      const auto b = slurp(root / (cmd.name + "-b") / name);
      ++files;
      const bool same = ext == ".csv" ? without_timing(a) == without_timing(b) : a == b;
      if (!same) differing.push_back(cmd.name + "/" + name);
    }
  }
  fs::remove_all(root);
  std::string detail = fmt("train, eval, sweep, search, bench, report run twice: %zu files compared", files);
  for (const auto& d : differing) detail += ", differs: " + d;
  return {differing.empty() && files > 0, detail};
}

Verdict chance_level() {
  bool ok = true;
  std::string detail;
  for (std::size_t n_way : {5u, 2u}) {
    Cnn4Options o;
    o.filters = 32;
    o.n_way = n_way;
    o.seed = 13;
    const auto net = build_cnn4(o);
    MetaConfig c;
    c.steps = 1;
    auto model = make_meta_model(net.arch, net.weights, c, {n_way, 1, 15});
    model.config.alpha = 0.0;  // untrained and unadapted
    SynthSplitOptions so;
    so.seed = 13;
    const auto r = evaluate(model, synth_splits(so).test, 400, LambdaPattern::parse("0,0,0,0,1"), 1, 17);
    const double chance = 1.0 / static_cast<double>(n_way);
    ok &= std::abs(r.mean - chance) <= r.ci95 + 1e-12;
    detail += fmt("%zu-way %.3f +/- %.3f (chance %.2f); ", n_way, r.mean, r.ci95, chance);
  }
  return {ok, detail + "400 episodes each"};
}

// Not a numbered criterion: does the cost model order single-layer patterns like the clock does?
void cost_ordering_note() {
  Cnn4Options o;
  o.filters = 32;
  o.n_way = 5;
  o.seed = 3;
  const auto net = build_cnn4(o);
  const auto eps = timing_episodes(net.arch, 30);
  const auto model = cost_model(net.arch, 5);
  const auto single = trivial_patterns(5);
  std::vector<double> cost, time;
  for (const auto& p : single) {
    cost.push_back(flop_cost(model, p, 3));
    time.push_back(time_adaptation<double>(net.arch, net.weights, eps, p, 3, 0.01).mean);
  }
  std::size_t agree = 0, pairs = 0;
  for (std::size_t i = 0; i < single.size(); ++i) {
    for (std::size_t j = i + 1; j < single.size(); ++j) {
      ++pairs;
      agree += (cost[i] < cost[j]) == (time[i] < time[j]);
    }
  }
  std::cout << fmt("INFO   cost-ordering: single-layer patterns, %zu/%zu pairs ordered alike by FLOPs and time "
                   "(%.0f%%)",
                   agree, pairs, 100.0 * agree / pairs)
            << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "parameter-counts", parameter_counts},
      {2, "gradient-oracles", gradient_oracles},
      {3, "masking-soundness", masking_soundness},
      {4, "full-pattern-reduction", full_pattern_reduction},
      {5, "desk-scale-learning", desk_scale_learning},
      {6, "speedup", speedup},
      {7, "cost-model", cost_model_properties},
      {8, "search-procedure", search_procedure},
      {9, "determinism", determinism},
      {10, "chance-level", chance_level},
  };
  std::set<int> selected;
  bool note = argc == 1;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "info") {
      note = true;
    } else {
      selected.insert(std::atoi(argv[i]));
    }
  }
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << fmt(" %2d ", c.id) << c.name << ": " << v.detail << std::endl;
  }
  if (note) cost_ordering_note();
  return failures == 0 ? 0 : 1;
}
