#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "lmaml/bench.hpp"
#include "lmaml/checkpoint.hpp"
#include "lmaml/cli.hpp"
#include "lmaml/search.hpp"

namespace py = pybind11;
using namespace lmaml;

namespace {

MetaModel make_model(std::size_t filters, std::size_t n_way, std::size_t k_shot, std::size_t k_query,
                     std::size_t image_size, std::optional<std::size_t> feature_dim, std::uint64_t seed,
                     double alpha, std::size_t steps) {
  Cnn4Options o;
  o.filters = filters;
  o.n_way = n_way;
  o.input = {3, image_size, image_size};
  o.feature_dim = feature_dim;
  o.seed = seed;
  auto net = build_cnn4(o);
  MetaConfig c;
  c.alpha = alpha;
  c.steps = steps;
  c.seed = seed;
  return make_meta_model(net.arch, net.weights, c, {n_way, k_shot, k_query});
}

SplitDatasets synthetic(std::size_t image_size, double difficulty, std::size_t images_per_class, std::uint64_t seed) {
  SynthSplitOptions o;
  o.shape = {3, image_size, image_size};
  o.difficulty = difficulty;
  o.images_per_class = images_per_class;
  o.seed = seed;
  return synth_splits(o);
}

LambdaPattern as_pattern(const py::object& p) {
  if (py::isinstance<LambdaPattern>(p)) return p.cast<LambdaPattern>();
  return LambdaPattern::parse(p.cast<std::string>());
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["mean"] = r.mean;
  d["ci95"] = r.ci95;
  d["accuracies"] = r.accuracies;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Selective-layer MAML engine";

  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  py::class_<LambdaPattern>(m, "Pattern")
      .def(py::init([](const std::string& text) { return LambdaPattern::parse(text); }), py::arg("literal"))
      .def_static("full", &LambdaPattern::full, py::arg("blocks") = 5)
      .def("active", &LambdaPattern::active, py::arg("layer"))
      .def("subset_of", &LambdaPattern::subset_of)
      .def_property_readonly("value", &LambdaPattern::value)
      .def_property_readonly("active_count", &LambdaPattern::active_count)
      .def_property_readonly("is_full", &LambdaPattern::is_full)
      .def("__len__", &LambdaPattern::size)
      .def("__str__", &LambdaPattern::str)
      .def("__repr__", [](const LambdaPattern& p) { return "Pattern('" + p.str() + "')"; })
      .def("__eq__", [](const LambdaPattern& a, const LambdaPattern& b) { return a == b; })
      .def("__hash__", [](const LambdaPattern& p) { return py::hash(py::str(p.str())); });
  m.def("enumerate_patterns", &enumerate_patterns, py::arg("blocks") = 5);
  m.def("trivial_patterns", &trivial_patterns, py::arg("blocks") = 5);

  py::class_<SplitDatasets>(m, "Splits")
      .def_property_readonly("class_counts", [](const SplitDatasets& s) {
        return py::make_tuple(s.train.classes.size(), s.validation.classes.size(), s.test.classes.size());
      });
  m.def("synthetic_splits", &synthetic, py::arg("image_size") = 32, py::arg("difficulty") = 0.0,
        py::arg("images_per_class") = 40, py::arg("seed") = 0);

  py::class_<MetaModel>(m, "Model")
      .def_property_readonly("n_way", [](const MetaModel& mm) { return mm.arch.n_way; })
      .def_property_readonly("param_count", [](const MetaModel& mm) { return mm.arch.param_count(); })
      .def_property_readonly("layer_param_counts",
                             [](const MetaModel& mm) {
                               std::vector<std::size_t> out;
                               for (const auto& l : mm.arch.layers) out.push_back(l.param_count());
                               return out;
                             })
      .def("parameters",
           [](const MetaModel& mm) {
             py::dict d;
             for (const auto& p : mm.theta.params) {
               const auto& shape = p.value.shape();
               py::array_t<double> a(std::vector<py::ssize_t>(shape.begin(), shape.end()));
               std::copy(p.value.values().begin(), p.value.values().end(), a.mutable_data());
               d[py::str(p.name)] = a;
             }
             return d;
           })
      .def("save", [](const MetaModel& mm, const std::filesystem::path& path) { save_checkpoint(mm, path); })
      .def_static("load", [](const std::filesystem::path& path) { return load_checkpoint(path); })
      .def("to_bytes", [](const MetaModel& mm) {
        const auto bytes = encode_checkpoint(mm);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      });
  m.def("make_model", &make_model, py::arg("filters") = 32, py::arg("n_way") = 5, py::arg("k_shot") = 1,
        py::arg("k_query") = 15, py::arg("image_size") = 32, py::arg("feature_dim") = py::none(),
        py::arg("seed") = 0, py::arg("alpha") = 0.01, py::arg("steps") = 10);

  m.def(
      "train",
      [](const MetaModel& model, const SplitDatasets& data, std::size_t epochs, std::size_t tasks_per_epoch,
         std::size_t meta_batch, std::size_t val_episodes, const py::object& pattern, double beta,
         bool first_order) {
        auto c = model.config;
        c.epochs = epochs;
        c.tasks_per_epoch = tasks_per_epoch;
        c.meta_batch = meta_batch;
        c.val_episodes = val_episodes;
        c.beta = beta;
        c.first_order = first_order;
        const auto p = as_pattern(pattern);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(model, data.train, data.validation, c, p);
        }
        py::list log;
        for (const auto& row : r.log) {
          py::dict d;
          d["epoch"] = row.epoch;
          d["mean_train_loss"] = row.mean_train_loss;
          d["val_accuracy"] = row.val_accuracy;
          d["wall_ms"] = row.wall_ms;
          log.append(d);
        }
        return py::make_tuple(r.best, log);
      },
      py::arg("model"), py::arg("data"), py::arg("epochs"), py::arg("tasks_per_epoch") = 100,
      py::arg("meta_batch") = 4, py::arg("val_episodes") = 100, py::arg("pattern") = "1,1,1,1,1",
      py::arg("beta") = 1e-3, py::arg("first_order") = false);

  m.def(
      "evaluate",
      [](const MetaModel& model, const SplitDatasets& data, std::size_t episodes, const py::object& pattern,
         std::optional<std::size_t> steps, std::uint64_t seed) {
        const auto p = as_pattern(pattern);
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = evaluate(model, data.test, episodes, p, steps.value_or(model.config.steps), seed);
        }
        return eval_dict(r);
      },
      py::arg("model"), py::arg("data"), py::arg("episodes") = 400, py::arg("pattern") = "1,1,1,1,1",
      py::arg("steps") = py::none(), py::arg("seed") = 0);

  m.def(
      "time_adaptation",
      [](const MetaModel& model, const SplitDatasets& data, const py::object& pattern, std::size_t steps,
         std::size_t episodes, std::size_t warmup, std::uint64_t seed) {
        const auto eps = sample_episodes(data.test, model.task, episodes, seed);
        TimingOptions opt;
        opt.warmup = warmup;
        const auto p = as_pattern(pattern);
        TimingSample s;
        {
          py::gil_scoped_release release;
          s = time_adaptation<double>(model.arch, model.theta, eps, p, steps, model.config.alpha, opt);
        }
        py::dict d;
        d["mean_ms"] = s.mean;
        d["median_ms"] = s.median;
        d["std_ms"] = s.std;
        d["count"] = s.count();
        d["reliable"] = s.reliable;
        return d;
      },
      py::arg("model"), py::arg("data"), py::arg("pattern"), py::arg("steps"), py::arg("episodes") = 30,
      py::arg("warmup") = 5, py::arg("seed") = 0);

  m.def(
      "flop_cost",
      [](const MetaModel& model, const py::object& pattern, std::size_t steps, std::size_t batch) {
        return flop_cost(model.arch, batch, as_pattern(pattern), steps);
      },
      py::arg("model"), py::arg("pattern"), py::arg("steps"), py::arg("batch") = 5);

  py::class_<SweepRecord>(m, "SweepRecord")
      .def(py::init([](const py::object& pattern, std::size_t steps, std::vector<std::string> configs,
                       std::vector<double> accuracy, double mean_time_ms) {
             SweepRecord r;
             r.pattern = as_pattern(pattern);
             r.steps = steps;
             r.configs = std::move(configs);
             r.accuracy = std::move(accuracy);
             r.mean_time_ms = mean_time_ms;
             return r;
           }),
           py::arg("pattern"), py::arg("steps"), py::arg("configs"), py::arg("accuracy"), py::arg("mean_time_ms"))
      .def_readonly("pattern", &SweepRecord::pattern)
      .def_readonly("steps", &SweepRecord::steps)
      .def_readonly("configs", &SweepRecord::configs)
      .def_readonly("accuracy", &SweepRecord::accuracy)
      .def_readonly("mean_time_ms", &SweepRecord::mean_time_ms)
      .def("__repr__", [](const SweepRecord& r) {
        return "SweepRecord('" + r.pattern.str() + "', P=" + std::to_string(r.steps) + ")";
      });

  py::class_<SearchReport>(m, "SearchReport")
      .def_readonly("baseline", &SearchReport::baseline)
      .def_readonly("admissible", &SearchReport::admissible)
      .def_readonly("selected", &SearchReport::selected)
      .def_readonly("speedup", &SearchReport::speedup)
      .def_readonly("degenerate", &SearchReport::degenerate);
  m.def(
      "select_fastest",
      [](const std::vector<SweepRecord>& records, double threshold, std::size_t reference_steps,
         const std::map<std::string, double>& floors) {
        return select_fastest(records, threshold, reference_steps, floors);
      },
      py::arg("records"), py::arg("threshold") = 0.07, py::arg("reference_steps") = 10,
      py::arg("floors") = std::map<std::string, double>{});

  m.def(
      "run",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "lmaml");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
