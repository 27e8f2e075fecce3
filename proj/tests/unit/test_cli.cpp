#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lmaml/cli.hpp"
#include "lmaml/report.hpp"
#include "../support/reference_tables.hpp"

using namespace lmaml;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(std::vector<std::string> args) {
  args.insert(args.begin(), "lmaml");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool contains(const std::string& text, const std::string& part) { return text.find(part) != std::string::npos; }

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lmaml_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

const std::vector<std::string> kTiny{"--filters", "2", "--image-size", "16", "--n-way", "2",
                                     "--epochs", "1", "--tasks-per-epoch", "4", "--meta-batch", "2",
                                     "--val-episodes", "4", "--steps", "2", "--seed", "5"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_CASE("usage errors and exit codes are distinct") {
  const auto out = scratch("errors");
  CHECK(call({"--help"}).code == kExitOk);
  CHECK(call({}).code == kExitUsage);

  const auto unknown = call({"train", "--bogus"});
  CHECK(unknown.code == kExitUsage);
  CHECK(contains(unknown.err, "--bogus"));

  const auto subcommand = call({"fly"});
  CHECK(subcommand.code == kExitUsage);

  const auto eval = call({"eval", "--out", out.string()});
  CHECK(eval.code == kExitMissing);
  CHECK(contains(eval.err, "--checkpoint"));

  const auto pattern = call({"train", "--pattern", "1,0,1", "--out", out.string()});
  CHECK(pattern.code == kExitInvalid);
  CHECK(contains(pattern.err, "5 bits"));

  const auto malformed = call({"train", "--pattern", "1,2,1,1,1", "--out", out.string()});
  CHECK(malformed.code == kExitInvalid);

  const auto config = call({"train", "--config", (out / "nope.txt").string()});
  CHECK(config.code == kExitMissing);
  CHECK(contains(config.err, "config file"));

  const auto cifar = call({"eval", "--cifar", "/does/not/exist", "--out", out.string()});
  CHECK(cifar.code == kExitMissing);

  fs::create_directories(out);
  std::ofstream(out / "junk.bin") << "not a checkpoint";
  const auto corrupt = call({"eval", "--checkpoint", (out / "junk.bin").string(), "--out", out.string()});
  CHECK(corrupt.code == kExitIo);

  const auto report = call({"report", "--out", out.string()});
  CHECK(report.code == kExitMissing);
  CHECK(contains(report.err, "--input"));
  fs::remove_all(out);
}

TEST_CASE("train writes artifacts and replays bit-identically from its config") {
  const auto out = scratch("train");
  const auto first = call(with({"train", "--out", out.string(), "--run-name", "a"}, kTiny));
  REQUIRE_MESSAGE(first.code == kExitOk, first.err);
  for (const char* f : {"checkpoint.bin", "final.bin", "train_log.csv", "config.txt"}) CHECK(fs::exists(out / "a" / f));
  CHECK(contains(slurp(out / "a" / "config.txt"), "seed = 5"));

  const auto replay =
      call({"train", "--config", (out / "a" / "config.txt").string(), "--out", out.string(), "--run-name", "b"});
  REQUIRE_MESSAGE(replay.code == kExitOk, replay.err);
  for (const char* f : {"checkpoint.bin", "final.bin", "config.txt"}) {
    CHECK_MESSAGE(slurp(out / "a" / f) == slurp(out / "b" / f), f);
  }

  const auto eval = call({"eval", "--checkpoint", (out / "a" / "checkpoint.bin").string(), "--episodes", "10",
                          "--steps", "2", "--out", out.string(), "--run-name", "e"});
  REQUIRE_MESSAGE(eval.code == kExitOk, eval.err);
  CHECK(contains(eval.out, "over 10 episodes"));
  CHECK(contains(eval.out, "2-way"));
  fs::remove_all(out);
}

TEST_CASE("flags override the config file") {
  const auto out = scratch("override");
  fs::create_directories(out);
  std::ofstream(out / "base.txt") << "seed = 1\nfilters = 3\nsteps = 1\n";
  const auto r = call({"bench", "--config", (out / "base.txt").string(), "--seed", "9", "--image-size", "16",
                       "--episodes", "1", "--warmup", "0", "--out", out.string(), "--run-name", "r"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const auto resolved = KeyValueText::parse(slurp(out / "r" / "config.txt"));
  CHECK(resolved.get("seed") == "9");
  CHECK(resolved.get("filters") == "3");
  CHECK(resolved.get("steps") == "1");
  fs::remove_all(out);
}

TEST_CASE("output directory from the environment") {
  const auto out = scratch("env");
  const auto other = scratch("env_flag");
  ::setenv("LMAML_OUT_DIR", out.string().c_str(), 1);
  const std::vector<std::string> args{"bench", "--filters", "2", "--image-size", "16", "--episodes", "1",
                                      "--steps", "1", "--warmup", "0", "--run-name", "x"};
  CHECK(call(args).code == kExitOk);
  CHECK(fs::exists(out / "x" / "timing.csv"));
  CHECK(call(with(args, {"--out", other.string()})).code == kExitOk);
  CHECK(fs::exists(other / "x" / "timing.csv"));
  ::unsetenv("LMAML_OUT_DIR");

  // Without --run-name the run directory is timestamped.
  CHECK(call({"bench", "--filters", "2", "--image-size", "16", "--episodes", "1", "--steps", "1", "--warmup", "0",
              "--out", other.string()})
            .code == kExitOk);
  bool stamped = false;
  for (const auto& e : fs::directory_iterator(other)) stamped |= e.path().filename().string().rfind("bench-", 0) == 0;
  CHECK(stamped);
  fs::remove_all(out);
  fs::remove_all(other);
}

TEST_CASE("search over reference records and report re-emission") {
  const auto out = scratch("search");
  fs::create_directories(out);
  const auto records = lmaml::testing::speedup_table();
  write_text(out / "sweep.csv", sweep_csv(records));

  const auto s = call({"search", "--records", (out / "sweep.csv").string(), "--threshold", "0.07", "--out",
                       out.string(), "--run-name", "s"});
  REQUIRE_MESSAGE(s.code == kExitOk, s.err);
  CHECK(contains(s.out, "selected pattern 0,1,1,1,1 at P=3"));
  CHECK(contains(s.out, "9 of 9"));
  CHECK(fs::exists(out / "s" / "search.md"));

  const auto floors = call({"search", "--records", (out / "sweep.csv").string(), "--floors", "1s2w=0.76",
                            "--out", out.string(), "--run-name", "f"});
  REQUIRE_MESSAGE(floors.code == kExitOk, floors.err);
  CHECK(contains(floors.out, "selected pattern 1,0,1,1,1 at P=3"));

  const auto rep = call({"report", "--input", (out / "s").string(), "--out", out.string(), "--run-name", "r"});
  REQUIRE_MESSAGE(rep.code == kExitOk, rep.err);
  for (const char* f : {"sweep.csv", "search.csv", "search.md", "summary.md"}) {
    CHECK_MESSAGE(slurp(out / "s" / f) == slurp(out / "r" / f), f);
  }

  const auto bad = call({"search", "--records", (out / "sweep.csv").string(), "--floors", "1s2w", "--out",
                         out.string()});
  CHECK(bad.code == kExitInvalid);
  fs::remove_all(out);
}

TEST_CASE("sweep is deterministic apart from timing columns") {
  const auto out = scratch("sweep");
  const std::vector<std::string> args{"sweep", "--filters", "2", "--image-size", "16", "--n-way", "2",
                                      "--steps", "1,2", "--episodes", "3", "--patterns", "1,1,1,1,1;0,0,0,0,1",
                                      "--warmup", "0", "--out", out.string()};
  REQUIRE(call(with(args, {"--run-name", "a"})).code == kExitOk);
  REQUIRE(call(with(args, {"--run-name", "b"})).code == kExitOk);
  const auto a = parse_sweep_csv(slurp(out / "a" / "sweep.csv"));
  const auto b = parse_sweep_csv(slurp(out / "b" / "sweep.csv"));
  REQUIRE(a.size() == 4);
  REQUIRE(b.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pattern == b[i].pattern);
    CHECK(a[i].steps == b[i].steps);
    CHECK(a[i].accuracy == b[i].accuracy);
    CHECK(a[i].flop_cost == b[i].flop_cost);
  }
  fs::remove_all(out);
}
