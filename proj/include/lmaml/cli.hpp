#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lmaml/maml.hpp"
#include "lmaml/text.hpp"

namespace lmaml {

/// Everything one command needs. Keys of the config file are the long flag
/// names without dashes.
struct RunConfig {
  std::string command;

  // data
  std::string cifar_dir;  // empty: synthetic task space
  std::string split_file;
  std::size_t image_size = 32;
  double difficulty = 0.0;
  std::size_t images_per_class = 40;

  // task and model
  TaskSpec task{};
  std::size_t filters = 32;
  std::optional<std::size_t> feature_dim;
  double init_std = 0.02;

  MetaConfig meta{};
  std::vector<std::size_t> steps{10};
  std::string pattern = "1,1,1,1,1";
  std::string patterns = "all";  // all | trivial | literals joined by ';'
  std::string configs;           // e.g. "1s2w,5s2w"; empty: the single task above

  // evaluation, search, timing
  std::size_t episodes = 400;
  double threshold = 0.07;
  std::size_t reference_steps = 10;
  std::string floors;  // "1s2w=0.76,5s2w=0.85"
  std::string checkpoint;
  std::string records;
  std::string input;
  bool float32 = false;
  std::size_t warmup = 5;

  std::string out_dir = "runs";
  std::string run_name;
  std::uint64_t seed = 0;

  /// Canonical text that reproduces this configuration through --config.
  KeyValueText resolved() const;
};

/// Exit codes of run().
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,       // unknown flag or subcommand, malformed value
  kExitInvalid = 3,     // values that parse but are inconsistent
  kExitMissing = 4,     // required flag or input file missing
  kExitIo = 5,          // unreadable or corrupt input, unwritable output
  kExitInternal = 70,
};

/// Entry point shared by the tool and the tests. argv[0] is the program name.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace lmaml
