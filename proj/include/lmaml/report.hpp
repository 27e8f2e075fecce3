#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmaml/bench.hpp"
#include "lmaml/search.hpp"

namespace lmaml {

// CSV schemas (one header line, pattern literals quoted):
//   timing.csv  pattern,steps,count,mean_ms,std_ms,median_ms,reliable
//   sweep.csv   steps,pattern,config,accuracy,time_ms,mean_time_ms,flop_cost
//   long.csv    pattern,P,config,metric,value
//   search.csv  steps,pattern,<config accuracies...>,mean_time_ms,speedup,selected
std::string timing_csv(std::span<const TimingSample> samples);
std::string sweep_csv(std::span<const SweepRecord> records);
std::string long_csv(std::span<const TimingSample> samples, std::span<const SweepRecord> records);
std::string search_csv(const SearchReport& report);

/// Rows ordered by steps then pattern; accuracy in percent, speedup against
/// the full pattern at `reference_steps` when that record is present.
std::string sweep_markdown(std::span<const SweepRecord> records, std::size_t reference_steps = 10);
std::string search_markdown(const SearchReport& report);
std::string best_pattern_markdown(std::span<const ConfigChoice> choices);

std::string summary_markdown(std::span<const TimingSample> samples, std::span<const SweepRecord> records,
                             const SearchReport* report);

/// Writes timing.csv, sweep.csv, long.csv and summary.md (plus search.csv and
/// search.md when a report is given) into `dir`, creating it if needed.
/// Returns the written paths.
std::vector<std::filesystem::path> emit_report(std::span<const TimingSample> samples,
                                               std::span<const SweepRecord> records, const SearchReport* report,
                                               const std::filesystem::path& dir);

/// Reads records back from sweep.csv text. Rows of one (steps, pattern) pair
/// are merged in file order.
std::vector<SweepRecord> parse_sweep_csv(const std::string& text);

/// Splits one CSV line; double-quoted fields may contain commas.
std::vector<std::string> split_csv_line(const std::string& line);

/// Writes `text` to `path`, throwing std::runtime_error on failure.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace lmaml
