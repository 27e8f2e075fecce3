#include "lmaml/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "lmaml/text.hpp"

namespace lmaml {

namespace {

std::string quoted(const LambdaPattern& p) { return "\"" + p.str() + "\""; }

std::string percent(double fraction) { return format_fixed(100.0 * fraction, 1); }

std::vector<SweepRecord> ordered(std::span<const SweepRecord> records) {
  std::vector<SweepRecord> out(records.begin(), records.end());
  std::stable_sort(out.begin(), out.end(), [](const SweepRecord& a, const SweepRecord& b) {
    if (a.steps != b.steps) return a.steps < b.steps;
    return a.pattern.value() < b.pattern.value();
  });
  return out;
}

std::vector<std::string> config_columns(std::span<const SweepRecord> records) {
  std::vector<std::string> cols;
  for (const auto& r : records) {
    for (const auto& c : r.configs) {
      if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
    }
  }
  return cols;
}

const SweepRecord* reference(std::span<const SweepRecord> records, std::size_t steps) {
  for (const auto& r : records) {
    if (r.pattern.is_full() && r.steps == steps) return &r;
  }
  return nullptr;
}

std::string table_header(const std::vector<std::string>& first, const std::vector<std::string>& configs,
                         const std::vector<std::string>& last) {
  std::string head = "|", rule = "|";
  auto col = [&](const std::string& name) {
    head += " " + name + " |";
    rule += "---|";
  };
  for (const auto& c : first) col(c);
  for (const auto& c : configs) col(c + " (%)");
  for (const auto& c : last) col(c);
  return head + "\n" + rule + "\n";
}

std::string accuracy_cells(const SweepRecord& r, const std::vector<std::string>& configs) {
  std::string out;
  for (const auto& c : configs) {
    const auto acc = r.accuracy_for(c);
    out += " " + (acc ? percent(*acc) : std::string("-")) + " |";
  }
  return out;
}

}  // namespace

std::string timing_csv(std::span<const TimingSample> samples) {
  std::string out = "pattern,steps,count,mean_ms,std_ms,median_ms,reliable\n";
  for (const auto& s : samples) {
    out += quoted(s.pattern) + "," + std::to_string(s.steps) + "," + std::to_string(s.count()) + "," +
           format_fixed(s.mean, 4) + "," + format_fixed(s.std, 4) + "," + format_fixed(s.median, 4) + "," +
           (s.reliable ? "true" : "false") + "\n";
  }
  return out;
}

std::string sweep_csv(std::span<const SweepRecord> records) {
  std::string out = "steps,pattern,config,accuracy,time_ms,mean_time_ms,flop_cost\n";
  for (const auto& r : ordered(records)) {
    for (std::size_t i = 0; i < r.configs.size(); ++i) {
      out += std::to_string(r.steps) + "," + quoted(r.pattern) + "," + r.configs[i] + "," +
             format_double(r.accuracy[i]) + "," + (i < r.time_ms.size() ? format_fixed(r.time_ms[i], 4) : "") +
             "," + format_fixed(r.mean_time_ms, 4) + "," + format_double(r.flop_cost) + "\n";
    }
  }
  return out;
}

std::string long_csv(std::span<const TimingSample> samples, std::span<const SweepRecord> records) {
  std::string out = "pattern,P,config,metric,value\n";
  for (const auto& r : ordered(records)) {
    const std::string key = quoted(r.pattern) + "," + std::to_string(r.steps) + ",";
    for (std::size_t i = 0; i < r.configs.size(); ++i) {
      out += key + r.configs[i] + ",accuracy," + format_double(r.accuracy[i]) + "\n";
      if (i < r.time_ms.size()) out += key + r.configs[i] + ",time_ms," + format_fixed(r.time_ms[i], 4) + "\n";
    }
    out += key + "all,mean_time_ms," + format_fixed(r.mean_time_ms, 4) + "\n";
    out += key + "all,flop_cost," + format_double(r.flop_cost) + "\n";
  }
  for (const auto& s : samples) {
    const std::string key = quoted(s.pattern) + "," + std::to_string(s.steps) + ",timing,";
    out += key + "mean_ms," + format_fixed(s.mean, 4) + "\n";
    out += key + "median_ms," + format_fixed(s.median, 4) + "\n";
    out += key + "std_ms," + format_fixed(s.std, 4) + "\n";
  }
  return out;
}

std::string search_csv(const SearchReport& rep) {
  const auto& configs = rep.baseline.configs;
  std::string out = "steps,pattern";
  for (const auto& c : configs) out += "," + c;
  out += ",mean_time_ms,speedup,selected\n";
  for (const auto& r : rep.admissible) {
    out += std::to_string(r.steps) + "," + quoted(r.pattern);
    for (const auto& c : configs) out += "," + format_double(r.accuracy_for(c).value_or(0.0));
    const bool sel = r.steps == rep.selected.steps && r.pattern == rep.selected.pattern;
    out += "," + format_fixed(r.mean_time_ms, 4) + "," +
           format_fixed(r.mean_time_ms > 0 ? rep.baseline.mean_time_ms / r.mean_time_ms : 0.0, 4) + "," +
           (sel ? "true" : "false") + "\n";
  }
  return out;
}

std::string sweep_markdown(std::span<const SweepRecord> records, std::size_t reference_steps) {
  const auto configs = config_columns(records);
  const auto* ref = reference(records, reference_steps);
  std::string out = table_header({"Steps", "Pattern"}, configs, {"Mean time (ms)", "Speedup"});
  for (const auto& r : ordered(records)) {
    out += "| " + std::to_string(r.steps) + " | " + r.pattern.str() + " |" + accuracy_cells(r, configs) + " " +
           format_fixed(r.mean_time_ms, 1) + " | " +
           (ref && r.mean_time_ms > 0 ? format_fixed(ref->mean_time_ms / r.mean_time_ms, 1) : std::string("-")) +
           " |\n";
  }
  return out;
}

std::string search_markdown(const SearchReport& rep) {
  std::string out = "Baseline: pattern " + rep.baseline.pattern.str() + " at P=" + std::to_string(rep.baseline.steps) +
                    ", " + format_fixed(rep.baseline.mean_time_ms, 1) + " ms\n\n";
  const double keep = std::round((1.0 - rep.threshold) * 1e9) / 1e9;
  out += "Threshold: accuracy >= " + format_double(keep) + " x baseline in every configuration";
  for (const auto& [c, f] : rep.floors) out += "; " + c + " >= " + percent(f) + "%";
  out += "\n\n";
  out += sweep_markdown(rep.admissible, rep.baseline.steps);
  out += "\nSelected: pattern " + rep.selected.pattern.str() + " at P=" + std::to_string(rep.selected.steps) +
         ", speedup " + format_fixed(rep.speedup, 2) + (rep.degenerate ? " (no admissible record)" : "") + "\n";
  return out;
}

std::string best_pattern_markdown(std::span<const ConfigChoice> choices) {
  std::string out = "| Configuration | Pattern | Accuracy (%) |\n|---|---|---|\n";
  for (const auto& c : choices) {
    out += "| " + c.config + " | " + c.record.pattern.str() + " | " + percent(*c.record.accuracy_for(c.config)) +
           " |\n";
  }
  return out;
}

std::string summary_markdown(std::span<const TimingSample> samples, std::span<const SweepRecord> records,
                             const SearchReport* report) {
  std::string out = "# Adaptation report\n\n## Timing\n\n";
  out += "| Pattern | Steps | Episodes | Mean (ms) | Median (ms) | Std (ms) |\n|---|---|---|---|---|---|\n";
  for (const auto& s : samples) {
    out += "| " + s.pattern.str() + " | " + std::to_string(s.steps) + " | " + std::to_string(s.count()) +
           (s.reliable ? "" : " (unreliable)") + " | " + format_fixed(s.mean, 2) + " | " + format_fixed(s.median, 2) +
           " | " + format_fixed(s.std, 2) + " |\n";
  }
  out += "\n## Sweep\n\n" + sweep_markdown(records);
  if (report) out += "\n## Search\n\n" + search_markdown(*report);
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted_field = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted_field = !quoted_field;
    } else if (ch == ',' && !quoted_field) {
      out.emplace_back();
    } else if (ch != '\r') {
      out.back() += ch;
    }
  }
  if (quoted_field) throw std::invalid_argument("csv: unterminated quote in '" + line + "'");
  return out;
}

std::vector<SweepRecord> parse_sweep_csv(const std::string& text) {
  const auto lines = split(text, '\n');
  if (lines.empty() || trim(lines[0]) != "steps,pattern,config,accuracy,time_ms,mean_time_ms,flop_cost") {
    throw std::invalid_argument("sweep csv: unexpected header");
  }
  std::vector<SweepRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 7) {
      throw std::invalid_argument("sweep csv line " + std::to_string(i + 1) + ": expected 7 fields");
    }
    const std::size_t steps = parse_uint(f[0]);
    const auto pattern = LambdaPattern::parse(f[1]);
    SweepRecord* rec = nullptr;
    for (auto& r : out) {
      if (r.steps == steps && r.pattern == pattern) rec = &r;
    }
    if (!rec) {
      out.emplace_back();
      rec = &out.back();
      rec->pattern = pattern;
      rec->steps = steps;
    }
    rec->configs.push_back(f[2]);
    rec->accuracy.push_back(parse_double(f[3]));
    if (!trim(f[4]).empty()) rec->time_ms.push_back(parse_double(f[4]));
    rec->mean_time_ms = parse_double(f[5]);
    rec->flop_cost = parse_double(f[6]);
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::filesystem::path> emit_report(std::span<const TimingSample> samples,
                                               std::span<const SweepRecord> records, const SearchReport* report,
                                               const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<std::pair<std::string, std::string>> files{
      {"timing.csv", timing_csv(samples)},
      {"sweep.csv", sweep_csv(records)},
      {"long.csv", long_csv(samples, records)},
      {"summary.md", summary_markdown(samples, records, report)},
  };
  if (report) {
    files.emplace_back("search.csv", search_csv(*report));
    files.emplace_back("search.md", search_markdown(*report));
  }
  std::vector<std::filesystem::path> written;
  for (const auto& [name, text] : files) {
    write_text(dir / name, text);
    written.push_back(dir / name);
  }
  return written;
}

}  // namespace lmaml
