#include "lmaml/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace lmaml {

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "unknown";
}

std::size_t ClassDataset::image_count() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.count;
  return n;
}

std::string TaskSpec::label() const {
  return std::to_string(k_shot) + "-shot " + std::to_string(n_way) + "-way";
}

// ---- CIFAR-100 -------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RawDataset empty_cifar() {
  RawDataset raw;
  raw.classes.resize(kCifarClasses);
  for (std::size_t i = 0; i < kCifarClasses; ++i) {
    raw.classes[i].class_id = static_cast<int>(i);
    raw.classes[i].name = "fine_" + std::to_string(i);
  }
  return raw;
}

}  // namespace

void parse_cifar100(std::span<const std::uint8_t> bytes, RawDataset& raw, const std::string& source) {
  if (raw.classes.size() != kCifarClasses) {
    throw std::invalid_argument("parse_cifar100: raw dataset must hold 100 classes");
  }
  const std::size_t complete = bytes.size() / kCifarRecordBytes;
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw ParseError(source + ": truncated record at offset " +
                     std::to_string(complete * kCifarRecordBytes) + " (file length " +
                     std::to_string(bytes.size()) + " is not a multiple of 3074)");
  }
  const std::size_t image_bytes = kCifarRecordBytes - 2;
  for (std::size_t r = 0; r < complete; ++r) {
    const std::size_t offset = r * kCifarRecordBytes;
    const std::uint8_t fine = bytes[offset + 1];
    if (fine >= kCifarClasses) {
      throw ParseError(source + ": fine label " + std::to_string(fine) + " at offset " +
                       std::to_string(offset + 1) + " is not below 100");
    }
    auto& cls = raw.classes[fine];
    const auto* px = bytes.data() + offset + 2;
    for (std::size_t i = 0; i < image_bytes; ++i) cls.pixels.push_back(static_cast<float>(px[i]) / 255.0f);
    ++cls.count;
  }
}

RawDataset load_cifar100(const std::filesystem::path& dir) {
  RawDataset raw = empty_cifar();
  bool any = false;
  for (const char* name : {"train.bin", "test.bin"}) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) continue;
    const auto bytes = read_bytes(path);
    parse_cifar100(bytes, raw, path.string());
    any = true;
  }
  if (!any) throw ParseError(dir.string() + ": neither train.bin nor test.bin found");
  const auto names = dir / "fine_label_names.txt";
  if (std::filesystem::exists(names)) {
    std::ifstream in(names);
    std::string line;
    std::size_t i = 0;
    while (std::getline(in, line) && i < kCifarClasses) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      raw.classes[i++].name = line;
    }
  }
  return raw;
}

std::vector<std::uint8_t> encode_cifar100(std::span<const int> fine_labels, std::span<const float> pixels) {
  const std::size_t image_bytes = kCifarRecordBytes - 2;
  if (pixels.size() != fine_labels.size() * image_bytes) {
    throw std::invalid_argument("encode_cifar100: pixel count does not match record count");
  }
  std::vector<std::uint8_t> out;
  out.reserve(fine_labels.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < fine_labels.size(); ++r) {
    out.push_back(static_cast<std::uint8_t>(fine_labels[r] / 5));
    out.push_back(static_cast<std::uint8_t>(fine_labels[r]));
    for (std::size_t i = 0; i < image_bytes; ++i) {
      const float v = std::clamp(pixels[r * image_bytes + i], 0.0f, 1.0f);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  }
  return out;
}

// ---- split manifests -------------------------------------------------------

SplitManifest parse_split_manifest(const std::string& text) {
  SplitManifest m;
  std::vector<std::string>* current = nullptr;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::string heading;
    if (line.front() == '[' && line.back() == ']') heading = trim(line.substr(1, line.size() - 2));
    else if (line.back() == ':') heading = trim(line.substr(0, line.size() - 1));
    if (!heading.empty()) {
      if (heading == "train") current = &m.train;
      else if (heading == "validation" || heading == "val") current = &m.validation;
      else if (heading == "test") current = &m.test;
      else throw ParseError("split manifest line " + std::to_string(lineno) + ": unknown heading '" + heading + "'");
      continue;
    }
    if (!current) {
      throw ParseError("split manifest line " + std::to_string(lineno) + ": class listed before any heading");
    }
    current->push_back(line);
  }
  return m;
}

SplitManifest read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open split manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_split_manifest(ss.str());
}

SplitDatasets apply_split(const RawDataset& raw, const SplitManifest& manifest) {
  std::map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < raw.classes.size(); ++i) {
    by_name[raw.classes[i].name] = i;
    by_name[std::to_string(raw.classes[i].class_id)] = i;
  }
  SplitDatasets out;
  std::set<std::size_t> used;
  auto fill = [&](const std::vector<std::string>& names, Split split, std::size_t expected) {
    ClassDataset ds;
    ds.split = split;
    ds.shape = raw.shape;
    for (const auto& name : names) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) {
        throw ParseError("split manifest: unknown class '" + name + "' in " + std::string(split_name(split)));
      }
      if (!used.insert(it->second).second) {
        throw ParseError("split manifest: class '" + name + "' listed more than once");
      }
      ds.classes.push_back(raw.classes[it->second]);
    }
    if (names.size() != expected) {
      out.warnings.push_back(std::string(split_name(split)) + " split has " + std::to_string(names.size()) +
                             " classes (expected " + std::to_string(expected) + ")");
    }
    return ds;
  };
  out.train = fill(manifest.train, Split::Train, 64);
  out.validation = fill(manifest.validation, Split::Validation, 16);
  out.test = fill(manifest.test, Split::Test, 20);
  return out;
}

// ---- episodes --------------------------------------------------------------

namespace {

std::vector<std::size_t> choose(std::size_t population, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(population);
  for (std::size_t i = 0; i < population; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

Episode sample_episode(const ClassDataset& ds, const TaskSpec& spec, Rng& rng) {
  if (spec.n_way < 1 || spec.k_shot < 1 || spec.k_query < 1) {
    throw std::invalid_argument("sample_episode: n_way, k_shot and k_query must be positive");
  }
  if (ds.classes.size() < spec.n_way) {
    throw std::invalid_argument("sample_episode: " + std::string(split_name(ds.split)) + " split has " +
                                std::to_string(ds.classes.size()) + " classes, need " +
                                std::to_string(spec.n_way));
  }
  const std::size_t per_class = spec.k_shot + spec.k_query;
  const std::size_t numel = ds.shape.numel();
  const auto classes = choose(ds.classes.size(), spec.n_way, rng);

  Episode ep;
  ep.spec = spec;
  std::vector<double> sx, qx;
  sx.reserve(spec.n_way * spec.k_shot * numel);
  qx.reserve(spec.n_way * spec.k_query * numel);
  for (std::size_t label = 0; label < spec.n_way; ++label) {
    const auto& cls = ds.classes[classes[label]];
    if (cls.count < per_class) {
      throw std::invalid_argument("sample_episode: class '" + cls.name + "' has " + std::to_string(cls.count) +
                                  " images, need " + std::to_string(per_class));
    }
    ep.class_map.push_back(cls.class_id);
    const auto images = choose(cls.count, per_class, rng);
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto px = cls.image(images[i], numel);
      const bool support = i < spec.k_shot;
      auto& dst = support ? sx : qx;
      dst.insert(dst.end(), px.begin(), px.end());
      (support ? ep.support_y : ep.query_y).push_back(static_cast<std::int32_t>(label));
      (support ? ep.support_ids : ep.query_ids).push_back({classes[label], images[i]});
    }
  }
  ep.support_x = Tensor<double>(ds.shape.batch(spec.n_way * spec.k_shot), std::move(sx));
  ep.query_x = Tensor<double>(ds.shape.batch(spec.n_way * spec.k_query), std::move(qx));
  return ep;
}

std::vector<Episode> sample_episodes(const ClassDataset& ds, const TaskSpec& spec, std::size_t count,
                                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_episode(ds, spec, rng));
  return out;
}

// ---- synthetic task space --------------------------------------------------

ClassDataset synth_taskspace(const SynthOptions& o, Rng& rng) {
  if (o.n_classes < 2) throw std::invalid_argument("synth_taskspace: need at least 2 classes");
  if (o.shape.channels < 1 || o.shape.height < 1 || o.shape.width < 1) {
    throw std::invalid_argument("synth_taskspace: empty image shape");
  }
  if (o.images_per_class < 1) throw std::invalid_argument("synth_taskspace: images_per_class must be positive");
  if (!(o.difficulty >= 0.0 && o.difficulty <= 1.0)) {
    throw std::invalid_argument("synth_taskspace: difficulty must lie in [0, 1]");
  }
  constexpr double pi = std::numbers::pi;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const double jitter = 0.03 + 0.47 * o.difficulty;
  const double noise = 0.02 + 0.2 * o.difficulty;
  const std::size_t C = o.shape.channels, H = o.shape.height, W = o.shape.width;

  ClassDataset ds;
  ds.split = o.split;
  ds.shape = o.shape;
  for (std::size_t c = 0; c < o.n_classes; ++c) {
    ClassRecord rec;
    rec.class_id = o.first_class_id + static_cast<int>(c);
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03d", rec.class_id);
    rec.name = name;

    std::vector<double> color_a(C), color_b(C);
    for (auto& v : color_a) v = unit(rng);
    for (auto& v : color_b) v = unit(rng);
    const double gradient_angle = 2.0 * pi * unit(rng);
    const double stripe_angle = pi * unit(rng);
    const double frequency = 1.5 + 2.5 * unit(rng);

    rec.count = o.images_per_class;
    rec.pixels.reserve(o.images_per_class * C * H * W);
    for (std::size_t img = 0; img < o.images_per_class; ++img) {
      std::vector<double> a(C), b(C);
      for (std::size_t ch = 0; ch < C; ++ch) {
        a[ch] = color_a[ch] + jitter * normal(rng);
        b[ch] = color_b[ch] + jitter * normal(rng);
      }
      const double ga = gradient_angle + jitter * pi * normal(rng);
      const double sa = stripe_angle + jitter * pi * normal(rng);
      const double phase = 2.0 * pi * o.difficulty * unit(rng) + 0.3 * normal(rng);
      for (std::size_t ch = 0; ch < C; ++ch) {
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t x = 0; x < W; ++x) {
            const double u = H > 1 ? 2.0 * static_cast<double>(y) / static_cast<double>(H - 1) - 1.0 : 0.0;
            const double v = W > 1 ? 2.0 * static_cast<double>(x) / static_cast<double>(W - 1) - 1.0 : 0.0;
            const double t = 0.5 + 0.5 * (u * std::cos(ga) + v * std::sin(ga)) / std::numbers::sqrt2;
            const double base = a[ch] + (b[ch] - a[ch]) * t;
            const double stripes =
                0.5 + 0.5 * std::sin(pi * frequency * (u * std::cos(sa) + v * std::sin(sa)) + phase);
            const double value = base * (0.7 + 0.3 * stripes) + noise * normal(rng);
            rec.pixels.push_back(static_cast<float>(std::clamp(value, 0.0, 1.0)));
          }
        }
      }
    }
    ds.classes.push_back(std::move(rec));
  }
  return ds;
}

SplitDatasets synth_splits(const SynthSplitOptions& o) {
  Rng rng(o.seed);
  SplitDatasets out;
  int next_id = 0;
  auto make = [&](std::size_t n, Split split) {
    SynthOptions so;
    so.n_classes = n;
    so.shape = o.shape;
    so.difficulty = o.difficulty;
    so.images_per_class = o.images_per_class;
    so.first_class_id = next_id;
    so.split = split;
    next_id += static_cast<int>(n);
    return synth_taskspace(so, rng);
  };
  out.train = make(o.train_classes, Split::Train);
  out.validation = make(o.validation_classes, Split::Validation);
  out.test = make(o.test_classes, Split::Test);
  return out;
}

}  // namespace lmaml
