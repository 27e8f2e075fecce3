#include "lmaml/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

namespace lmaml {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'M', 'A', 'M', 'L', 'C', 'K', '\0'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  void text(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, std::size_t layer, const Tensor<double>& t) {
    text(name);
    put<std::uint32_t>(static_cast<std::uint32_t>(layer));
    put<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.shape()) put<std::uint64_t>(d);
    bytes(t.values().data(), t.numel() * sizeof(double));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string text() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  Param<double> tensor() {
    Param<double> p;
    p.name = text();
    p.layer = get<std::uint32_t>();
    const auto ndim = get<std::uint32_t>();
    if (ndim > 8) throw CheckpointError("checkpoint: tensor '" + p.name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t i = 0; i < ndim; ++i) shape.push_back(get<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), data_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    p.value = Tensor<double>(shape, std::move(v));
    return p;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw CheckpointError("checkpoint: unexpected end of data");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw CheckpointError("checkpoint: expected true/false, got '" + s + "'");
}

}  // namespace

KeyValueText model_config_text(const MetaModel& m) {
  KeyValueText kv;
  kv.set("arch.filters", std::to_string(m.arch.filters));
  kv.set("arch.n_way", std::to_string(m.arch.n_way));
  kv.set("arch.input", std::to_string(m.arch.input.channels) + "x" + std::to_string(m.arch.input.height) + "x" +
                           std::to_string(m.arch.input.width));
  kv.set("arch.feature_dim", std::to_string(m.arch.feature_dim()));
  kv.set("task.n_way", std::to_string(m.task.n_way));
  kv.set("task.k_shot", std::to_string(m.task.k_shot));
  kv.set("task.k_query", std::to_string(m.task.k_query));
  const auto& c = m.config;
  kv.set("meta.alpha", format_double(c.alpha));
  kv.set("meta.beta", format_double(c.beta));
  kv.set("meta.steps", std::to_string(c.steps));
  kv.set("meta.meta_batch", std::to_string(c.meta_batch));
  kv.set("meta.epochs", std::to_string(c.epochs));
  kv.set("meta.tasks_per_epoch", std::to_string(c.tasks_per_epoch));
  kv.set("meta.val_episodes", std::to_string(c.val_episodes));
  kv.set("meta.first_order", c.first_order ? "true" : "false");
  kv.set("meta.seed", std::to_string(c.seed));
  kv.set("adam.beta1", format_double(c.adam.beta1));
  kv.set("adam.beta2", format_double(c.adam.beta2));
  kv.set("adam.eps", format_double(c.adam.eps));
  kv.set("adam.step", std::to_string(m.adam.step));
  return kv;
}

std::vector<std::uint8_t> encode_checkpoint(const MetaModel& model) {
  if (model.adam.m.size() != model.theta.size() || model.adam.v.size() != model.theta.size()) {
    throw CheckpointError("checkpoint: Adam moments do not mirror the weights");
  }
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.text(model_config_text(model).str());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(3 * model.theta.size()));
  for (const auto& p : model.theta.params) w.tensor("theta/" + p.name, p.layer, p.value);
  for (std::size_t i = 0; i < model.theta.size(); ++i) {
    const auto& p = model.theta.params[i];
    w.tensor("adam.m/" + p.name, p.layer, model.adam.m[i]);
  }
  for (std::size_t i = 0; i < model.theta.size(); ++i) {
    const auto& p = model.theta.params[i];
    w.tensor("adam.v/" + p.name, p.layer, model.adam.v[i]);
  }
  w.put<std::uint32_t>(crc32_of(w.out.data(), w.out.size()));
  return std::move(w.out);
}

MetaModel decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("checkpoint: missing magic bytes");
  }
  if (bytes.size() < sizeof kMagic + 8) throw ChecksumError("checkpoint: file truncated");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc32_of(bytes.data(), body) != stored) {
    throw ChecksumError("checkpoint: checksum mismatch (corrupt or truncated)");
  }

  Reader r(bytes.data() + sizeof kMagic, body - sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  const auto kv = KeyValueText::parse(r.text());

  MetaModel m;
  Cnn4Options o;
  o.filters = parse_uint(kv.get("arch.filters"));
  o.n_way = parse_uint(kv.get("arch.n_way"));
  const auto dims = split(kv.get("arch.input"), 'x');
  if (dims.size() != 3) throw CheckpointError("checkpoint: malformed arch.input");
  o.input = {parse_uint(dims[0]), parse_uint(dims[1]), parse_uint(dims[2])};
  o.feature_dim = parse_uint(kv.get("arch.feature_dim"));
  m.arch = cnn4_architecture(o);
  m.task = {parse_uint(kv.get("task.n_way")), parse_uint(kv.get("task.k_shot")), parse_uint(kv.get("task.k_query"))};
  auto& c = m.config;
  c.alpha = parse_double(kv.get("meta.alpha"));
  c.beta = parse_double(kv.get("meta.beta"));
  c.steps = parse_uint(kv.get("meta.steps"));
  c.meta_batch = parse_uint(kv.get("meta.meta_batch"));
  c.epochs = parse_uint(kv.get("meta.epochs"));
  c.tasks_per_epoch = parse_uint(kv.get("meta.tasks_per_epoch"));
  c.val_episodes = parse_uint(kv.get("meta.val_episodes"));
  c.first_order = parse_bool(kv.get("meta.first_order"));
  c.seed = parse_uint(kv.get("meta.seed"));
  c.adam.beta1 = parse_double(kv.get("adam.beta1"));
  c.adam.beta2 = parse_double(kv.get("adam.beta2"));
  c.adam.eps = parse_double(kv.get("adam.eps"));
  m.adam.step = parse_uint(kv.get("adam.step"));

  const auto count = r.get<std::uint32_t>();
  if (count % 3 != 0) throw CheckpointError("checkpoint: tensor count is not a multiple of 3");
  const std::size_t n = count / 3;
  for (std::size_t i = 0; i < n; ++i) {
    auto p = r.tensor();
    if (p.name.rfind("theta/", 0) != 0) throw CheckpointError("checkpoint: expected theta tensor, got " + p.name);
    p.name.erase(0, 6);
    m.theta.params.push_back(std::move(p));
  }
  for (const char* prefix : {"adam.m/", "adam.v/"}) {
    for (std::size_t i = 0; i < n; ++i) {
      auto p = r.tensor();
      if (p.name != prefix + m.theta.params[i].name || p.value.shape() != m.theta.params[i].value.shape()) {
        throw CheckpointError("checkpoint: moment tensor " + p.name + " does not mirror the weights");
      }
      (prefix[5] == 'm' ? m.adam.m : m.adam.v).push_back(p.value);
    }
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing data before checksum");

  const auto expected = init_weights(m.arch, 0);
  if (expected.size() != m.theta.size()) throw CheckpointError("checkpoint: weights do not match the architecture");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& a = expected.params[i];
    const auto& b = m.theta.params[i];
    if (a.name != b.name || a.layer != b.layer || a.value.shape() != b.value.shape()) {
      throw CheckpointError("checkpoint: tensor " + b.name + " does not match the architecture");
    }
  }
  return m;
}

void save_checkpoint(const MetaModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

MetaModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace lmaml
