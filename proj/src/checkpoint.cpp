#include "scriptid/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <map>

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace scriptid {

namespace {

using json = nlohmann::json;
constexpr char kMagic[4] = {'S', 'I', 'D', 'N'};
constexpr std::uint32_t kFlagAdam = 1;

class Writer {
 public:
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { uint_le(v, 2); }
  void u32(std::uint32_t v) { uint_le(v, 4); }
  void u64(std::uint64_t v) { uint_le(v, 8); }
  void f32(const float* p, Index n) {
    for (Index i = 0; i < n; ++i) u32(std::bit_cast<std::uint32_t>(p[i]));
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  void uint_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, size_t size) : p_(data), n_(size) {}
  const std::uint8_t* take(size_t k) {
    if (k > n_ - pos_) throw IntegrityError("checkpoint truncated");
    const auto* out = p_ + pos_;
    pos_ += k;
    return out;
  }
  std::uint64_t uint_le(int k) {
    const auto* b = take(static_cast<size_t>(k));
    std::uint64_t v = 0;
    for (int i = 0; i < k; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(uint_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(uint_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint_le(4)); }
  std::uint64_t u64() { return uint_le(8); }
  void f32(float* dst, Index n) {
    for (Index i = 0; i < n; ++i) dst[i] = std::bit_cast<float>(u32());
  }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

json config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},   {"max_iterations", c.max_iterations},
          {"weight_decay", c.weight_decay},   {"clip_norm", c.clip_norm},     {"max_patches", c.max_patches},
          {"seed", c.seed},                   {"variant", to_string(c.variant)}, {"arch", c.arch},
          {"augment", c.augment},             {"dropout", c.dropout},         {"eval_every", c.eval_every},
          {"threads", c.threads}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_iterations = j.at("max_iterations").get<int>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.max_patches = j.at("max_patches").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.arch = j.at("arch").get<std::string>();
  c.augment = j.at("augment").get<bool>();
  c.dropout = j.at("dropout").get<bool>();
  c.eval_every = j.at("eval_every").get<int>();
  c.threads = j.at("threads").get<int>();
  return c;
}

json dims_to_json(const ModelDims& d) {
  return {{"channels", d.channels}, {"conv_filters", d.conv_filters}, {"fc_hidden", d.fc_hidden},
          {"feature", d.feature},   {"lstm_hidden", d.lstm_hidden},   {"attention", d.attention},
          {"fusion", d.fusion},     {"n_classes", d.n_classes}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  d.channels = j.at("channels").get<int>();
  d.conv_filters = j.at("conv_filters").get<std::array<int, 4>>();
  d.fc_hidden = j.at("fc_hidden").get<int>();
  d.feature = j.at("feature").get<int>();
  d.lstm_hidden = j.at("lstm_hidden").get<int>();
  d.attention = j.at("attention").get<int>();
  d.fusion = j.at("fusion").get<int>();
  d.n_classes = j.at("n_classes").get<int>();
  return d;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams<float>& params, const CheckpointMetadata& meta,
                                               const AdamState* adam) {
  json m;
  m["dims"] = dims_to_json(params.dims);
  m["variant"] = to_string(params.variant);
  m["pixel_mean"] = params.pixel_mean;
  m["dropout_rate"] = params.encoder.dropout_rate;
  m["bn_epsilon"] = params.encoder.bn[0].epsilon;
  m["bn_momentum"] = params.encoder.bn[0].momentum;
  m["class_table"] = meta.class_table;
  m["config"] = config_to_json(meta.config);
  m["iteration"] = meta.iteration;
  const std::string meta_text = m.dump();

  const auto tensors = params.tensors();
  std::vector<size_t> order(tensors.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return tensors[a].name < tensors[b].name; });

  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(adam ? kFlagAdam : 0);
  w.u32(static_cast<std::uint32_t>(meta_text.size()));
  w.bytes(meta_text.data(), meta_text.size());
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (size_t i : order) {
    const auto& t = tensors[i];
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (int d : t.dims) w.u32(static_cast<std::uint32_t>(d));
    w.f32(t.data, t.size);
  }
  if (adam) {
    // AdamState is indexed by trainable tensors in structural order.
    std::vector<int> slot(tensors.size(), -1);
    int k = 0;
    for (size_t i = 0; i < tensors.size(); ++i) {
      if (is_trainable(tensors[i].kind)) slot[i] = k++;
    }
    if (static_cast<size_t>(k) != adam->m.size() || adam->v.size() != adam->m.size()) {
      throw InvalidShape("optimizer state does not match the parameters");
    }
    w.u64(static_cast<std::uint64_t>(adam->step));
    for (size_t i : order) {
      if (slot[i] < 0) continue;
      const auto& m1 = adam->m[slot[i]];
      const auto& v1 = adam->v[slot[i]];
      if (m1.size() != tensors[i].size || v1.size() != tensors[i].size) {
        throw InvalidShape("optimizer state size mismatch for " + tensors[i].name);
      }
      w.f32(m1.data(), m1.size());
      w.f32(v1.data(), v1.size());
    }
  }
  w.u32(crc32_of(w.data().data(), w.data().size()));
  return std::move(w.data());
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, std::optional<int> expected_classes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw BadMagic("not a checkpoint (magic 'SIDN' missing)");
  }
  if (bytes.size() < 8) throw IntegrityError("checkpoint truncated");
  Reader head(bytes.data() + 4, 4);
  const std::uint32_t version = head.u32();
  if (version > kCheckpointVersion || version == 0) {
    throw UnsupportedVersion("checkpoint format version " + std::to_string(version) + " is not supported (max " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 16) throw IntegrityError("checkpoint truncated");
  const size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  if (tail.u32() != crc32_of(bytes.data(), body)) throw IntegrityError("checkpoint CRC mismatch (truncated or corrupt)");

  Reader r(bytes.data() + 8, body - 8);
  const std::uint32_t flags = r.u32();
  const std::uint32_t meta_len = r.u32();
  const auto* meta_bytes = r.take(meta_len);
  json m;
  try {
    m = json::parse(meta_bytes, meta_bytes + meta_len);
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  ModelDims dims;
  try {
    dims = dims_from_json(m.at("dims"));
    ck.params = ModelParams<float>::zeros(dims, parse_variant(m.at("variant").get<std::string>()));
    ck.params.pixel_mean = m.at("pixel_mean").get<std::vector<float>>();
    ck.params.encoder.dropout_rate = m.at("dropout_rate").get<double>();
    for (auto& bn : ck.params.encoder.bn) {
      bn.epsilon = m.at("bn_epsilon").get<double>();
      bn.momentum = m.at("bn_momentum").get<double>();
    }
    ck.meta.class_table = m.at("class_table").get<std::vector<std::string>>();
    ck.meta.config = config_from_json(m.at("config"));
    ck.meta.iteration = m.at("iteration").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata incomplete: ") + e.what());
  }
  if (static_cast<int>(ck.meta.class_table.size()) != dims.n_classes) {
    throw IntegrityError("class table size does not match the head");
  }
  if (expected_classes && *expected_classes != dims.n_classes) {
    throw ShapeMismatch("checkpoint has " + std::to_string(dims.n_classes) + " classes, configuration expects " +
                        std::to_string(*expected_classes));
  }

  struct Entry {
    std::vector<int> dims;
    std::vector<float> data;
  };
  std::map<std::string, Entry> table;
  std::vector<std::string> file_order;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    const auto* name_bytes = r.take(len);
    std::string name(reinterpret_cast<const char*>(name_bytes), len);
    Entry e;
    const int rank = r.u8();
    Index size = 1;
    for (int k = 0; k < rank; ++k) {
      e.dims.push_back(static_cast<int>(r.u32()));
      size *= e.dims.back();
    }
    e.data.resize(static_cast<size_t>(size));
    r.f32(e.data.data(), size);
    if (!table.emplace(name, std::move(e)).second) throw IntegrityError("duplicate tensor " + name);
    file_order.push_back(std::move(name));
  }

  auto tensors = ck.params.tensors();
  for (auto& t : tensors) {
    const auto it = table.find(t.name);
    if (it == table.end()) throw MissingTensor("checkpoint lacks tensor " + t.name);
    if (it->second.dims != t.dims) throw ShapeMismatch("tensor " + t.name + " has a different shape in the checkpoint");
    std::copy(it->second.data.begin(), it->second.data.end(), t.data);
  }
  if (table.size() != tensors.size()) throw ShapeMismatch("checkpoint holds tensors this architecture does not have");

  if (flags & kFlagAdam) {
    AdamState adam = AdamState::for_params(ck.params);
    adam.step = static_cast<std::int64_t>(r.u64());
    std::map<std::string, int> slot;
    int k = 0;
    for (const auto& t : tensors) {
      if (is_trainable(t.kind)) slot[t.name] = k++;
    }
    for (const auto& name : file_order) {
      const auto it = slot.find(name);
      if (it == slot.end()) continue;
      r.f32(adam.m[it->second].data(), adam.m[it->second].size());
      r.f32(adam.v[it->second].data(), adam.v[it->second].size());
    }
    ck.adam = std::move(adam);
  }
  if (!r.done()) throw IntegrityError("trailing bytes after checkpoint payload");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const CheckpointMetadata& meta, const AdamState* adam) {
  const auto bytes = serialize_checkpoint(params, meta, adam);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<int> expected_classes) {
  return parse_checkpoint(read_file(path), expected_classes);
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return crc32_of(bytes.data(), bytes.size());
}

}  // namespace scriptid
