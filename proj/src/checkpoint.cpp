#include "scouter/checkpoint.hpp"

#include "scouter/text.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace scouter {

namespace {

constexpr char kMagic[8] = {'S', 'C', 'O', 'U', 'T', 'C', 'K', 'P'};
constexpr std::uint8_t kFloat64 = 1;

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint: truncated data");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end()) throw CheckpointError("checkpoint: missing config key " + key);
  return it->second;
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kVersion);
  std::string text;
  for (const auto& [k, v] : config) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("checkpoint: config key/value contains a separator: " + k);
    text += k + "=" + v + "\n";
  }
  put_le<std::uint64_t>(out, text.size());
  out += text;
  put_le<std::uint32_t>(out, std::uint32_t(tensors.size()));
  for (const auto& t : tensors) {
    if (numel(t.shape) != t.data.size()) throw CheckpointError("checkpoint: tensor " + t.name + " shape/data mismatch");
    put_le<std::uint32_t>(out, std::uint32_t(t.name.size()));
    out += t.name;
    put_le<std::uint8_t>(out, kFloat64);
    put_le<std::uint32_t>(out, std::uint32_t(t.shape.size()));
    for (Index d : t.shape) put_le<std::uint64_t>(out, std::uint64_t(d));
    for (Index i = 0; i < t.data.size(); ++i) put_le<double>(out, t.data[i]);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw CheckpointError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  const std::string text = r.take(r.get<std::uint64_t>());
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint: malformed config line '" + line + "'");
    ck.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.take(r.get<std::uint32_t>());
    if (r.get<std::uint8_t>() != kFloat64) throw CheckpointError("checkpoint: unsupported dtype for " + t.name);
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(Index(r.get<std::uint64_t>()));
    t.data.resize(numel(t.shape));
    for (Index k = 0; k < t.data.size(); ++k) t.data[k] = r.get<double>();
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return deserialize(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

void load_parameters(const Checkpoint& ckpt, const ParameterList& params) {
  for (auto p : params) {
    const TensorRecord* rec = ckpt.find(p.name);
    if (!rec) throw CheckpointError("checkpoint: missing tensor " + p.name);
    if (rec->shape != p.tensor.shape())
      throw CheckpointError("checkpoint: tensor " + p.name + " has shape " + to_string(rec->shape) + ", model expects " +
                            to_string(p.tensor.shape()));
    p.tensor.mutable_value() = rec->data;
  }
}

void store_parameters(const ParameterList& params, Checkpoint& ckpt) {
  for (const auto& p : params) ckpt.tensors.push_back({p.name, p.tensor.shape(), p.tensor.value()});
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(ModelConfig::from_key_values(ckpt.config), 0);
  load_parameters(ckpt, model.parameters());
  return model;
}

}  // namespace scouter
