#include "stylespace/trainer/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stylespace/error.hpp"
#include "stylespace/trainer/config.hpp"

namespace stylespace {
namespace {

template <typename U>
void put_le(std::string& out, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : data_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
    pos_ += sizeof(U);
    U value;
    std::memcpy(&value, bytes, sizeof(U));
    return value;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::string& data_;
  std::size_t pos_ = 0;
};

template <typename T>
void write_values(std::string& out, const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i) put_le(out, t[i]);
}

template <typename T>
Tensor<T> read_values(Reader& in, Shape shape) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = in.get<T>();
  return t;
}

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
}

const AnyTensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

template <typename T>
const Tensor<T>& Checkpoint::tensor(const std::string& name) const {
  const auto* t = std::get_if<Tensor<T>>(&at(name));
  if (!t) throw FormatError("checkpoint tensor '" + name + "' has an unexpected dtype");
  return *t;
}

template <typename T>
void Checkpoint::put(const std::string& name, Tensor<T> value) {
  for (auto& [n, t] : tensors) {
    if (n == name) {
      t = std::move(value);
      return;
    }
  }
  tensors.emplace_back(name, std::move(value));
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

std::uint64_t Checkpoint::meta_u64(const std::string& key) const {
  try {
    std::size_t used = 0;
    const auto& s = meta_at(key);
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("checkpoint metadata '" + key + "' is not an integer");
  }
}

double Checkpoint::meta_double(const std::string& key) const {
  try {
    std::size_t used = 0;
    const auto& s = meta_at(key);
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("checkpoint metadata '" + key + "' is not a number");
  }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string blob;
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("checkpoint metadata '" + k + "' cannot hold '=' in keys or newlines");
    }
    blob += k + "=" + v + "\n";
  }
  std::string out(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
  out += blob;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, any] : ckpt.tensors) {
    if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    std::visit(
        [&](const auto& t) {
          using V = typename std::decay_t<decltype(t)>::value_type;
          put_le<std::uint8_t>(out, std::is_same_v<V, float> ? 0 : 1);
          put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
          for (const auto d : t.shape()) put_le<std::uint64_t>(out, d);
          write_values(out, t);
        },
        any);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.bytes(4) != std::string(kCheckpointMagic, 4)) throw FormatError("not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto blob_len = in.get<std::uint32_t>();
  for (const auto& [k, v] : parse_key_values(in.bytes(blob_len))) ckpt.meta[k] = v;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint16_t>();
    std::string name = in.bytes(name_len);
    const auto dtype = in.get<std::uint8_t>();
    const auto rank = in.get<std::uint8_t>();
    Shape shape(rank);
    std::uint64_t elements = 1;
    for (auto& d : shape) {
      d = in.get<std::uint64_t>();
      if (d != 0 && elements > (std::uint64_t{1} << 40) / d) {
        throw FormatError("tensor '" + name + "' is implausibly large");
      }
      elements *= d;
    }
    const std::size_t width = dtype == 0 ? 4 : 8;
    if (dtype > 1) throw FormatError("tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
    if (in.remaining() / width < elements) throw FormatError("checkpoint truncated in tensor '" + name + "'");
    if (dtype == 0) ckpt.tensors.emplace_back(std::move(name), read_values<float>(in, std::move(shape)));
    else ckpt.tensors.emplace_back(std::move(name), read_values<double>(in, std::move(shape)));
  }
  if (!in.done()) throw FormatError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

template <typename T>
void put_parameters(Checkpoint& ckpt, const std::string& prefix, const ParameterStore<T>& store) {
  for (const auto& p : store) ckpt.put(prefix + p.name, p.value);
}

template <typename T>
void get_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterStore<T>& store) {
  for (auto& p : store) {
    const Tensor<T>& t = ckpt.tensor<T>(prefix + p.name);
    if (t.shape() != p.value.shape()) {
      throw FormatError("checkpoint tensor '" + prefix + p.name + "' has shape " +
                        shape_string(t.shape()) + ", network expects " + shape_string(p.value.shape()));
    }
    p.value = t;
  }
}

template <typename T>
void put_tensor_map(Checkpoint& ckpt, const std::string& prefix,
                    const std::map<std::string, Tensor<T>>& tensors) {
  for (const auto& [name, t] : tensors) ckpt.put(prefix + name, t);
}

template <typename T>
std::map<std::string, Tensor<T>> get_tensor_map(const Checkpoint& ckpt, const std::string& prefix) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, any] : ckpt.tensors) {
    if (name.rfind(prefix, 0) != 0) continue;
    const auto* t = std::get_if<Tensor<T>>(&any);
    if (!t) throw FormatError("checkpoint tensor '" + name + "' has an unexpected dtype");
    out.emplace(name.substr(prefix.size()), *t);
  }
  return out;
}

#define STYLESPACE_INSTANTIATE(T)                                                                 \
  template const Tensor<T>& Checkpoint::tensor<T>(const std::string&) const;                      \
  template void Checkpoint::put<T>(const std::string&, Tensor<T>);                                \
  template void put_parameters(Checkpoint&, const std::string&, const ParameterStore<T>&);         \
  template void get_parameters(const Checkpoint&, const std::string&, ParameterStore<T>&);         \
  template void put_tensor_map(Checkpoint&, const std::string&, const std::map<std::string, Tensor<T>>&); \
  template std::map<std::string, Tensor<T>> get_tensor_map<T>(const Checkpoint&, const std::string&);

STYLESPACE_INSTANTIATE(float)
STYLESPACE_INSTANTIATE(double)

}  // namespace stylespace
