#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "stylespace/tensor/tape.hpp"
#include "stylespace/tensor/tensor.hpp"

namespace stylespace {

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'G', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

/// Named tensors plus a key=value metadata blob. Tensor order is preserved, so
/// serializing the same content twice yields identical bytes.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, AnyTensor>> tensors;

  bool has(const std::string& name) const;
  const AnyTensor& at(const std::string& name) const;
  /// Throws FormatError when missing or stored with another dtype.
  template <typename T>
  const Tensor<T>& tensor(const std::string& name) const;
  template <typename T>
  void put(const std::string& name, Tensor<T> value);

  const std::string& meta_at(const std::string& key) const;
  std::uint64_t meta_u64(const std::string& key) const;
  double meta_double(const std::string& key) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, unsupported version, unknown dtype,
/// truncation or trailing bytes.
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Stores every parameter as "<prefix><name>".
template <typename T>
void put_parameters(Checkpoint& ckpt, const std::string& prefix, const ParameterStore<T>& store);
/// Overwrites every parameter from "<prefix><name>"; shapes must match.
template <typename T>
void get_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterStore<T>& store);

template <typename T>
void put_tensor_map(Checkpoint& ckpt, const std::string& prefix,
                    const std::map<std::string, Tensor<T>>& tensors);
/// Collects every tensor whose name starts with `prefix`, keyed by the remainder.
template <typename T>
std::map<std::string, Tensor<T>> get_tensor_map(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace stylespace
