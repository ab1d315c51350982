#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mvod/graph.hpp"
#include "mvod/tensor.hpp"

namespace mvod {

/// Ordered name -> tensor map. Names follow "<layer>/<slot>" with slots
/// weight, bias, bn_gamma, bn_beta, bn_mean, bn_var.
template <typename T>
class BasicParamStore {
 public:
  void set(const std::string& name, BasicTensor<T> value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const BasicTensor<T>& at(const std::string& name) const;
  BasicTensor<T>& at(const std::string& name);
  const BasicTensor<T>* find(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  /// Total number of stored scalars.
  std::size_t scalar_count() const;

  const std::vector<std::pair<std::string, BasicTensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, BasicTensor<T>>>& entries() { return entries_; }

  /// Entries whose names start with `prefix`, with the prefix stripped.
  BasicParamStore extract(const std::string& prefix) const;

  /// Copies every entry of `other`, prefixing names with `prefix`.
  void merge(const BasicParamStore& other, const std::string& prefix = "");

  template <typename U>
  BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const auto& [name, t] : entries_) out.set(name, t.template cast<U>());
    return out;
  }

 private:
  std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

using ParamStore = BasicParamStore<float>;
using ParamStoreD = BasicParamStore<double>;

inline std::string param_name(const std::string& layer, const char* slot) {
  return layer + "/" + slot;
}

/// Creates parameters for every Conv / Deconv / FullyConnected / BatchNorm
/// layer of `graph`: He-uniform weights (bound sqrt(6 / fan_in)), zero bias,
/// identity batch norm (gamma 1, beta 0, mean 0, var 1).
/// `input_channels` gives the channel count of each Input layer.
ParamStore init_params(const NetworkGraph& graph, const std::map<std::string, int>& input_channels,
                       std::mt19937_64& rng);

/// Shapes of every parameter slot a graph needs, in creation order.
std::vector<std::pair<std::string, Shape>> param_shapes(
    const NetworkGraph& graph, const std::map<std::string, int>& input_channels);

// Checkpoint file: "MVODCKPT", u32 version, u32 entry count, then per entry
// u32 name length, name bytes, 4 x u32 dims, float32 payload. Little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
ParamStore load_checkpoint(const std::filesystem::path& path);

/// Throws std::invalid_argument listing the first missing or mis-shaped slot.
void validate_params(const NetworkGraph& graph, const std::map<std::string, int>& input_channels,
                     const ParamStore& store);

extern template class BasicParamStore<float>;
extern template class BasicParamStore<double>;

}  // namespace mvod
