#include "mvod/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mvod/tensor_io.hpp"

namespace mvod {

template <typename T>
void BasicParamStore<T>::set(const std::string& name, BasicTensor<T> value) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].second = std::move(value);
    return;
  }
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
}

template <typename T>
const BasicTensor<T>& BasicParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
BasicTensor<T>& BasicParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
const BasicTensor<T>* BasicParamStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

template <typename T>
std::size_t BasicParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <typename T>
void BasicParamStore<T>::merge(const BasicParamStore& other, const std::string& prefix) {
  for (const auto& [name, t] : other.entries_) set(prefix + name, t);
}

template <typename T>
BasicParamStore<T> BasicParamStore<T>::extract(const std::string& prefix) const {
  BasicParamStore out;
  for (const auto& [name, t] : entries_)
    if (name.starts_with(prefix)) out.set(name.substr(prefix.size()), t);
  return out;
}

template class BasicParamStore<float>;
template class BasicParamStore<double>;

std::vector<std::pair<std::string, Shape>> param_shapes(
    const NetworkGraph& graph, const std::map<std::string, int>& input_channels) {
  std::map<std::string, Shape> in;
  for (const auto& l : graph.layers()) {
    if (l.kind != LayerKind::Input) continue;
    auto it = input_channels.find(l.name);
    const int c = it != input_channels.end() ? it->second : l.out_channels;
    if (c <= 0) throw std::invalid_argument("no channel count for input '" + l.name + "'");
    in[l.name] = {1, c, 1, 1};
  }
  const auto shapes = infer_shapes(graph, in);

  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& l : graph.layers()) {
    const int in_c = l.inputs.empty() ? 0 : shapes.at(l.inputs.front()).c;
    const int out_c = shapes.at(l.name).c;
    switch (l.kind) {
      case LayerKind::Conv: {
        const int groups = l.depthwise ? in_c : l.groups;
        out.push_back({param_name(l.name, "weight"), {out_c, in_c / groups, l.kernel, l.kernel}});
        break;
      }
      case LayerKind::Deconv:
        out.push_back({param_name(l.name, "weight"), {in_c, out_c, l.kernel, l.kernel}});
        break;
      case LayerKind::FullyConnected: {
        const Shape& s = shapes.at(l.inputs.front());
        out.push_back({param_name(l.name, "weight"), {out_c, s.c * s.h * s.w, 1, 1}});
        break;
      }
      default:
        break;
    }
    const bool has_weights = l.kind == LayerKind::Conv || l.kind == LayerKind::Deconv ||
                             l.kind == LayerKind::FullyConnected;
    if (has_weights && l.bias) out.push_back({param_name(l.name, "bias"), {out_c, 1, 1, 1}});
    if ((has_weights && l.batch_norm) || l.kind == LayerKind::BatchNorm) {
      for (const char* slot : {"bn_gamma", "bn_beta", "bn_mean", "bn_var"})
        out.push_back({param_name(l.name, slot), {out_c, 1, 1, 1}});
    }
  }
  return out;
}

ParamStore init_params(const NetworkGraph& graph, const std::map<std::string, int>& input_channels,
                       std::mt19937_64& rng) {
  ParamStore store;
  for (const auto& [name, shape] : param_shapes(graph, input_channels)) {
    Tensor t(shape);
    const auto slot = name.substr(name.rfind('/') + 1);
    if (slot == "weight") {
      const bool deconv = graph.at(name.substr(0, name.rfind('/'))).kind == LayerKind::Deconv;
      const int fan_in = deconv ? shape.n * shape.h * shape.w : shape.c * shape.h * shape.w;
      const double bound = std::sqrt(6.0 / fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.values()) v = static_cast<float>(dist(rng));
    } else if (slot == "bn_gamma" || slot == "bn_var") {
      t.fill(1.f);
    }
    store.set(name, std::move(t));
  }
  return store;
}

void validate_params(const NetworkGraph& graph, const std::map<std::string, int>& input_channels,
                     const ParamStore& store) {
  for (const auto& [name, shape] : param_shapes(graph, input_channels)) {
    const Tensor* t = store.find(name);
    if (!t) throw std::invalid_argument("checkpoint lacks parameter '" + name + "'");
    if (!(t->shape() == shape))
      throw std::invalid_argument("parameter '" + name + "' has shape " + t->shape().str() +
                                  ", expected " + shape.str());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write("MVODCKPT", 8);
  le::put_u32(os, kCheckpointVersion);
  le::put_u32(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store.entries()) {
    le::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    le::put_u32(os, static_cast<std::uint32_t>(t.n()));
    le::put_u32(os, static_cast<std::uint32_t>(t.c()));
    le::put_u32(os, static_cast<std::uint32_t>(t.h()));
    le::put_u32(os, static_cast<std::uint32_t>(t.w()));
    for (float v : t.values()) le::put_f32(os, v);
  }
  if (!os) throw FormatError("checkpoint write failed: " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "MVODCKPT", 8) != 0)
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = le::get_u32(is);
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = le::get_u32(is);
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = le::get_u32(is);
    if (len > 4096) throw FormatError(path.string() + ": corrupt entry name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError(path.string() + ": truncated");
    Shape s;
    s.n = static_cast<int>(le::get_u32(is));
    s.c = static_cast<int>(le::get_u32(is));
    s.h = static_cast<int>(le::get_u32(is));
    s.w = static_cast<int>(le::get_u32(is));
    if (!s.valid()) throw FormatError(path.string() + ": bad shape for '" + name + "'");
    Tensor t(s);
    for (auto& v : t.values()) v = le::get_f32(is);
    store.set(name, std::move(t));
  }
  return store;
}

}  // namespace mvod
