#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "l1bsr/core/autograd.hpp"
#include "l1bsr/core/errors.hpp"
#include "l1bsr/core/rng.hpp"

namespace l1bsr::nn {

/// Ordered, named parameter tensors. Copies share storage; use clone() for
/// an independent snapshot.
template <class T>
class ParamSet {
 public:
  const Var<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, parameter(std::move(value)));
    return items_.back().second;
  }

  const Var<T>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter " + name);
    return items_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [k, v] : items_) n += v.value().numel();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& [k, v] : items_) v.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& [k, v] : items_) v.zero_grad();
  }

  ParamSet clone() const {
    ParamSet out;
    for (const auto& [k, v] : items_) {
      out.add(k, v.value());
      out.items_.back().second.set_requires_grad(v.requires_grad());
    }
    return out;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [k, v] : items_) out.add(k, v.value().template cast<U>());
    return out;
  }

  /// Overwrites values (shapes must match) without touching graph state.
  void assign(const ParamSet& other) {
    for (auto& [k, v] : items_) {
      const auto& src = other[k].value();
      if (!(src.shape() == v.value().shape())) throw DataError("parameter shape mismatch for " + k);
      v.mutable_value() = src;
    }
  }

  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
    };
    for (const auto& [k, v] : items_) {
      mix(k.data(), k.size());
      const Shape s = v.value().shape();
      mix(&s, sizeof s);
      mix(v.value().data(), v.value().numel() * sizeof(T));
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform Glorot initialization for a conv weight [out, in, k, k].
template <class T>
Tensor<T> xavier_uniform(Rng& rng, Shape s) {
  const double fan_in = static_cast<double>(s.c) * s.h * s.w;
  const double fan_out = static_cast<double>(s.n) * s.h * s.w;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<T> t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   bytes 0..7   "L1BSRCK1"
//   bytes 8..15  header length L, little-endian u64
//   next L bytes JSON header; header["tensors"] lists {name, shape, offset}
//   remainder    float32 little-endian tensor data

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& tensor(const std::string& name) const {
    for (const auto& [k, t] : tensors)
      if (k == name) return t;
    throw DataError("checkpoint has no tensor " + name);
  }
  bool has_tensor(const std::string& name) const {
    for (const auto& [k, t] : tensors)
      if (k == name) return true;
    return false;
  }
};

inline constexpr char kCheckpointMagic[8] = {'L', '1', 'B', 'S', 'R', 'C', 'K', '1'};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header = ck.header;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [k, t] : ck.tensors) {
    index.push_back({{"name", k}, {"shape", {t.n(), t.c(), t.h(), t.w()}}, {"offset", offset}});
    offset += t.numel();
  }
  header["tensors"] = index;
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, 8);
    const std::uint64_t n = text.size();
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((n >> (8 * i)) & 0xff));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [k, t] : ck.tensors)
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!os) throw DataError("short write to checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError(path.string() + " is not a checkpoint");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(static_cast<unsigned char>(is.get())) << (8 * i);
  if (!is || n > (1u << 30)) throw DataError(path.string() + ": corrupt checkpoint header");
  std::string text(n, '\0');
  is.read(text.data(), static_cast<std::streamsize>(n));
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(text);
    for (const auto& e : ck.header.at("tensors")) {
      const auto s = e.at("shape").get<std::array<int, 4>>();
      Tensor<float> t(s[0], s[1], s[2], s[3]);
      is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
      if (!is) throw DataError(path.string() + ": truncated checkpoint");
      ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(path.string() + ": malformed checkpoint header: " + ex.what());
  }
  ck.header.erase("tensors");
  return ck;
}

inline void put_params(Checkpoint& ck, const ParamSet<float>& p, const std::string& prefix = "") {
  for (const auto& [k, v] : p.items()) ck.tensors.emplace_back(prefix + k, v.value());
}

inline void get_params(const Checkpoint& ck, ParamSet<float>& p, const std::string& prefix = "") {
  for (const auto& [k, v] : p.items()) {
    const auto& t = ck.tensor(prefix + k);
    if (!(t.shape() == v.value().shape()))
      throw DataError("checkpoint tensor " + prefix + k + " has shape " + t.shape().str() +
                      ", expected " + v.value().shape().str());
    Var<float> handle = v;  // shares the node
    handle.mutable_value() = t;
  }
}

}  // namespace l1bsr::nn
