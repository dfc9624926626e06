#pragma once

// Binary layout (all integers uint32 little-endian):
//   "CSEG" version
//   repeated until EOF: name_len name rank dims[rank] float32[prod(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "contextseg/ad/params.hpp"
#include "contextseg/ad/tensor.hpp"
#include "contextseg/error.hpp"

namespace cseg::ad {

inline constexpr char kCheckpointMagic[4] = {'C', 'S', 'E', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  }
  return out;
}

inline NamedTensors decode_checkpoint(std::string_view bytes) {
  detail::Reader r(bytes);
  if (std::memcmp(r.take(4), kCheckpointMagic, 4) != 0) throw DataError("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  NamedTensors out;
  while (!r.done()) {
    const auto len = r.u32();
    std::string name(r.take(len), len);
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    Tensor<float> t(shape);
    std::memcpy(t.data(), r.take(t.size() * sizeof(float)), t.size() * sizeof(float));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed for '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

template <typename T>
void append_params(NamedTensors& out, const ParameterStore<T>& store, const std::string& prefix = "") {
  for (std::size_t i = 0; i < store.size(); ++i)
    out.emplace_back(prefix + store[i].name, store[i].value.template cast<float>());
}

template <typename T>
void append_tensors(NamedTensors& out, const std::vector<std::pair<std::string, Tensor<T>>>& extra) {
  for (const auto& [n, t] : extra) out.emplace_back(n, t.template cast<float>());
}

// Name -> tensor lookup over a decoded checkpoint.
class CheckpointView {
 public:
  explicit CheckpointView(NamedTensors tensors) : tensors_(std::move(tensors)) {
    for (std::size_t i = 0; i < tensors_.size(); ++i) index_.emplace(tensors_[i].first, i);
  }

  const Tensor<float>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &tensors_[it->second].second;
  }

  template <typename T>
  void load_params(ParameterStore<T>& store, const std::string& prefix = "") const {
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store[i];
      const auto* t = find(prefix + p.name);
      if (!t) throw DataError("checkpoint lacks parameter '" + prefix + p.name + "'");
      if (t->shape() != p.value.shape())
        throw DataError("checkpoint shape " + shape_str(t->shape()) + " for '" + p.name + "' does not match " +
                        shape_str(p.value.shape()));
      p.value = t->template cast<T>();
    }
  }

  // Lookup functor converting to T, for Adam::import_state.
  template <typename T>
  auto lookup() const {
    return [this, cache = std::make_shared<std::map<std::string, Tensor<T>>>()](const std::string& n) -> const Tensor<T>* {
      const auto* t = find(n);
      if (!t) return nullptr;
      auto& slot = (*cache)[n];
      slot = t->template cast<T>();
      return &slot;
    };
  }

  const NamedTensors& tensors() const { return tensors_; }

 private:
  NamedTensors tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace cseg::ad
