#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/tensor.hpp"

namespace mrt {

/// Named parameter tensors plus a stable linear index over every scalar.
///
/// Parameters keep insertion order; scalar `k` of the linear index lives in
/// the tensor whose `[offset, offset + size)` range contains `k`.
class ParamStore {
 public:
  static constexpr char kMagic[4] = {'R', 'S', 'Q', '1'};

  std::size_t add(std::string name, Tensor value) {
    if (index_.contains(name)) throw DataError("param store: duplicate parameter '" + name + "'");
    const std::size_t id = tensors_.size();
    index_.emplace(name, id);
    names_.push_back(std::move(name));
    offsets_.push_back(total_);
    total_ += value.size();
    tensors_.push_back(std::move(value));
    return id;
  }

  std::size_t count() const noexcept { return tensors_.size(); }
  /// Number of scalar parameters.
  std::size_t size() const noexcept { return total_; }

  const std::string& name(std::size_t id) const { return names_.at(id); }
  const Tensor& tensor(std::size_t id) const { return tensors_.at(id); }
  Tensor& tensor(std::size_t id) { return tensors_.at(id); }
  std::size_t offset(std::size_t id) const { return offsets_.at(id); }

  std::size_t find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw DataError("param store: no parameter named '" + std::string(name) + "'");
    return it->second;
  }

  double flat(std::size_t k) const {
    const auto [id, local] = locate(k);
    return tensors_[id][local];
  }
  double& flat(std::size_t k) {
    const auto [id, local] = locate(k);
    return tensors_[id][local];
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(total_);
    for (const auto& t : tensors_) out.insert(out.end(), t.storage().begin(), t.storage().end());
    return out;
  }

  /// Adds `scale * delta` (linear order) to every parameter.
  void axpy(double scale, std::span<const double> delta) {
    if (delta.size() != total_) {
      throw ShapeError("param store: update of length " + std::to_string(delta.size()) + " for " +
                       std::to_string(total_) + " parameters");
    }
    std::size_t k = 0;
    for (auto& t : tensors_) {
      for (double& v : t.storage()) v += scale * delta[k++];
    }
  }

  bool all_finite() const noexcept {
    return std::all_of(tensors_.begin(), tensors_.end(), [](const Tensor& t) { return t.all_finite(); });
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

  std::string to_bytes() const {
    std::string out(kMagic, sizeof kMagic);
    for (std::size_t id = 0; id < tensors_.size(); ++id) {
      const auto& t = tensors_[id];
      put_u32(out, static_cast<std::uint32_t>(names_[id].size()));
      out += names_[id];
      put_u32(out, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
      for (double v : t.storage()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
  }

  static ParamStore from_bytes(std::string_view bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
      throw DataError("checkpoint: missing RSQ1 magic");
    }
    ParamStore store;
    std::size_t pos = 4;
    while (pos < bytes.size()) {
      const std::uint32_t name_len = get_u32(bytes, pos);
      need(bytes, pos, name_len);
      std::string name(bytes.substr(pos, name_len));
      pos += name_len;
      const std::uint32_t rank = get_u32(bytes, pos);
      Shape shape(rank);
      for (auto& d : shape) d = get_u32(bytes, pos);
      std::vector<double> data(shape_size(shape));
      need(bytes, pos, data.size() * 8);
      for (auto& v : data) v = std::bit_cast<double>(get_u64(bytes, pos));
      store.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return store;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    const std::string bytes = to_bytes();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("checkpoint: write to '" + path + "' failed");
  }

  static ParamStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_bytes(bytes);
  }

 private:
  std::pair<std::size_t, std::size_t> locate(std::size_t k) const {
    if (k >= total_) throw ShapeError("param store: scalar index " + std::to_string(k) + " out of range");
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), k);
    const auto id = static_cast<std::size_t>(std::distance(offsets_.begin(), it)) - 1;
    return {id, k - offsets_[id]};
  }

  static void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  static void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  static void need(std::string_view bytes, std::size_t pos, std::size_t n) {
    if (pos + n > bytes.size()) throw DataError("checkpoint: truncated record");
  }
  static std::uint32_t get_u32(std::string_view bytes, std::size_t& pos) {
    need(bytes, pos, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  static std::uint64_t get_u64(std::string_view bytes, std::size_t& pos) {
    need(bytes, pos, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }

  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::vector<std::size_t> offsets_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t total_ = 0;
};

}  // namespace mrt
