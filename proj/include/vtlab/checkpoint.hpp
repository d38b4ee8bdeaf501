#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtlab/mlp.hpp"
#include "vtlab/tensor.hpp"

namespace vtlab {

// binary container for named tensors
//   magic "VTLAB1"
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims..., f64 values...
// all integers and floats little-endian
using ModelCheckpoint = std::map<std::string, Tensor>;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated integer");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated value");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const ModelCheckpoint& ckpt) {
  os.write("VTLAB1", 6);
  detail::put_u32(os, static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& [name, tensor] : ckpt) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(tensor.shape.size()));
    for (std::size_t d : tensor.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : tensor.data) detail::put_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline ModelCheckpoint load_checkpoint(std::istream& is) {
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, "VTLAB1", 6) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  ModelCheckpoint ckpt;
  const std::uint32_t count = detail::get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated name");
    const std::uint32_t rank = detail::get_u32(is);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape[r] = detail::get_u32(is);
      n *= shape[r];
    }
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) data[k] = detail::get_f64(is);
    ckpt.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

inline void save_checkpoint_file(const std::string& path, const ModelCheckpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  save_checkpoint(os, ckpt);
}

inline ModelCheckpoint load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  return load_checkpoint(is);
}

// Mlp <-> named tensors; "<prefix>/arch" stores topology so a net can be
// reconstructed without outside knowledge
inline void mlp_to_checkpoint(const Mlp& net, const std::string& prefix, ModelCheckpoint& out) {
  std::vector<double> arch;
  arch.push_back(net.hidden_activation() == Hidden::kTanh ? 0.0 : 1.0);
  arch.push_back(net.output_activation() == Output::kIdentity
                     ? 0.0
                     : (net.output_activation() == Output::kSigmoid ? 1.0 : 2.0));
  arch.push_back(static_cast<double>(net.layer_sizes().size()));
  for (int s : net.layer_sizes()) arch.push_back(static_cast<double>(s));
  arch.push_back(static_cast<double>(net.softmax_blocks().size()));
  for (int b : net.softmax_blocks()) arch.push_back(static_cast<double>(b));
  out.emplace(prefix + "/arch", Tensor({arch.size()}, arch));
  for (int l = 0; l < net.layer_count(); ++l) {
    const auto rows = static_cast<std::size_t>(net.layer_sizes()[l + 1]);
    const auto cols = static_cast<std::size_t>(net.layer_sizes()[l]);
    out.emplace(prefix + "/w" + std::to_string(l), Tensor({rows, cols}, net.weights(l)));
    out.emplace(prefix + "/b" + std::to_string(l), Tensor({rows}, net.biases(l)));
  }
}

inline Mlp mlp_from_checkpoint(const ModelCheckpoint& ckpt, const std::string& prefix) {
  const auto it = ckpt.find(prefix + "/arch");
  if (it == ckpt.end()) throw std::runtime_error("checkpoint: missing " + prefix + "/arch");
  const std::vector<double>& arch = it->second.data;
  std::size_t k = 0;
  const Hidden hidden = arch.at(k++) == 0.0 ? Hidden::kTanh : Hidden::kRelu;
  const double out_code = arch.at(k++);
  const Output output = out_code == 0.0 ? Output::kIdentity
                                        : (out_code == 1.0 ? Output::kSigmoid : Output::kSoftmaxBlocks);
  const auto n_sizes = static_cast<std::size_t>(arch.at(k++));
  std::vector<int> sizes(n_sizes);
  for (auto& s : sizes) s = static_cast<int>(arch.at(k++));
  const auto n_blocks = static_cast<std::size_t>(arch.at(k++));
  std::vector<int> blocks(n_blocks);
  for (auto& b : blocks) b = static_cast<int>(arch.at(k++));
  Mlp net(sizes, hidden, output, blocks);
  for (int l = 0; l < net.layer_count(); ++l) {
    const auto wit = ckpt.find(prefix + "/w" + std::to_string(l));
    const auto bit = ckpt.find(prefix + "/b" + std::to_string(l));
    if (wit == ckpt.end() || bit == ckpt.end())
      throw std::runtime_error("checkpoint: missing layer tensors for " + prefix);
    net.weights(l) = wit->second.data;
    net.biases(l) = bit->second.data;
  }
  return net;
}

}  // namespace vtlab
