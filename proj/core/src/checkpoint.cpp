#include "mixacm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mixacm/error.hpp"

namespace mixacm {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)v, (unsigned char)(v >> 8),
                        (unsigned char)(v >> 16), (unsigned char)(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
  out.write(reinterpret_cast<char*>(b), 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, (std::uint32_t)s.size());
  out.write(s.data(), (std::streamsize)s.size());
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("checkpoint: truncated file " + path);
  return (std::uint32_t)b[0] | ((std::uint32_t)b[1] << 8) | ((std::uint32_t)b[2] << 16) |
         ((std::uint32_t)b[3] << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw DataError("checkpoint: truncated file " + path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= (std::uint64_t)b[i] << (8 * i);
  return v;
}

double get_f64(std::istream& in, const std::string& path) {
  return std::bit_cast<double>(get_u64(in, path));
}

std::string get_string(std::istream& in, const std::string& path) {
  const std::uint32_t len = get_u32(in, path);
  std::string s(len, '\0');
  if (!in.read(s.data(), len)) throw DataError("checkpoint: truncated file " + path);
  return s;
}

void put_tensor(std::ostream& out, const Tensor& t) {
  put_u32(out, (std::uint32_t)t.rank());
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.data()) put_f64(out, v);
}

Tensor get_tensor(std::istream& in, const std::string& path) {
  const std::uint32_t rank = get_u32(in, path);
  Shape shape(rank);
  for (auto& d : shape) d = get_u64(in, path);
  Tensor t(shape);
  for (double& v : t.data()) v = get_f64(in, path);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path + " for writing");
  f.write(Checkpoint::kMagic, 8);
  put_u32(f, Checkpoint::kVersion);

  put_u32(f, (std::uint32_t)ck.spec.in_channels);
  put_u32(f, (std::uint32_t)ck.spec.classes);
  put_u32(f, (std::uint32_t)ck.spec.blocks.size());
  for (const auto& b : ck.spec.blocks) {
    put_u32(f, (std::uint32_t)b.conv_layers);
    put_u32(f, (std::uint32_t)b.channels);
    put_u32(f, (std::uint32_t)b.kernel_size);
    put_u32(f, (std::uint32_t)b.stride);
    f.put(b.use_bias ? 1 : 0);
    f.put(b.use_residual ? 1 : 0);
  }

  put_u32(f, (std::uint32_t)ck.parameters.size());
  for (const auto& [name, t] : ck.parameters) {
    put_string(f, name);
    put_tensor(f, t);
  }

  f.put(ck.velocities ? 1 : 0);
  if (ck.velocities) {
    put_u32(f, (std::uint32_t)ck.velocities->size());
    for (const Tensor& t : *ck.velocities) put_tensor(f, t);
  }

  put_u32(f, (std::uint32_t)ck.rng_states.size());
  for (const auto& s : ck.rng_states) put_string(f, s);
  put_u64(f, ck.epoch);
  if (!f) throw DataError("checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, Checkpoint::kMagic, 8) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  const std::uint32_t version = get_u32(f, path);
  if (version != Checkpoint::kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ck;
  ck.spec.in_channels = (int)get_u32(f, path);
  ck.spec.classes = (int)get_u32(f, path);
  const std::uint32_t nblocks = get_u32(f, path);
  ck.spec.blocks.resize(nblocks);
  for (auto& b : ck.spec.blocks) {
    b.conv_layers = (int)get_u32(f, path);
    b.channels = (int)get_u32(f, path);
    b.kernel_size = (int)get_u32(f, path);
    b.stride = (int)get_u32(f, path);
    b.use_bias = f.get() != 0;
    b.use_residual = f.get() != 0;
  }

  const std::uint32_t nparams = get_u32(f, path);
  for (std::uint32_t i = 0; i < nparams; ++i) {
    std::string name = get_string(f, path);
    ck.parameters.emplace_back(std::move(name), get_tensor(f, path));
  }

  if (f.get() != 0) {
    const std::uint32_t nvel = get_u32(f, path);
    std::vector<Tensor> vel;
    vel.reserve(nvel);
    for (std::uint32_t i = 0; i < nvel; ++i) vel.push_back(get_tensor(f, path));
    ck.velocities = std::move(vel);
  }

  const std::uint32_t nstates = get_u32(f, path);
  for (std::uint32_t i = 0; i < nstates; ++i) ck.rng_states.push_back(get_string(f, path));
  ck.epoch = get_u64(f, path);
  if (!f) throw DataError("checkpoint: truncated file " + path);
  return ck;
}

Checkpoint checkpoint_from_model(const BlockCnn& model) {
  Checkpoint ck;
  ck.spec = model.spec();
  for (const auto& [name, t] : model.parameters())
    ck.parameters.emplace_back(name, t.detached());
  return ck;
}

BlockCnn model_from_checkpoint(const Checkpoint& ck) {
  BlockCnn model(ck.spec, 0);
  model.load_parameters(ck.parameters);
  return model;
}

}  // namespace mixacm
