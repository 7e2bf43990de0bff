#include "minnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace minnet {

namespace {

constexpr char kMagic[4] = {'M', 'N', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::vector<uint8_t>& data;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > data.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  uint8_t u8() {
    need(1);
    return data[pos++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(&data[pos]), n);
    pos += n;
    return s;
  }
};

uint64_t fnv1a(const uint8_t* data, size_t n) {
  uint64_t h = 14695981039346656037ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<uint8_t> serialize(const Checkpoint& ckpt) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  const ModelSpec& s = ckpt.spec;
  put_u8(out, s.family == Family::pyramid_resnet ? 0 : 1);
  put_u32(out, static_cast<uint32_t>(s.n));
  put_u32(out, static_cast<uint32_t>(s.k));
  put_u32(out, static_cast<uint32_t>(s.alpha));
  put_u32(out, static_cast<uint32_t>(s.q));
  put_u32(out, static_cast<uint32_t>(s.num_classes));
  put_u32(out, static_cast<uint32_t>(s.base_channels));
  put_u8(out, s.min_substitution ? 1 : 0);
  put_u8(out, s.widen_rounding == WidenRounding::round ? 0 : 1);
  put_u64(out, s.seed);
  put_u32(out, ckpt.epoch);
  put_u32(out, static_cast<uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    put_u32(out, static_cast<uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<uint32_t>(e.extents.size()));
    size_t numel = 1;
    for (uint32_t x : e.extents) {
      put_u32(out, x);
      numel *= x;
    }
    if (numel != e.values.size())
      throw std::invalid_argument("checkpoint: entry " + e.name + " extent/value mismatch");
    for (float v : e.values) put_f32(out, v);
  }
  put_u64(out, fnv1a(out.data(), out.size()));
  return out;
}

}  // namespace

Checkpoint checkpoint_from_model(Model& model, uint32_t epoch) {
  Checkpoint ckpt;
  ckpt.spec = model.spec();
  ckpt.epoch = epoch;
  for (const auto& p : model.params().items()) {
    CheckpointEntry e;
    e.name = p.name;
    for (int64_t d : p.tensor.shape()) e.extents.push_back(static_cast<uint32_t>(d));
    e.values = p.tensor.values();
    ckpt.entries.push_back(std::move(e));
  }
  for (const auto& b : model.buffers()) {
    CheckpointEntry e;
    e.name = b.name;
    e.extents = {static_cast<uint32_t>(b.data->size())};
    e.values = *b.data;
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

Checkpoint checkpoint_from_snapshot(Model& model, const ParamSnapshot& snap, uint32_t epoch) {
  Checkpoint ckpt = checkpoint_from_model(model, epoch);
  const size_t np = model.params().size();
  if (snap.params.size() != np || snap.buffers.size() != ckpt.entries.size() - np)
    throw std::invalid_argument("checkpoint: snapshot does not match model");
  for (size_t i = 0; i < np; ++i) ckpt.entries[i].values = snap.params[i];
  for (size_t i = 0; i < snap.buffers.size(); ++i) ckpt.entries[np + i].values = snap.buffers[i];
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 + 8) throw std::runtime_error("checkpoint: truncated file");
  const uint64_t stored = [&] {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
    return v;
  }();
  if (fnv1a(bytes.data(), bytes.size() - 8) != stored)
    throw std::runtime_error("checkpoint: checksum mismatch");

  Reader r{bytes};
  if (r.str(4) != std::string(kMagic, 4)) throw std::runtime_error("checkpoint: bad magic");
  if (r.u32() != kVersion) throw std::runtime_error("checkpoint: unsupported version");
  Checkpoint ckpt;
  ckpt.spec.family = r.u8() == 0 ? Family::pyramid_resnet : Family::densenet_bc;
  ckpt.spec.n = static_cast<int>(r.u32());
  ckpt.spec.k = static_cast<int>(r.u32());
  ckpt.spec.alpha = static_cast<int>(r.u32());
  ckpt.spec.q = static_cast<int>(r.u32());
  ckpt.spec.num_classes = static_cast<int>(r.u32());
  ckpt.spec.base_channels = static_cast<int>(r.u32());
  ckpt.spec.min_substitution = r.u8() != 0;
  ckpt.spec.widen_rounding = r.u8() == 0 ? WidenRounding::round : WidenRounding::floor;
  ckpt.spec.seed = r.u64();
  ckpt.epoch = r.u32();
  const uint32_t count = r.u32();
  ckpt.entries.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    auto& e = ckpt.entries[i];
    e.name = r.str(r.u32());
    const uint32_t rank = r.u32();
    size_t numel = 1;
    e.extents.resize(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      e.extents[d] = r.u32();
      numel *= e.extents[d];
    }
    e.values.resize(numel);
    for (size_t v = 0; v < numel; ++v) e.values[v] = r.f32();
  }
  return ckpt;
}

void apply_checkpoint(Model& model, const Checkpoint& ckpt) {
  auto& items = model.params().items();
  auto buffers = model.buffers();
  if (ckpt.entries.size() != items.size() + buffers.size())
    throw std::runtime_error("checkpoint: entry count does not match model");
  for (size_t i = 0; i < items.size(); ++i) {
    const auto& e = ckpt.entries[i];
    if (e.name != items[i].name)
      throw std::runtime_error("checkpoint: entry order mismatch at " + e.name);
    if (e.values.size() != items[i].tensor.values().size())
      throw std::runtime_error("checkpoint: size mismatch at " + e.name);
    items[i].tensor.values() = e.values;
  }
  for (size_t i = 0; i < buffers.size(); ++i) {
    const auto& e = ckpt.entries[items.size() + i];
    if (e.name != buffers[i].name)
      throw std::runtime_error("checkpoint: entry order mismatch at " + e.name);
    if (e.values.size() != buffers[i].data->size())
      throw std::runtime_error("checkpoint: size mismatch at " + e.name);
    *buffers[i].data = e.values;
  }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(ckpt.spec);
  apply_checkpoint(model, ckpt);
  return model;
}

}  // namespace minnet
