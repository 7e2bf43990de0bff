#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "minnet/model.hpp"
#include "minnet/trainer.hpp"

namespace minnet {

// Binary checkpoint: magic "MNCK", format version, ModelSpec echo, epoch,
// then one entry per tensor (name, extents, raw little-endian float32
// payload) in ParamStore order followed by the running-stat buffers, and a
// trailing 64-bit FNV-1a checksum over all preceding bytes. Byte layout is
// host-independent.
struct CheckpointEntry {
  std::string name;
  std::vector<uint32_t> extents;
  std::vector<float> values;
};

struct Checkpoint {
  ModelSpec spec;
  uint32_t epoch = 0;
  std::vector<CheckpointEntry> entries;
};

Checkpoint checkpoint_from_model(Model& model, uint32_t epoch);

// Same entry names/shapes as the model, values taken from the snapshot.
Checkpoint checkpoint_from_snapshot(Model& model, const ParamSnapshot& snap, uint32_t epoch);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies entry values into an already-built model; names and shapes must
// match exactly.
void apply_checkpoint(Model& model, const Checkpoint& ckpt);

// build(ckpt.spec) + apply.
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace minnet
