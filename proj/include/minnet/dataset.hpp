#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace minnet {

// One 32x32 image in the canonical binary layout: channel-planar RGB,
// 1024 bytes per channel, plus a class label.
struct ImageRecord {
  static constexpr int kSide = 32;
  static constexpr int kPixelsPerChannel = kSide * kSide;
  static constexpr int kBytes = 3 * kPixelsPerChannel;

  std::array<uint8_t, kBytes> pixels{};
  uint8_t label = 0;

  uint8_t at(int channel, int y, int x) const {
    return pixels[channel * kPixelsPerChannel + y * kSide + x];
  }
  void set(int channel, int y, int x, uint8_t v) {
    pixels[channel * kPixelsPerChannel + y * kSide + x] = v;
  }

  bool operator==(const ImageRecord&) const = default;
};

// Per-channel statistics on the [0, 1] pixel scale (population std).
struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

struct Cifar10 {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> test;
};

// Parses a whole batch file of 3073-byte records (1 label + 3072 pixels).
// Truncated files and label bytes > 9 are errors naming the offset.
std::vector<ImageRecord> read_batch_file(const std::string& path);

void write_batch_file(const std::string& path, const std::vector<ImageRecord>& records);

// Loads the canonical directory: data_batch_1..5.bin and test_batch.bin,
// enforcing the 50000/10000 record counts.
Cifar10 load_cifar10(const std::string& dir);

ChannelStats compute_channel_stats(const std::vector<ImageRecord>& records);

// Seeded class-conditional images: class-dependent mean color plus an
// oriented sinusoid pattern with per-image phase and pixel noise. Balanced
// labels, learnable by a tiny model, and textured enough that JPEG
// compression at low quality visibly damages them.
std::vector<ImageRecord> synthetic_dataset(int n, int classes, uint64_t seed);

// FNV-1a over labels and pixel bytes in record order.
uint64_t dataset_hash(const std::vector<ImageRecord>& records);

}  // namespace minnet
