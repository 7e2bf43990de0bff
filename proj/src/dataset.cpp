#include "minnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "minnet/rng.hpp"

namespace minnet {

namespace {
constexpr size_t kRecordBytes = 1 + ImageRecord::kBytes;  // label byte + pixel planes
}

std::vector<ImageRecord> read_batch_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open batch file: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kRecordBytes != 0) {
    const size_t offset = bytes.size() - bytes.size() % kRecordBytes;
    throw std::runtime_error("truncated record at offset " + std::to_string(offset) + " in " +
                             path);
  }
  const size_t count = bytes.size() / kRecordBytes;
  std::vector<ImageRecord> records(count);
  for (size_t i = 0; i < count; ++i) {
    const auto* p = reinterpret_cast<const uint8_t*>(bytes.data()) + i * kRecordBytes;
    if (p[0] > 9)
      throw std::runtime_error("label byte out of range at offset " +
                               std::to_string(i * kRecordBytes) + " in " + path);
    records[i].label = p[0];
    std::copy_n(p + 1, ImageRecord::kBytes, records[i].pixels.begin());
  }
  return records;
}

void write_batch_file(const std::string& path, const std::vector<ImageRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write batch file: " + path);
  for (const auto& r : records) {
    out.put(static_cast<char>(r.label));
    out.write(reinterpret_cast<const char*>(r.pixels.data()), ImageRecord::kBytes);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Cifar10 load_cifar10(const std::string& dir) {
  Cifar10 ds;
  for (int b = 1; b <= 5; ++b) {
    const std::string path = dir + "/data_batch_" + std::to_string(b) + ".bin";
    auto records = read_batch_file(path);
    if (records.size() != 10000)
      throw std::runtime_error(path + ": expected 10000 records, found " +
                               std::to_string(records.size()));
    ds.train.insert(ds.train.end(), records.begin(), records.end());
  }
  ds.test = read_batch_file(dir + "/test_batch.bin");
  if (ds.train.size() != 50000 || ds.test.size() != 10000)
    throw std::runtime_error("dataset count check failed: " + std::to_string(ds.train.size()) +
                             "/" + std::to_string(ds.test.size()));
  return ds;
}

ChannelStats compute_channel_stats(const std::vector<ImageRecord>& records) {
  if (records.empty()) throw std::invalid_argument("channel stats: empty record set");
  ChannelStats st;
  const double count = static_cast<double>(records.size()) * ImageRecord::kPixelsPerChannel;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (const auto& r : records)
      for (int i = 0; i < ImageRecord::kPixelsPerChannel; ++i)
        sum += r.pixels[c * ImageRecord::kPixelsPerChannel + i] / 255.0;
    const double mean = sum / count;
    double var = 0.0;
    for (const auto& r : records)
      for (int i = 0; i < ImageRecord::kPixelsPerChannel; ++i) {
        const double d = r.pixels[c * ImageRecord::kPixelsPerChannel + i] / 255.0 - mean;
        var += d * d;
      }
    st.mean[c] = mean;
    st.std[c] = std::sqrt(var / count);
    if (!(st.std[c] > 0.0))
      throw std::runtime_error("channel stats: channel " + std::to_string(c) +
                               " has zero variance");
  }
  return st;
}

std::vector<ImageRecord> synthetic_dataset(int n, int classes, uint64_t seed) {
  if (classes < 1 || n < classes) throw std::invalid_argument("synthetic_dataset: need n >= classes");
  std::vector<ImageRecord> records(static_cast<size_t>(n));
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    ImageRecord& r = records[static_cast<size_t>(i)];
    const int cls = i % classes;
    r.label = static_cast<uint8_t>(cls);
    Rng rng(splitmix64(seed + 0xb5297a4dULL * static_cast<uint64_t>(i)));

    double base[3];
    for (int c = 0; c < 3; ++c)
      base[c] = 128.0 + 80.0 * std::sin(two_pi * cls / classes + c * two_pi / 3.0);
    const double theta = two_pi * 0.5 * cls / classes;
    const double wavelength = 4.0 + 2.0 * (cls % 4);
    const double omega = two_pi / wavelength;
    const double phase = two_pi * rng.uniform();
    const double dir_x = std::cos(theta), dir_y = std::sin(theta);

    for (int y = 0; y < ImageRecord::kSide; ++y) {
      for (int x = 0; x < ImageRecord::kSide; ++x) {
        const double wave = std::sin(omega * (dir_x * x + dir_y * y) + phase);
        const double noise = 10.0 * rng.normal();
        for (int c = 0; c < 3; ++c) {
          const double v = base[c] + 40.0 * wave + noise;
          r.set(c, y, x, static_cast<uint8_t>(std::clamp(v, 0.0, 255.0)));
        }
      }
    }
  }
  return records;
}

uint64_t dataset_hash(const std::vector<ImageRecord>& records) {
  uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (const auto& r : records) {
    mix(r.label);
    for (uint8_t b : r.pixels) mix(b);
  }
  return h;
}

}  // namespace minnet
