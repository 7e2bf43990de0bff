#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace minnet::jpeg {

// Quantization tables in natural (row-major) order, entries in [1, 255].
struct QuantTables {
  std::array<int, 64> luma{};
  std::array<int, 64> chroma{};
};

// IJG quality scaling of the Annex-K example tables:
//   scale = 5000/Q for Q < 50, else 200 - 2Q
//   entry = clamp(floor((base * scale + 50) / 100), 1, 255)
QuantTables quality_to_tables(int quality);

struct JpegError : std::runtime_error {
  explicit JpegError(const std::string& what) : std::runtime_error(what) {}
};

// Interleaved 8-bit RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;

  uint8_t at(int y, int x, int c) const { return rgb[(y * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// Baseline sequential JFIF stream: BT.601 YCbCr, 4:2:0 box-average chroma
// subsampling, float 8x8 DCT rounded at quantization, Annex-K Huffman
// tables. Deterministic byte output.
std::vector<uint8_t> encode(const Image& img, int quality);

// Inverse of the encode pipeline (nearest-neighbor chroma upsampling,
// clamped 8-bit output). Only streams from this encoder are supported;
// malformed or truncated input raises JpegError.
Image decode(const std::vector<uint8_t>& stream);

// quality == 100 returns the input unchanged; otherwise one
// decode(encode(.)) round trip.
Image jpeg_round(const Image& img, int quality);

double mse(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);

}  // namespace minnet::jpeg
