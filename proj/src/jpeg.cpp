#include "minnet/jpeg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace minnet::jpeg {

namespace {

// Annex-K example quantization tables, natural order.
constexpr std::array<int, 64> kBaseLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kBaseChroma = {
    17, 18, 24, 47, 99, 99, 99, 99,  //
    18, 21, 26, 66, 99, 99, 99, 99,  //
    24, 26, 56, 99, 99, 99, 99, 99,  //
    47, 66, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99};

// Natural index of the k-th zigzag position.
constexpr std::array<int, 64> kZigZag = {
    0,  1,  8,  16, 9,  2,  3,  10,  //
    17, 24, 32, 25, 18, 11, 4,  5,   //
    12, 19, 26, 33, 40, 48, 41, 34,  //
    27, 20, 13, 6,  7,  14, 21, 28,  //
    35, 42, 49, 56, 57, 50, 43, 36,  //
    29, 22, 15, 23, 30, 37, 44, 51,  //
    58, 59, 52, 45, 38, 31, 39, 46,  //
    53, 60, 61, 54, 47, 55, 62, 63};

// Standard Huffman table specs (bits-per-length counts plus symbol lists).
constexpr uint8_t kDcLumaBits[16] = {0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
constexpr uint8_t kDcValues[12] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
constexpr uint8_t kDcChromaBits[16] = {0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
constexpr uint8_t kAcLumaBits[16] = {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 125};
constexpr uint8_t kAcLumaValues[162] = {
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61,
    0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52,
    0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25,
    0x26, 0x27, 0x28, 0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45,
    0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64,
    0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x83,
    0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99,
    0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
    0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3,
    0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8,
    0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA};
constexpr uint8_t kAcChromaBits[16] = {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 119};
constexpr uint8_t kAcChromaValues[162] = {
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61,
    0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33,
    0x52, 0xF0, 0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18,
    0x19, 0x1A, 0x26, 0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44,
    0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63,
    0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A,
    0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97,
    0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
    0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA,
    0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7,
    0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA};

// Orthonormal 8x8 DCT basis: M[u][x] = c(u)/2 * cos((2x+1)u*pi/16).
struct DctBasis {
  double m[8][8];
  DctBasis() {
    const double pi = 3.14159265358979323846;
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
      for (int x = 0; x < 8; ++x) m[u][x] = 0.5 * cu * std::cos((2 * x + 1) * u * pi / 16.0);
    }
  }
};

const DctBasis& dct_basis() {
  static const DctBasis basis;
  return basis;
}

void fdct8x8(const double* in, double* out) {
  const auto& M = dct_basis().m;
  double tmp[64];
  // rows: tmp = in * M^T
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += in[y * 8 + x] * M[u][x];
      tmp[y * 8 + u] = acc;
    }
  // cols: out = M * tmp
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y) acc += M[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = acc;
    }
}

void idct8x8(const double* in, double* out) {
  const auto& M = dct_basis().m;
  double tmp[64];
  // tmp = M^T * in
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int v = 0; v < 8; ++v) acc += M[v][y] * in[v * 8 + u];
      tmp[y * 8 + u] = acc;
    }
  // out = tmp * M
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) acc += tmp[y * 8 + u] * M[u][x];
      out[y * 8 + x] = acc;
    }
}

// --------------------------------------------------------------------------
// Huffman coding

struct HuffCode {
  uint16_t code = 0;
  uint8_t length = 0;
};

// Canonical code assignment from a (bits, values) table spec.
void build_encode_table(const uint8_t bits[16], const uint8_t* values, size_t value_count,
                        HuffCode table[256]) {
  uint16_t code = 0;
  size_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    for (int i = 0; i < bits[len - 1]; ++i) {
      table[values[k]] = {code, static_cast<uint8_t>(len)};
      ++code;
      ++k;
    }
    code <<= 1;
  }
  (void)value_count;
}

struct BitWriter {
  std::vector<uint8_t>& out;
  uint32_t buffer = 0;
  int bit_count = 0;

  explicit BitWriter(std::vector<uint8_t>& o) : out(o) {}

  void put(uint16_t code, int length) {
    buffer = (buffer << length) | code;
    bit_count += length;
    while (bit_count >= 8) {
      bit_count -= 8;
      const uint8_t byte = static_cast<uint8_t>((buffer >> bit_count) & 0xFF);
      out.push_back(byte);
      if (byte == 0xFF) out.push_back(0x00);  // stuffing
    }
  }

  void flush() {
    if (bit_count > 0) put(static_cast<uint16_t>((1 << (8 - bit_count)) - 1), 8 - bit_count);
  }
};

int magnitude_category(int v) {
  int a = v < 0 ? -v : v;
  int bits = 0;
  while (a) {
    ++bits;
    a >>= 1;
  }
  return bits;
}

// --------------------------------------------------------------------------
// color conversion (BT.601, JFIF full range)

inline void rgb_to_ycbcr(double r, double g, double b, double& y, double& cb, double& cr) {
  y = 0.299 * r + 0.587 * g + 0.114 * b;
  cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
  cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
}

inline uint8_t clamp_byte(double v) {
  const long r = std::lround(v);
  return static_cast<uint8_t>(std::clamp(r, 0L, 255L));
}

void write_u16be(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v & 0xFF));
}

void write_marker(std::vector<uint8_t>& out, uint8_t id, uint16_t length) {
  out.push_back(0xFF);
  out.push_back(id);
  write_u16be(out, length);
}

// Encodes one quantized 8x8 block (natural order coefficients).
void encode_block(BitWriter& bw, const int* coef, int& dc_pred, const HuffCode* dc_table,
                  const HuffCode* ac_table) {
  const int diff = coef[0] - dc_pred;
  dc_pred = coef[0];
  const int dc_cat = magnitude_category(diff);
  bw.put(dc_table[dc_cat].code, dc_table[dc_cat].length);
  if (dc_cat > 0) {
    const int bits = diff >= 0 ? diff : diff + (1 << dc_cat) - 1;
    bw.put(static_cast<uint16_t>(bits & ((1 << dc_cat) - 1)), dc_cat);
  }
  int run = 0;
  for (int k = 1; k < 64; ++k) {
    const int v = coef[kZigZag[k]];
    if (v == 0) {
      ++run;
      continue;
    }
    while (run > 15) {
      bw.put(ac_table[0xF0].code, ac_table[0xF0].length);  // ZRL
      run -= 16;
    }
    const int cat = magnitude_category(v);
    const int symbol = (run << 4) | cat;
    bw.put(ac_table[symbol].code, ac_table[symbol].length);
    const int bits = v >= 0 ? v : v + (1 << cat) - 1;
    bw.put(static_cast<uint16_t>(bits & ((1 << cat) - 1)), cat);
    run = 0;
  }
  if (run > 0) bw.put(ac_table[0x00].code, ac_table[0x00].length);  // EOB
}

// DCT + quantization for the 8x8 tile at (bx, by) of a level-shifted plane.
void quantize_block(const std::vector<double>& plane, int plane_w, int bx, int by,
                    const std::array<int, 64>& qt, int* coef) {
  double block[64], freq[64];
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) block[y * 8 + x] = plane[(by + y) * plane_w + bx + x] - 128.0;
  fdct8x8(block, freq);
  for (int i = 0; i < 64; ++i)
    coef[i] = static_cast<int>(std::lround(freq[i] / static_cast<double>(qt[i])));
}

}  // namespace

QuantTables quality_to_tables(int quality) {
  if (quality < 1 || quality > 100) throw JpegError("quality must be in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  QuantTables qt;
  for (int i = 0; i < 64; ++i) {
    qt.luma[i] = std::clamp((kBaseLuma[i] * scale + 50) / 100, 1, 255);
    qt.chroma[i] = std::clamp((kBaseChroma[i] * scale + 50) / 100, 1, 255);
  }
  return qt;
}

std::vector<uint8_t> encode(const Image& img, int quality) {
  if (img.width < 1 || img.height < 1 ||
      img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3)
    throw JpegError("encode: bad image dimensions");
  const QuantTables qt = quality_to_tables(quality);

  // YCbCr planes padded to full 16x16 MCUs by edge replication.
  const int pw = (img.width + 15) / 16 * 16;
  const int ph = (img.height + 15) / 16 * 16;
  std::vector<double> yp(static_cast<size_t>(pw) * ph);
  std::vector<double> cbp(yp.size()), crp(yp.size());
  for (int y = 0; y < ph; ++y) {
    const int sy = std::min(y, img.height - 1);
    for (int x = 0; x < pw; ++x) {
      const int sx = std::min(x, img.width - 1);
      double Y, Cb, Cr;
      rgb_to_ycbcr(img.at(sy, sx, 0), img.at(sy, sx, 1), img.at(sy, sx, 2), Y, Cb, Cr);
      yp[y * pw + x] = Y;
      cbp[y * pw + x] = Cb;
      crp[y * pw + x] = Cr;
    }
  }
  // 4:2:0 subsampling, box average.
  const int cw = pw / 2, ch = ph / 2;
  std::vector<double> cb2(static_cast<size_t>(cw) * ch), cr2(cb2.size());
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) {
      const int sy = 2 * y, sx = 2 * x;
      cb2[y * cw + x] = 0.25 * (cbp[sy * pw + sx] + cbp[sy * pw + sx + 1] +
                                cbp[(sy + 1) * pw + sx] + cbp[(sy + 1) * pw + sx + 1]);
      cr2[y * cw + x] = 0.25 * (crp[sy * pw + sx] + crp[sy * pw + sx + 1] +
                                crp[(sy + 1) * pw + sx] + crp[(sy + 1) * pw + sx + 1]);
    }

  std::vector<uint8_t> out;
  out.reserve(2048);
  // SOI
  out.push_back(0xFF);
  out.push_back(0xD8);
  // APP0 / JFIF 1.1, no density, no thumbnail
  write_marker(out, 0xE0, 16);
  const char jfif[5] = {'J', 'F', 'I', 'F', '\0'};
  out.insert(out.end(), jfif, jfif + 5);
  out.push_back(1);
  out.push_back(1);
  out.push_back(0);
  write_u16be(out, 1);
  write_u16be(out, 1);
  out.push_back(0);
  out.push_back(0);
  // DQT: both tables, zigzag order
  write_marker(out, 0xDB, 2 + 2 * 65);
  out.push_back(0x00);
  for (int i = 0; i < 64; ++i) out.push_back(static_cast<uint8_t>(qt.luma[kZigZag[i]]));
  out.push_back(0x01);
  for (int i = 0; i < 64; ++i) out.push_back(static_cast<uint8_t>(qt.chroma[kZigZag[i]]));
  // SOF0: baseline, 8 bit, 3 components, Y 2x2 / Cb 1x1 / Cr 1x1
  write_marker(out, 0xC0, 2 + 6 + 3 * 3);
  out.push_back(8);
  write_u16be(out, static_cast<uint16_t>(img.height));
  write_u16be(out, static_cast<uint16_t>(img.width));
  out.push_back(3);
  out.push_back(1);
  out.push_back(0x22);
  out.push_back(0);
  out.push_back(2);
  out.push_back(0x11);
  out.push_back(1);
  out.push_back(3);
  out.push_back(0x11);
  out.push_back(1);
  // DHT: all four standard tables in one segment
  write_marker(out, 0xC4, static_cast<uint16_t>(2 + 4 * 17 + 12 + 162 + 12 + 162));
  auto emit_table = [&out](uint8_t cls_id, const uint8_t bits[16], const uint8_t* values,
                           size_t count) {
    out.push_back(cls_id);
    out.insert(out.end(), bits, bits + 16);
    out.insert(out.end(), values, values + count);
  };
  emit_table(0x00, kDcLumaBits, kDcValues, 12);
  emit_table(0x10, kAcLumaBits, kAcLumaValues, 162);
  emit_table(0x01, kDcChromaBits, kDcValues, 12);
  emit_table(0x11, kAcChromaBits, kAcChromaValues, 162);
  // SOS
  write_marker(out, 0xDA, 2 + 1 + 3 * 2 + 3);
  out.push_back(3);
  out.push_back(1);
  out.push_back(0x00);
  out.push_back(2);
  out.push_back(0x11);
  out.push_back(3);
  out.push_back(0x11);
  out.push_back(0);
  out.push_back(63);
  out.push_back(0);

  // entropy-coded data
  HuffCode dc_luma[256] = {}, ac_luma[256] = {}, dc_chroma[256] = {}, ac_chroma[256] = {};
  build_encode_table(kDcLumaBits, kDcValues, 12, dc_luma);
  build_encode_table(kAcLumaBits, kAcLumaValues, 162, ac_luma);
  build_encode_table(kDcChromaBits, kDcValues, 12, dc_chroma);
  build_encode_table(kAcChromaBits, kAcChromaValues, 162, ac_chroma);

  BitWriter bw(out);
  int pred_y = 0, pred_cb = 0, pred_cr = 0;
  int coef[64];
  for (int my = 0; my < ph / 16; ++my) {
    for (int mx = 0; mx < pw / 16; ++mx) {
      for (int sub = 0; sub < 4; ++sub) {
        const int bx = mx * 16 + (sub % 2) * 8;
        const int by = my * 16 + (sub / 2) * 8;
        quantize_block(yp, pw, bx, by, qt.luma, coef);
        encode_block(bw, coef, pred_y, dc_luma, ac_luma);
      }
      quantize_block(cb2, cw, mx * 8, my * 8, qt.chroma, coef);
      encode_block(bw, coef, pred_cb, dc_chroma, ac_chroma);
      quantize_block(cr2, cw, mx * 8, my * 8, qt.chroma, coef);
      encode_block(bw, coef, pred_cr, dc_chroma, ac_chroma);
    }
  }
  bw.flush();
  // EOI
  out.push_back(0xFF);
  out.push_back(0xD9);
  return out;
}

// ---------------------------------------------------------------------------
// decoder

namespace {

struct HuffDecodeTable {
  // Annex-F style canonical decoding: per code length, the smallest and
  // largest code values plus an index into the symbol list.
  int32_t min_code[17] = {};
  int32_t max_code[17] = {};
  int val_ptr[17] = {};
  std::vector<uint8_t> values;
  bool defined = false;

  void build(const uint8_t bits[16], const uint8_t* vals, size_t count) {
    values.assign(vals, vals + count);
    int code = 0;
    int k = 0;
    for (int len = 1; len <= 16; ++len) {
      if (bits[len - 1] == 0) {
        min_code[len] = 0;
        max_code[len] = -1;
      } else {
        val_ptr[len] = k;
        min_code[len] = code;
        code += bits[len - 1];
        k += bits[len - 1];
        max_code[len] = code - 1;
      }
      code <<= 1;
    }
    defined = true;
  }
};

struct BitReader {
  const std::vector<uint8_t>& data;
  size_t pos;
  uint32_t buffer = 0;
  int bit_count = 0;
  bool saw_eoi = false;

  BitReader(const std::vector<uint8_t>& d, size_t start) : data(d), pos(start) {}

  int next_bit() {
    if (bit_count == 0) {
      if (pos >= data.size()) throw JpegError("truncated entropy data");
      uint8_t byte = data[pos++];
      if (byte == 0xFF) {
        if (pos >= data.size()) throw JpegError("truncated entropy data");
        const uint8_t marker = data[pos++];
        if (marker == 0x00) {
          // stuffed 0xFF data byte
        } else if (marker == 0xD9) {
          saw_eoi = true;
          throw JpegError("entropy data ran into EOI");
        } else {
          throw JpegError("unexpected marker inside scan");
        }
      }
      buffer = byte;
      bit_count = 8;
    }
    --bit_count;
    return (buffer >> bit_count) & 1;
  }

  int receive(int length) {
    int v = 0;
    for (int i = 0; i < length; ++i) v = (v << 1) | next_bit();
    return v;
  }

  int decode(const HuffDecodeTable& t) {
    int code = next_bit();
    int len = 1;
    while (len <= 16 && (t.max_code[len] < 0 || code > t.max_code[len])) {
      code = (code << 1) | next_bit();
      ++len;
    }
    if (len > 16) throw JpegError("invalid Huffman code");
    return t.values[static_cast<size_t>(t.val_ptr[len] + code - t.min_code[len])];
  }
};

int extend(int v, int length) {
  if (length == 0) return 0;
  return v < (1 << (length - 1)) ? v - (1 << length) + 1 : v;
}

struct Segment {
  uint8_t marker;
  size_t payload_start;
  size_t payload_len;
};

}  // namespace

Image decode(const std::vector<uint8_t>& stream) {
  if (stream.size() < 4 || stream[0] != 0xFF || stream[1] != 0xD8)
    throw JpegError("missing SOI marker");

  std::array<int, 64> qtables[4] = {};
  bool qdefined[4] = {};
  HuffDecodeTable dc_tables[4], ac_tables[4];
  int width = 0, height = 0;
  struct Comp {
    int id = 0, h = 0, v = 0, qt = 0, dc = 0, ac = 0;
  };
  Comp comps[3];
  bool have_sof = false;
  size_t scan_start = 0;

  size_t pos = 2;
  while (true) {
    if (pos + 4 > stream.size()) throw JpegError("truncated stream");
    if (stream[pos] != 0xFF) throw JpegError("malformed marker");
    const uint8_t marker = stream[pos + 1];
    const size_t len = (static_cast<size_t>(stream[pos + 2]) << 8) | stream[pos + 3];
    if (len < 2 || pos + 2 + len > stream.size()) throw JpegError("truncated segment");
    const size_t payload = pos + 4;
    const size_t payload_len = len - 2;

    if (marker == 0xDB) {
      size_t p = payload;
      while (p < payload + payload_len) {
        const int prec_id = stream[p++];
        if ((prec_id >> 4) != 0) throw JpegError("16-bit quant tables unsupported");
        const int id = prec_id & 0x0F;
        if (p + 64 > payload + payload_len) throw JpegError("truncated DQT");
        for (int i = 0; i < 64; ++i) qtables[id][kZigZag[i]] = stream[p + i];
        qdefined[id] = true;
        p += 64;
      }
    } else if (marker == 0xC4) {
      size_t p = payload;
      while (p < payload + payload_len) {
        const int cls_id = stream[p++];
        const int cls = cls_id >> 4;
        const int id = cls_id & 0x0F;
        if (p + 16 > payload + payload_len) throw JpegError("truncated DHT");
        uint8_t bits[16];
        size_t count = 0;
        for (int i = 0; i < 16; ++i) {
          bits[i] = stream[p + i];
          count += bits[i];
        }
        p += 16;
        if (p + count > payload + payload_len) throw JpegError("truncated DHT");
        (cls == 0 ? dc_tables[id] : ac_tables[id]).build(bits, &stream[p], count);
        p += count;
      }
    } else if (marker == 0xC0) {
      if (payload_len < 6) throw JpegError("truncated SOF0");
      height = (stream[payload + 1] << 8) | stream[payload + 2];
      width = (stream[payload + 3] << 8) | stream[payload + 4];
      if (stream[payload + 5] != 3) throw JpegError("only 3-component streams supported");
      for (int c = 0; c < 3; ++c) {
        const size_t p = payload + 6 + static_cast<size_t>(c) * 3;
        comps[c].id = stream[p];
        comps[c].h = stream[p + 1] >> 4;
        comps[c].v = stream[p + 1] & 0x0F;
        comps[c].qt = stream[p + 2];
      }
      if (comps[0].h != 2 || comps[0].v != 2 || comps[1].h != 1 || comps[1].v != 1 ||
          comps[2].h != 1 || comps[2].v != 1)
        throw JpegError("only 4:2:0 sampling supported");
      have_sof = true;
    } else if (marker == 0xDA) {
      if (!have_sof) throw JpegError("SOS before SOF0");
      const int ns = stream[payload];
      if (ns != 3 || payload_len < 1 + 3 * 2 + 3) throw JpegError("bad SOS header");
      for (int c = 0; c < 3; ++c) {
        comps[c].dc = stream[payload + 1 + 2 * c + 1] >> 4;
        comps[c].ac = stream[payload + 1 + 2 * c + 1] & 0x0F;
      }
      scan_start = payload + payload_len;
      break;
    } else if (marker >= 0xC1 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8) {
      throw JpegError("unsupported non-baseline frame type");
    }
    pos = payload + payload_len;
  }

  if (width < 1 || height < 1) throw JpegError("bad dimensions");
  for (int c = 0; c < 3; ++c) {
    if (!qdefined[comps[c].qt]) throw JpegError("missing quant table");
    if (!dc_tables[comps[c].dc].defined || !ac_tables[comps[c].ac].defined)
      throw JpegError("missing Huffman table");
  }

  const int pw = (width + 15) / 16 * 16;
  const int ph = (height + 15) / 16 * 16;
  const int cw = pw / 2, ch = ph / 2;
  std::vector<uint8_t> yp(static_cast<size_t>(pw) * ph);
  std::vector<uint8_t> cbp(static_cast<size_t>(cw) * ch), crp(cbp.size());

  BitReader br(stream, scan_start);
  int pred[3] = {0, 0, 0};
  int coef[64];
  double freq[64], pix[64];

  auto decode_block = [&](int comp) {
    std::fill(std::begin(coef), std::end(coef), 0);
    const auto& dct = dc_tables[comps[comp].dc];
    const auto& act = ac_tables[comps[comp].ac];
    const int cat = br.decode(dct);
    pred[comp] += extend(br.receive(cat), cat);
    coef[0] = pred[comp];
    int k = 1;
    while (k < 64) {
      const int rs = br.decode(act);
      const int r = rs >> 4, s = rs & 0x0F;
      if (s == 0) {
        if (r == 15) {
          k += 16;
          continue;
        }
        break;  // EOB
      }
      k += r;
      if (k > 63) throw JpegError("AC coefficient index overflow");
      coef[kZigZag[k]] = extend(br.receive(s), s);
      ++k;
    }
    const auto& qt = qtables[comps[comp].qt];
    for (int i = 0; i < 64; ++i) freq[i] = static_cast<double>(coef[i]) * qt[i];
    idct8x8(freq, pix);
  };

  auto store_block = [&](std::vector<uint8_t>& plane, int plane_w, int bx, int by) {
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        plane[static_cast<size_t>(by + y) * plane_w + bx + x] = clamp_byte(pix[y * 8 + x] + 128.0);
  };

  for (int my = 0; my < ph / 16; ++my) {
    for (int mx = 0; mx < pw / 16; ++mx) {
      for (int sub = 0; sub < 4; ++sub) {
        decode_block(0);
        store_block(yp, pw, mx * 16 + (sub % 2) * 8, my * 16 + (sub / 2) * 8);
      }
      decode_block(1);
      store_block(cbp, cw, mx * 8, my * 8);
      decode_block(2);
      store_block(crp, cw, mx * 8, my * 8);
    }
  }

  Image img;
  img.width = width;
  img.height = height;
  img.rgb.resize(static_cast<size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double Y = yp[static_cast<size_t>(y) * pw + x];
      const double Cb = cbp[static_cast<size_t>(y / 2) * cw + x / 2] - 128.0;
      const double Cr = crp[static_cast<size_t>(y / 2) * cw + x / 2] - 128.0;
      uint8_t* p = &img.rgb[(static_cast<size_t>(y) * width + x) * 3];
      p[0] = clamp_byte(Y + 1.402 * Cr);
      p[1] = clamp_byte(Y - 0.344136 * Cb - 0.714136 * Cr);
      p[2] = clamp_byte(Y + 1.772 * Cb);
    }
  }
  return img;
}

Image jpeg_round(const Image& img, int quality) {
  if (quality < 1 || quality > 100) throw JpegError("quality must be in [1, 100]");
  if (quality == 100) return img;  // no compression by definition
  return decode(encode(img, quality));
}

double mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw JpegError("mse: dimension mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.rgb.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return 99.0;
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

}  // namespace minnet::jpeg
