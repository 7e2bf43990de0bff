#include <cmath>

#include "doctest.h"
#include "minnet/dataset.hpp"
#include "minnet/evaluation.hpp"
#include "minnet/jpeg.hpp"
#include "test_util.hpp"

using namespace minnet;

namespace {

jpeg::Image constant_image(int w, int h, uint8_t r, uint8_t g, uint8_t b) {
  jpeg::Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<size_t>(w) * h * 3);
  for (int i = 0; i < w * h; ++i) {
    img.rgb[i * 3 + 0] = r;
    img.rgb[i * 3 + 1] = g;
    img.rgb[i * 3 + 2] = b;
  }
  return img;
}

std::vector<jpeg::Image> corpus_images(int n) {
  auto ds = testutil::test_corpus(1, n);
  std::vector<jpeg::Image> images;
  images.reserve(ds.test.size());
  for (const auto& rec : ds.test) images.push_back(record_to_image(rec));
  return images;
}

}  // namespace

TEST_SUITE_BEGIN("jpeg");

TEST_CASE("quality scaling fixed points and clamps") {
  const auto q50 = jpeg::quality_to_tables(50);
  CHECK(q50.luma[0] == 16);  // scale 100 reproduces the base tables
  CHECK(q50.luma[63] == 99);
  CHECK(q50.chroma[0] == 17);

  const auto q100 = jpeg::quality_to_tables(100);
  for (int i = 0; i < 64; ++i) {
    CHECK(q100.luma[i] == 1);
    CHECK(q100.chroma[i] == 1);
  }

  const auto q10 = jpeg::quality_to_tables(10);
  CHECK(q10.luma[0] == 80);  // floor((16*500 + 50)/100)

  CHECK_THROWS_AS(jpeg::quality_to_tables(0), jpeg::JpegError);
  CHECK_THROWS_AS(jpeg::quality_to_tables(101), jpeg::JpegError);
}

TEST_CASE("lower quality never shrinks a table entry") {
  auto prev = jpeg::quality_to_tables(100);
  for (int q = 99; q >= 1; --q) {
    auto cur = jpeg::quality_to_tables(q);
    for (int i = 0; i < 64; ++i) {
      CHECK(cur.luma[i] >= prev.luma[i]);
      CHECK(cur.chroma[i] >= prev.chroma[i]);
    }
    prev = cur;
  }
}

TEST_CASE("constant mid-gray survives the round trip within one level") {
  auto img = constant_image(32, 32, 128, 128, 128);
  auto decoded = jpeg::decode(jpeg::encode(img, 50));
  REQUIRE(decoded.width == 32);
  REQUIRE(decoded.height == 32);
  for (size_t i = 0; i < decoded.rgb.size(); ++i)
    CHECK(std::abs(int(decoded.rgb[i]) - 128) <= 1);
}

TEST_CASE("encode is deterministic") {
  auto images = corpus_images(3);
  for (const auto& img : images) {
    auto a = jpeg::encode(img, 35);
    auto b = jpeg::encode(img, 35);
    CHECK(a == b);
    CHECK(jpeg::decode(a).rgb == jpeg::decode(b).rgb);
  }
}

TEST_CASE("round trip keeps dimensions, including non-MCU-aligned ones") {
  jpeg::Image odd;
  odd.width = 20;
  odd.height = 12;
  Rng rng(5);
  odd.rgb.resize(20 * 12 * 3);
  for (auto& v : odd.rgb) v = static_cast<uint8_t>(rng.uniform_int(0, 255));
  for (int q : {10, 50, 90}) {
    auto out = jpeg::decode(jpeg::encode(odd, q));
    CHECK(out.width == 20);
    CHECK(out.height == 12);
  }
}

TEST_CASE("high-quality round trip error stays within the sanity bound") {
  auto images = corpus_images(20);
  for (const auto& img : images) {
    auto out = jpeg::jpeg_round(img, 95);
    int max_err = 0;
    double sum_err = 0;
    for (size_t i = 0; i < img.rgb.size(); ++i) {
      const int err = std::abs(int(img.rgb[i]) - int(out.rgb[i]));
      max_err = std::max(max_err, err);
      sum_err += err;
    }
    CHECK(max_err <= 25);
    CHECK(sum_err / img.rgb.size() <= 3.0);
  }
}

TEST_CASE("re-encoding is nearly a fixed point at Q=90") {
  auto images = corpus_images(10);
  for (const auto& img : images) {
    auto once = jpeg::jpeg_round(img, 90);
    auto twice = jpeg::jpeg_round(once, 90);
    double sum_err = 0;
    for (size_t i = 0; i < once.rgb.size(); ++i)
      sum_err += std::abs(int(once.rgb[i]) - int(twice.rgb[i]));
    CHECK(sum_err / once.rgb.size() <= 2.0);
  }
}

TEST_CASE("distortion grows as quality falls") {
  auto images = corpus_images(100);
  int monotone = 0;
  int psnr_ordered = 0;
  for (const auto& img : images) {
    const double mse90 = jpeg::mse(jpeg::jpeg_round(img, 90), img);
    const double mse10 = jpeg::mse(jpeg::jpeg_round(img, 10), img);
    if (mse10 >= mse90) ++monotone;
    if (jpeg::psnr(jpeg::jpeg_round(img, 90), img) > jpeg::psnr(jpeg::jpeg_round(img, 10), img))
      ++psnr_ordered;
  }
  CHECK(monotone >= 95);
  CHECK(psnr_ordered >= 95);
}

TEST_CASE("jpeg_round at Q=100 is the identity") {
  auto images = corpus_images(3);
  for (const auto& img : images) {
    auto out = jpeg::jpeg_round(img, 100);
    CHECK(out == img);  // byte-identical

    auto q90 = jpeg::jpeg_round(img, 90);
    CHECK(q90.width == img.width);
    CHECK(q90.height == img.height);
    CHECK(q90.rgb != img.rgb);
  }
  CHECK_THROWS_AS(jpeg::jpeg_round(images[0], 0), jpeg::JpegError);
}

TEST_CASE("malformed streams raise explicit errors") {
  auto img = corpus_images(1)[0];
  auto bytes = jpeg::encode(img, 80);

  SUBCASE("truncated entropy data") {
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(jpeg::decode(bytes), jpeg::JpegError);
  }
  SUBCASE("missing SOI") {
    bytes[0] = 0x00;
    CHECK_THROWS_AS(jpeg::decode(bytes), jpeg::JpegError);
  }
  SUBCASE("empty stream") { CHECK_THROWS_AS(jpeg::decode({}), jpeg::JpegError); }
  SUBCASE("header-only stream") {
    bytes.resize(8);
    CHECK_THROWS_AS(jpeg::decode(bytes), jpeg::JpegError);
  }
}

TEST_SUITE_END();
