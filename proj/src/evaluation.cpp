#include "minnet/evaluation.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace minnet {

namespace fs = std::filesystem;

double pocp(const PredictionSet& a, const PredictionSet& b) {
  if (a.predictions.size() != b.predictions.size())
    throw std::invalid_argument("pocp: prediction sets differ in length");
  if (a.predictions.empty()) return 0.0;
  size_t changed = 0;
  for (size_t i = 0; i < a.predictions.size(); ++i)
    if (a.predictions[i] != b.predictions[i]) ++changed;
  return static_cast<double>(changed) / static_cast<double>(a.predictions.size());
}

jpeg::Image record_to_image(const ImageRecord& rec) {
  jpeg::Image img;
  img.width = ImageRecord::kSide;
  img.height = ImageRecord::kSide;
  img.rgb.resize(static_cast<size_t>(ImageRecord::kBytes));
  for (int y = 0; y < ImageRecord::kSide; ++y)
    for (int x = 0; x < ImageRecord::kSide; ++x)
      for (int c = 0; c < 3; ++c) img.rgb[(y * ImageRecord::kSide + x) * 3 + c] = rec.at(c, y, x);
  return img;
}

ImageRecord image_to_record(const jpeg::Image& img, uint8_t label) {
  if (img.width != ImageRecord::kSide || img.height != ImageRecord::kSide)
    throw std::invalid_argument("image_to_record: expected a 32x32 image");
  ImageRecord rec;
  rec.label = label;
  for (int y = 0; y < ImageRecord::kSide; ++y)
    for (int x = 0; x < ImageRecord::kSide; ++x)
      for (int c = 0; c < 3; ++c)
        rec.set(c, y, x, img.rgb[(y * ImageRecord::kSide + x) * 3 + c]);
  return rec;
}

namespace {

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string sq_dir_name(uint64_t hash, int quality) {
  return "sq_" + hex16(hash) + "_v" + std::to_string(kJpegCodecVersion) + "_q" +
         std::to_string(quality);
}

bool cache_index_valid(const fs::path& dir, uint64_t hash, int quality, size_t count) {
  std::ifstream in(dir / "index.txt");
  if (!in) return false;
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv["hash"] == hex16(hash) && kv["q"] == std::to_string(quality) &&
         kv["codec"] == std::to_string(kJpegCodecVersion) &&
         kv["count"] == std::to_string(count);
}

std::string jpg_name(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img%05zu.jpg", index);
  return buf;
}

std::vector<uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

}  // namespace

std::vector<ImageRecord> build_sq(const std::vector<ImageRecord>& test, int quality,
                                  const std::string& cache_dir, bool* cache_hit) {
  if (cache_hit) *cache_hit = false;
  if (quality == 100) return test;  // untouched images by definition

  const uint64_t hash = dataset_hash(test);
  fs::path dir;
  if (!cache_dir.empty()) {
    dir = fs::path(cache_dir) / sq_dir_name(hash, quality);
    if (cache_index_valid(dir, hash, quality, test.size())) {
      std::vector<ImageRecord> out(test.size());
      for (size_t i = 0; i < test.size(); ++i) {
        jpeg::Image img = jpeg::decode(read_file_bytes(dir / jpg_name(i)));
        out[i] = image_to_record(img, test[i].label);
      }
      if (cache_hit) *cache_hit = true;
      return out;
    }
  }

  std::vector<ImageRecord> out(test.size());
  std::vector<std::vector<uint8_t>> streams(cache_dir.empty() ? 0 : test.size());
  for (size_t i = 0; i < test.size(); ++i) {
    try {
      std::vector<uint8_t> bytes = jpeg::encode(record_to_image(test[i]), quality);
      out[i] = image_to_record(jpeg::decode(bytes), test[i].label);
      if (!cache_dir.empty()) streams[i] = std::move(bytes);
    } catch (const jpeg::JpegError& e) {
      throw std::runtime_error("jpeg failure at test index " + std::to_string(i) + ": " +
                               e.what());
    }
  }

  if (!cache_dir.empty()) {
    std::error_code ec;
    fs::create_directories(fs::path(cache_dir), ec);
    const fs::path tmp = dir.string() + ".tmp" + std::to_string(::getpid());
    fs::create_directories(tmp);
    for (size_t i = 0; i < streams.size(); ++i) {
      std::ofstream f(tmp / jpg_name(i), std::ios::binary | std::ios::trunc);
      f.write(reinterpret_cast<const char*>(streams[i].data()),
              static_cast<std::streamsize>(streams[i].size()));
    }
    {
      std::ofstream idx(tmp / "index.txt", std::ios::trunc);
      idx << "hash=" << hex16(hash) << "\n"
          << "q=" << quality << "\n"
          << "codec=" << kJpegCodecVersion << "\n"
          << "count=" << test.size() << "\n";
    }
    fs::rename(tmp, dir, ec);
    if (ec) fs::remove_all(tmp, ec);  // lost a race; the existing cache wins
  }
  return out;
}

std::vector<RobustnessRow> error_vs_q(Model& model, const std::vector<ImageRecord>& test,
                                      const ChannelStats& stats, std::span<const int> qualities,
                                      int batch_size, const std::string& cache_dir) {
  EvalResult base = evaluate(model, test, stats, batch_size);
  PredictionSet base_set{"", 100, base.predictions};
  std::vector<RobustnessRow> rows;
  for (int q : qualities) {
    if (q == 100) {
      rows.push_back({100, base.error, 0.0});
      continue;
    }
    auto sq = build_sq(test, q, cache_dir);
    EvalResult r = evaluate(model, sq, stats, batch_size);
    PredictionSet q_set{"", q, r.predictions};
    rows.push_back({q, r.error, pocp(base_set, q_set)});
  }
  return rows;
}

void write_robustness_csv(const std::string& path, const std::vector<RobustnessRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "q,test_error,pocp\n";
  char line[96];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f\n", r.quality, r.error, r.pocp);
    out << line;
  }
}

void write_predictions_csv(const std::string& path, const std::vector<ImageRecord>& records,
                           const std::vector<int>& predictions) {
  if (records.size() != predictions.size())
    throw std::invalid_argument("predictions csv: size mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "index,label,prediction\n";
  for (size_t i = 0; i < records.size(); ++i)
    out << i << "," << static_cast<int>(records[i].label) << "," << predictions[i] << "\n";
}

// ---------------------------------------------------------------------------
// hyperselectivity probe

namespace {

constexpr double kDegenerateAngle = 1e-3;  // radians

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> normalized(std::span<const double> a) {
  const double n = norm(a);
  std::vector<double> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] / n;
  return out;
}

double relu_d(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

ProbeReport hyperselectivity_probe(std::span<const double> v, std::span<const double> g,
                                   const ProbeStats& stats, std::span<const double> eps) {
  if (v.size() != g.size() || v.empty())
    throw std::invalid_argument("probe: filter vectors must have equal nonzero length");
  if (norm(v) == 0.0 || norm(g) == 0.0) throw std::invalid_argument("probe: zero filter");
  for (double e : eps)
    if (e <= 0.0) throw std::invalid_argument("probe: eps values must be > 0");

  ProbeReport rep;
  rep.eps.assign(eps.begin(), eps.end());

  const auto vh = normalized(v);
  const auto gh = normalized(g);
  rep.angle = std::acos(std::clamp(dot(vh, gh), -1.0, 1.0));

  std::vector<double> bisector(v.size()), diff(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    bisector[i] = vh[i] + gh[i];
    diff[i] = vh[i] - gh[i];
  }
  // gamma = 0 leaves no in-plane orthogonal direction; gamma = pi leaves no
  // bisector. Both are flagged degenerate.
  if (rep.angle < kDegenerateAngle || norm(bisector) < 1e-9) {
    rep.degenerate = true;
    return rep;
  }
  const auto x_opt = normalized(bisector);
  const auto o = normalized(diff);

  auto min_response = [&](std::span<const double> x) {
    const double a = relu_d(dot(vh, x) - stats.mu_v) / stats.sigma_v;
    const double b = relu_d(dot(gh, x) - stats.mu_g) / stats.sigma_g;
    return std::min(a, b);
  };
  auto ln_response = [&](std::span<const double> x) { return relu_d(dot(x_opt, x)); };

  rep.response_at_opt = min_response(x_opt);
  rep.ln_response_at_opt = ln_response(x_opt);
  std::vector<double> probe(v.size());
  for (double e : eps) {
    for (int sign : {+1, -1}) {
      for (size_t i = 0; i < v.size(); ++i) probe[i] = x_opt[i] + sign * e * o[i];
      const double r = min_response(probe);
      const double lr = ln_response(probe);
      if (sign > 0) {
        rep.response_plus.push_back(r);
        rep.ln_response_plus.push_back(lr);
      } else {
        rep.response_minus.push_back(r);
        rep.ln_response_minus.push_back(lr);
      }
    }
  }
  return rep;
}

ProbeSummary probe_model(Model& model, const std::string& selector,
                         std::span<const double> eps) {
  ProbeSummary summary;
  auto blocks = model.min_blocks();
  bool matched = false;
  for (MinBlock* blk : blocks) {
    if (!selector.empty() && blk->name().rfind(selector, 0) != 0) continue;
    matched = true;
    const Tensor& fa = blk->filters_a();
    const Tensor& fb = blk->filters_b();
    const int64_t channels = fa.dim(0);
    const int64_t k2 = fa.dim(2) * fa.dim(3);
    for (int64_t m = 0; m < channels; ++m) {
      std::vector<double> v(static_cast<size_t>(k2)), g(static_cast<size_t>(k2));
      for (int64_t i = 0; i < k2; ++i) {
        v[static_cast<size_t>(i)] = fa.data()[m * k2 + i];
        g[static_cast<size_t>(i)] = fb.data()[m * k2 + i];
      }
      ProbeReport rep = hyperselectivity_probe(v, g, ProbeStats{}, eps);
      rep.layer = blk->name();
      rep.channel = static_cast<int>(m);
      if (!rep.degenerate) {
        ++summary.non_degenerate;
        bool drop = true;
        for (double r : rep.response_plus) drop = drop && r < rep.response_at_opt;
        for (double r : rep.response_minus) drop = drop && r < rep.response_at_opt;
        if (drop) ++summary.hyperselective;
      }
      summary.reports.push_back(std::move(rep));
    }
  }
  if (!matched) throw std::runtime_error("probe: selector matches no Min-block: " + selector);
  return summary;
}

void write_probe_csv(const std::string& path, const std::vector<ProbeReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "layer,channel,angle,degenerate,response_at_opt,eps,response_plus,response_minus,"
         "ln_response_plus,ln_response_minus\n";
  char line[256];
  for (const auto& r : reports) {
    if (r.degenerate) {
      std::snprintf(line, sizeof(line), "%s,%d,%.9g,1,,,,,,\n", r.layer.c_str(), r.channel,
                    r.angle);
      out << line;
      continue;
    }
    for (size_t i = 0; i < r.eps.size(); ++i) {
      std::snprintf(line, sizeof(line), "%s,%d,%.9g,0,%.9g,%.4g,%.9g,%.9g,%.9g,%.9g\n",
                    r.layer.c_str(), r.channel, r.angle, r.response_at_opt, r.eps[i],
                    r.response_plus[i], r.response_minus[i], r.ln_response_plus[i],
                    r.ln_response_minus[i]);
      out << line;
    }
  }
}

}  // namespace minnet
