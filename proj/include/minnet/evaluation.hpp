#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "minnet/dataset.hpp"
#include "minnet/jpeg.hpp"
#include "minnet/model.hpp"
#include "minnet/trainer.hpp"

namespace minnet {

inline constexpr int kJpegCodecVersion = 1;  // invalidates the S_Q cache when bumped

struct PredictionSet {
  std::string model_id;
  int quality = 100;
  std::vector<int> predictions;  // aligned to test-set order
};

// Fraction of positions where the two prediction sets disagree.
double pocp(const PredictionSet& a, const PredictionSet& b);

jpeg::Image record_to_image(const ImageRecord& rec);
ImageRecord image_to_record(const jpeg::Image& img, uint8_t label);

// Applies jpeg_round to every test image; labels unchanged. When cache_dir
// is non-empty the result is cached on disk keyed by (dataset hash, Q,
// codec version), with atomic write-temp-then-rename creation.
std::vector<ImageRecord> build_sq(const std::vector<ImageRecord>& test, int quality,
                                  const std::string& cache_dir = "", bool* cache_hit = nullptr);

struct RobustnessRow {
  int quality;
  double error;
  double pocp;
};

// Evaluates once at full quality, then on each S_Q. Note that POCP can
// exceed the error increase: it also counts predictions that were already
// wrong and flip to a different wrong class.
std::vector<RobustnessRow> error_vs_q(Model& model, const std::vector<ImageRecord>& test,
                                      const ChannelStats& stats, std::span<const int> qualities,
                                      int batch_size, const std::string& cache_dir = "");

void write_robustness_csv(const std::string& path, const std::vector<RobustnessRow>& rows);
void write_predictions_csv(const std::string& path, const std::vector<ImageRecord>& records,
                           const std::vector<int>& predictions);

// ---------------------------------------------------------------------------
// hyperselectivity probe

// Map statistics used when evaluating a Min-neuron on a synthetic stimulus.
// A single probe patch has no meaningful map statistics, so the neuron is
// idealized with mu = 0, sigma = 1.
struct ProbeStats {
  double mu_v = 0.0, sigma_v = 1.0;
  double mu_g = 0.0, sigma_g = 1.0;
};

struct ProbeReport {
  std::string layer;
  int channel = 0;
  double angle = 0.0;  // radians between the filter vectors, [0, pi]
  bool degenerate = false;
  double response_at_opt = 0.0;
  double ln_response_at_opt = 0.0;
  std::vector<double> eps;
  std::vector<double> response_plus;     // Min response at x* + eps * o
  std::vector<double> response_minus;    // Min response at x* - eps * o
  std::vector<double> ln_response_plus;  // reference LN neuron, same points
  std::vector<double> ln_response_minus;
};

// Builds the optimal stimulus x* along the bisector of the filter
// directions and an in-plane perturbation o orthogonal to it, then
// evaluates the Min-neuron and a reference LN neuron (single filter along
// x*) at x* and x* +- eps*o. Filters are direction-normalized: instance
// normalization makes the branch responses invariant to filter scale, so
// the unit-statistics idealization uses unit filter vectors.
ProbeReport hyperselectivity_probe(std::span<const double> v, std::span<const double> g,
                                   const ProbeStats& stats, std::span<const double> eps);

struct ProbeSummary {
  std::vector<ProbeReport> reports;
  int non_degenerate = 0;
  int hyperselective = 0;  // perturbed response strictly below optimum for all eps

  double fraction_non_degenerate() const {
    return reports.empty() ? 0.0 : static_cast<double>(non_degenerate) / reports.size();
  }
  double fraction_hyperselective() const {
    return non_degenerate == 0 ? 0.0 : static_cast<double>(hyperselective) / non_degenerate;
  }
};

// Probes every learned depthwise filter pair of the selected Min-blocks
// (selector is a block-name prefix; empty selects all Min-blocks).
ProbeSummary probe_model(Model& model, const std::string& selector, std::span<const double> eps);

void write_probe_csv(const std::string& path, const std::vector<ProbeReport>& reports);

}  // namespace minnet
