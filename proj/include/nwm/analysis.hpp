#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nwm/model.hpp"

namespace nwm {

struct KernelOrigin {
  std::string layer;
  int in_channel = 0;
  int out_channel = 0;
};

// Single-channel kernels flattened row-major (ky, kx).
struct KernelSet {
  int height = 0, width = 0;
  std::vector<std::vector<double>> kernels;
  std::vector<KernelOrigin> origins;

  std::size_t size() const { return kernels.size(); }
};

// Splits a (kh, kw, in, out) weight into in*out kernels, ordered by in
// channel then out channel.
KernelSet split_kernels(const Tensor& weight, const std::string& layer);
KernelSet extract_last_layer_kernels(const WatermarkModel& model);

struct ClusterResult {
  std::vector<std::vector<double>> centroids;
  std::vector<int> assignment;
  double distortion = 0.0;  // total squared distance to the assigned centroid
  std::vector<double> history;  // distortion after each assignment step
  int iterations = 0;
};

// Lloyd's algorithm from a seeded k-means++ start. Stops when assignments
// no longer change or after max_iters. An empty cluster is moved onto the
// point farthest from its centroid. The whole run is repeated `restarts`
// times from fresh k-means++ starts and the lowest-distortion result kept.
// Throws ParameterError unless 1 <= k <= points.size().
ClusterResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                     int max_iters = 100, int restarts = 10);

// DFT magnitude of a (kh, kw) kernel placed at the center of a pad x pad
// zero grid, shifted so DC sits at (pad/2, pad/2). Row-major.
std::vector<double> freq_response(const std::vector<double>& kernel, int kh, int kw, int pad);

// ||M - R(M)|| / ||M|| where R rotates by 180 degrees about the DC cell.
// 0 for a zero grid.
double centrosymmetry_score(const std::vector<double>& grid, int n);

struct AnalysisOptions {
  int clusters = 3;
  std::uint64_t seed = 0;
  int pad = 64;
  int max_iters = 100;
  int restarts = 10;
};

// Writes centroid_<i>.csv, centroid_<i>_spectrum.csv, centroid_<i>_spectrum.pgm
// and summary.json into out_dir. Throws IoError if out_dir is unwritable.
ClusterResult analyze_extractor(const WatermarkModel& model, const std::filesystem::path& out_dir,
                                const AnalysisOptions& options = {});

}  // namespace nwm
