#include "nwm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "nwm/error.hpp"

namespace nwm {

namespace fs = std::filesystem;

KernelSet split_kernels(const Tensor& weight, const std::string& layer) {
  const Shape s = weight.shape();
  KernelSet set;
  set.height = s[0];
  set.width = s[1];
  for (int i = 0; i < s[2]; ++i) {
    for (int o = 0; o < s[3]; ++o) {
      std::vector<double> k;
      k.reserve(static_cast<std::size_t>(s[0]) * s[1]);
      for (int ky = 0; ky < s[0]; ++ky)
        for (int kx = 0; kx < s[1]; ++kx) k.push_back(weight.at(ky, kx, i, o));
      set.kernels.push_back(std::move(k));
      set.origins.push_back({layer, i, o});
    }
  }
  return set;
}

KernelSet extract_last_layer_kernels(const WatermarkModel& model) {
  const Parameter& last = model.params.extract.back();
  return split_kernels(last.value, last.name);
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Nearest centroid, ties to the lower index.
int nearest(const std::vector<double>& p, const std::vector<std::vector<double>>& centroids,
            double* dist) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace

namespace {

ClusterResult lloyd(const std::vector<std::vector<double>>& points, int k, std::mt19937_64& rng,
                    int max_iters) {
  const std::size_t n = points.size();
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  // k-means++ seeding.
  ClusterResult r;
  std::vector<bool> chosen(n, false);
  std::size_t first = static_cast<std::size_t>(uniform() * static_cast<double>(n));
  first = std::min(first, n - 1);
  r.centroids.push_back(points[first]);
  chosen[first] = true;
  std::vector<double> d2(n);
  while (r.centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest(points[i], r.centroids, &d2[i]);
      total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    } else {
      // Every point coincides with a centroid already; take the next unused one.
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (!chosen[i]) pick = i;
      }
    }
    r.centroids.push_back(points[pick]);
    chosen[pick] = true;
  }

  // Lloyd iterations.
  r.assignment.assign(n, -1);
  const std::size_t dim = points[0].size();
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(points[i], r.centroids, &dist[i]);
      if (c != r.assignment[i]) {
        r.assignment[i] = c;
        changed = true;
      }
    }
    r.distortion = std::accumulate(dist.begin(), dist.end(), 0.0);
    r.history.push_back(r.distortion);
    r.iterations = iter + 1;
    if (!changed) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[r.assignment[i]][d] += points[i][d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        r.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
      }
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = sq_dist(points[i], r.centroids[r.assignment[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      r.centroids[c] = points[far];
    }
  }
  return r;
}

}  // namespace

ClusterResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                     int max_iters, int restarts) {
  const std::size_t n = points.size();
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw ParameterError("kmeans: k = " + std::to_string(k) + " with " + std::to_string(n) +
                         " points");
  }
  if (restarts < 1) throw ParameterError("kmeans: restarts must be positive");
  for (const auto& p : points) {
    if (p.size() != points[0].size()) throw ShapeError("kmeans: points differ in dimension");
  }
  std::mt19937_64 rng(seed);
  ClusterResult best;
  for (int i = 0; i < restarts; ++i) {
    ClusterResult r = lloyd(points, k, rng, max_iters);
    if (i == 0 || r.distortion < best.distortion) best = std::move(r);
  }
  return best;
}

std::vector<double> freq_response(const std::vector<double>& kernel, int kh, int kw, int pad) {
  if (pad < kh || pad < kw) throw ParameterError("freq_response: pad smaller than the kernel");
  if (kernel.size() != static_cast<std::size_t>(kh) * kw) {
    throw ShapeError("freq_response: kernel has " + std::to_string(kernel.size()) +
                     " values, expected " + std::to_string(kh * kw));
  }
  const int oy = pad / 2 - kh / 2, ox = pad / 2 - kw / 2;
  const double w = -2.0 * 3.14159265358979323846 / pad;
  // Twiddles by exponent mod pad, so the grid is computed exactly the same
  // way wherever it runs.
  std::vector<double> cs(pad), sn(pad);
  for (int t = 0; t < pad; ++t) {
    cs[t] = std::cos(w * t);
    sn[t] = std::sin(w * t);
  }
  std::vector<double> out(static_cast<std::size_t>(pad) * pad);
  for (int u = 0; u < pad; ++u) {
    for (int v = 0; v < pad; ++v) {
      double re = 0.0, im = 0.0;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const double val = kernel[static_cast<std::size_t>(ky) * kw + kx];
          if (val == 0.0) continue;
          const int e = static_cast<int>(
              (static_cast<long long>(u) * (ky + oy) + static_cast<long long>(v) * (kx + ox)) % pad);
          re += val * cs[e];
          im += val * sn[e];
        }
      }
      // DC of the unshifted grid lands at (pad/2, pad/2).
      const int su = (u + pad / 2) % pad, sv = (v + pad / 2) % pad;
      out[static_cast<std::size_t>(su) * pad + sv] = std::hypot(re, im);
    }
  }
  return out;
}

double centrosymmetry_score(const std::vector<double>& grid, int n) {
  const int c2 = 2 * (n / 2);
  double diff = 0.0, norm = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double a = grid[static_cast<std::size_t>(i) * n + j];
      const double b = grid[static_cast<std::size_t>((c2 - i + n) % n) * n + (c2 - j + n) % n];
      diff += (a - b) * (a - b);
      norm += a * a;
    }
  }
  return norm == 0.0 ? 0.0 : std::sqrt(diff / norm);
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_grid_csv(const fs::path& path, const std::vector<double>& g, int rows, int cols) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      if (j) f << ',';
      f << fmt(g[static_cast<std::size_t>(i) * cols + j]);
    }
    f << '\n';
  }
  if (!f) throw IoError("failed writing " + path.string());
}

// Binary greyscale PGM, scaled so the grid maximum is 255.
void write_pgm(const fs::path& path, const std::vector<double>& g, int n) {
  const double peak = *std::max_element(g.begin(), g.end());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P5\n" << n << ' ' << n << "\n255\n";
  for (double v : g) {
    const double s = peak > 0.0 ? v / peak : 0.0;
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0))));
  }
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace

ClusterResult analyze_extractor(const WatermarkModel& model, const fs::path& out_dir,
                                const AnalysisOptions& options) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw IoError("cannot create " + out_dir.string());

  const KernelSet set = extract_last_layer_kernels(model);
  const ClusterResult r =
      kmeans(set.kernels, options.clusters, options.seed, options.max_iters, options.restarts);

  nlohmann::json centroids = nlohmann::json::array();
  for (std::size_t c = 0; c < r.centroids.size(); ++c) {
    const std::string stem = "centroid_" + std::to_string(c);
    write_grid_csv(out_dir / (stem + ".csv"), r.centroids[c], set.height, set.width);
    const auto grid = freq_response(r.centroids[c], set.height, set.width, options.pad);
    write_grid_csv(out_dir / (stem + "_spectrum.csv"), grid, options.pad, options.pad);
    write_pgm(out_dir / (stem + "_spectrum.pgm"), grid, options.pad);
    std::vector<int> members;
    for (std::size_t i = 0; i < r.assignment.size(); ++i) {
      if (r.assignment[i] == static_cast<int>(c)) members.push_back(static_cast<int>(i));
    }
    const std::size_t dc = static_cast<std::size_t>(options.pad / 2) * options.pad + options.pad / 2;
    centroids.push_back({{"index", c},
                         {"members", members},
                         {"centrosymmetry", centrosymmetry_score(grid, options.pad)},
                         {"dc_magnitude", grid[dc]},
                         {"peak_magnitude", *std::max_element(grid.begin(), grid.end())}});
  }
  nlohmann::json kernels = nlohmann::json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    kernels.push_back({{"layer", set.origins[i].layer},
                       {"in_channel", set.origins[i].in_channel},
                       {"out_channel", set.origins[i].out_channel},
                       {"cluster", r.assignment[i]}});
  }
  const nlohmann::json summary = {{"kernel_count", set.size()},
                                  {"kernel_size", {set.height, set.width}},
                                  {"clusters", options.clusters},
                                  {"seed", options.seed},
                                  {"pad", options.pad},
                                  {"restarts", options.restarts},
                                  {"iterations", r.iterations},
                                  {"distortion", r.distortion},
                                  {"distortion_history", r.history},
                                  {"kernels", kernels},
                                  {"centroids", centroids}};
  std::ofstream f(out_dir / "summary.json");
  if (!f) throw IoError("cannot write " + (out_dir / "summary.json").string());
  f << summary.dump(2) << '\n';
  if (!f) throw IoError("failed writing summary.json");
  return r;
}

}  // namespace nwm
