// src/kmeans.cpp
//
// Copyright 2026  The pmsspeech Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "pmsspeech/kmeans.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "pmsspeech/features.hpp"
#include "pmsspeech/rng.hpp"

namespace pms {

namespace {

// k-means++ seeding: first centroid uniform, each next drawn with probability
// proportional to the squared distance to the nearest chosen centroid.
Mat kmeanspp_init(const Mat& points, int k, Rng* rng) {
  const Index n = points.rows();
  Mat centroids(k, points.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  const Index first = static_cast<Index>(rng->uniform_index(static_cast<std::uint64_t>(n)));
  centroids.row(0) = points.row(first);
  chosen[static_cast<std::size_t>(first)] = true;

  Vec best_d2(n);
  for (Index i = 0; i < n; ++i)
    best_d2(i) = (points.row(i) - centroids.row(0)).squaredNorm();

  for (int c = 1; c < k; ++c) {
    const double total = best_d2.sum();
    Index pick = -1;
    if (total > 0.0) {
      const double r = rng->uniform() * total;
      double cum = 0.0;
      for (Index i = 0; i < n; ++i) {
        cum += best_d2(i);
        if (cum > r) {
          pick = i;
          break;
        }
      }
      if (pick < 0) pick = n - 1;  // r landed on the last strip
    }
    if (pick < 0 || chosen[static_cast<std::size_t>(pick)]) {
      // All remaining mass is zero (duplicate points); take the lowest
      // index not yet used so the seeding stays deterministic.
      pick = -1;
      for (Index i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) {
          pick = i;
          break;
        }
      if (pick < 0) pick = 0;
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    centroids.row(c) = points.row(pick);
    for (Index i = 0; i < n; ++i)
      best_d2(i) = std::min(best_d2(i), (points.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

// Nearest centroid with ties resolved to the lowest index.
int nearest(const Mat& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& point,
            double* dist_out) {
  int best = 0;
  double best_d = (point - centroids.row(0)).squaredNorm();
  for (Index c = 1; c < centroids.rows(); ++c) {
    const double d = (point - centroids.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist_out) *dist_out = best_d;
  return best;
}

}  // namespace

ClusterModel kmeans_fit(const Mat& points, int k, int max_iters, std::uint64_t seed) {
  const Index n = points.rows();
  if (k < 1) throw ValidationError("kmeans_fit: k must be >= 1");
  if (n < k)
    throw ValidationError("kmeans_fit: " + std::to_string(n) + " points cannot support k=" +
                          std::to_string(k));
  if (!points.allFinite()) throw ValidationError("kmeans_fit: non-finite input points");

  Rng rng(seed);
  ClusterModel model;
  model.centroids = kmeanspp_init(points, k, &rng);

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  std::vector<int> prev_labels;
  Vec dist(n);
  for (int iter = 0; iter < max_iters; ++iter) {
    prev_labels = labels;
    double inertia = 0.0;
    for (Index i = 0; i < n; ++i) {
      double d;
      labels[static_cast<std::size_t>(i)] = nearest(model.centroids, points.row(i), &d);
      dist(i) = d;
      inertia += d;
    }
    model.inertia = inertia;
    model.inertia_history.push_back(inertia);
    if (labels == prev_labels) break;

    Mat sums = Mat::Zero(k, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        model.centroids.row(c) =
            sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Re-seed an empty cluster at the point farthest from its centroid
        // (lowest index on ties, skipping points already used this round).
        Index far = -1;
        double far_d = -1.0;
        for (Index i = 0; i < n; ++i) {
          if (taken[static_cast<std::size_t>(i)]) continue;
          if (dist(i) > far_d) {
            far_d = dist(i);
            far = i;
          }
        }
        if (far >= 0) {
          model.centroids.row(c) = points.row(far);
          taken[static_cast<std::size_t>(far)] = true;
        }
      }
    }
  }
  return model;
}

std::vector<int> assign(const ClusterModel& model, const Mat& frames) {
  if (frames.cols() != model.centroids.cols())
    throw ValidationError("assign: feature dimension " + std::to_string(frames.cols()) +
                          " does not match centroid dimension " +
                          std::to_string(model.centroids.cols()));
  std::vector<int> labels(static_cast<std::size_t>(frames.rows()));
  for (Index i = 0; i < frames.rows(); ++i)
    labels[static_cast<std::size_t>(i)] = nearest(model.centroids, frames.row(i), nullptr);
  return labels;
}

Mat subsample_frames(const std::vector<Mat>& corpus, double fraction, std::uint64_t seed) {
  if (corpus.empty()) throw ValidationError("subsample_frames: empty corpus");
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ValidationError("subsample_frames: fraction must lie in (0, 1]");
  std::size_t total = 0;
  for (const Mat& m : corpus) total += static_cast<std::size_t>(m.rows());
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
  if (count == 0)
    throw ValidationError("subsample_frames: sample size rounds to zero (" +
                          std::to_string(total) + " frames at fraction " +
                          std::to_string(fraction) + ")");

  Rng rng(seed);
  const std::vector<std::size_t> picks = rng.sample_without_replacement(total, count);
  Mat out(static_cast<Index>(count), corpus.front().cols());
  // Utterance offsets for translating global frame indices.
  std::vector<std::size_t> offsets(corpus.size() + 1, 0);
  for (std::size_t u = 0; u < corpus.size(); ++u)
    offsets[u + 1] = offsets[u] + static_cast<std::size_t>(corpus[u].rows());
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const std::size_t g = picks[i];
    std::size_t u = 0;
    while (offsets[u + 1] <= g) ++u;
    out.row(static_cast<Index>(i)) =
        corpus[u].row(static_cast<Index>(g - offsets[u]));
  }
  return out;
}

MultiResolutionTargets multi_resolution_targets(const Mat& sample,
                                                const std::vector<Mat>& corpus,
                                                const std::vector<int>& sizes,
                                                const std::string& source,
                                                int max_iters, std::uint64_t seed) {
  if (sizes.empty()) throw ValidationError("multi_resolution_targets: no codebook sizes");
  for (int s : sizes) {
    if (s < 1) throw ValidationError("multi_resolution_targets: size must be >= 1");
    if (s > sample.rows())
      throw ValidationError("multi_resolution_targets: size " + std::to_string(s) +
                            " exceeds the " + std::to_string(sample.rows()) +
                            "-frame sample");
  }
  MultiResolutionTargets out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const int size = sizes[i];
    ClusterModel model = kmeans_fit(sample, size, max_iters, derive_seed(seed, i));
    TargetAssignment ta;
    ta.codebook_size = size;
    ta.source = source;
    ta.labels.reserve(corpus.size());
    for (const Mat& utt : corpus) ta.labels.push_back(assign(model, utt));
    out.models.emplace(size, std::move(model));
    out.assignments.emplace(size, std::move(ta));
  }
  return out;
}

void write_labels(const std::string& path, const TargetAssignment& t) {
  std::ofstream out(path);
  if (!out) throw StageError("cannot write label file: " + path);
  out << "k=" << t.codebook_size << " layer=" << t.source << "\n";
  for (const auto& utt : t.labels) {
    for (std::size_t i = 0; i < utt.size(); ++i) {
      if (i) out << ' ';
      out << utt[i];
    }
    out << '\n';
  }
  if (!out) throw StageError("short write to label file: " + path);
}

TargetAssignment read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open label file: " + path);
  std::string header;
  std::getline(in, header);
  TargetAssignment t;
  {
    std::istringstream hs(header);
    std::string kpart, lpart;
    hs >> kpart >> lpart;
    if (kpart.rfind("k=", 0) != 0 || lpart.rfind("layer=", 0) != 0)
      throw ValidationError("bad label file header in " + path + ": " + header);
    t.codebook_size = std::stoi(kpart.substr(2));
    t.source = lpart.substr(6);
  }
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<int> utt;
    int v;
    while (ls >> v) {
      if (v < 0 || v >= t.codebook_size)
        throw ValidationError("label " + std::to_string(v) + " out of range [0, " +
                              std::to_string(t.codebook_size) + ") in " + path);
      utt.push_back(v);
    }
    t.labels.push_back(std::move(utt));
  }
  return t;
}

void write_codebook(const std::string& path, const ClusterModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write codebook: " + path);
  write_pmsf_stream(out, model.centroids, kSourceRaw);
  if (!out) throw StageError("short write to codebook: " + path);
}

ClusterModel read_codebook(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open codebook: " + path);
  ClusterModel m;
  m.centroids = read_pmsf_stream(in, nullptr);
  return m;
}

}  // namespace pms
