// include/pmsspeech/kmeans.hpp
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

#ifndef PMSSPEECH_KMEANS_HPP_
#define PMSSPEECH_KMEANS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmsspeech/types.hpp"

namespace pms {

struct ClusterModel {
  Mat centroids;          // k x D
  double inertia = 0.0;   // final sum of squared distances
  // Inertia measured after each assignment step; non-increasing by Lloyd's
  // descent property.
  std::vector<double> inertia_history;
  int k() const { return static_cast<int>(centroids.rows()); }
};

// Per-utterance integer label sequences drawn from one codebook.
struct TargetAssignment {
  std::vector<std::vector<int>> labels;
  int codebook_size = 0;
  std::string source;     // e.g. "mfcc" or "encoder-layer-6"
};

// Lloyd's algorithm from k-means++ initialization, squared Euclidean metric.
// Runs until the assignment fixpoint or max_iters.  Deterministic given the
// seed; ties in assignment go to the lowest centroid index; an empty cluster
// is re-seeded with the point currently farthest from its own centroid.
ClusterModel kmeans_fit(const Mat& points, int k, int max_iters, std::uint64_t seed);

// Nearest-centroid labels for a T x D feature matrix.
std::vector<int> assign(const ClusterModel& model, const Mat& frames);

// Uniform sample of round(fraction * total) frames without replacement across
// the whole corpus.  Rejects an empty sample.
Mat subsample_frames(const std::vector<Mat>& corpus, double fraction, std::uint64_t seed);

struct MultiResolutionTargets {
  std::map<int, ClusterModel> models;          // codebook size -> model
  std::map<int, TargetAssignment> assignments; // codebook size -> labels
};

// One independent k-means fit per requested size, all on the same sample,
// followed by assignment over the full corpus.
MultiResolutionTargets multi_resolution_targets(const Mat& sample,
                                                const std::vector<Mat>& corpus,
                                                const std::vector<int>& sizes,
                                                const std::string& source,
                                                int max_iters, std::uint64_t seed);

// Label files: header "k=<size> layer=<source>", then one utterance per line
// of space-separated integers.
void write_labels(const std::string& path, const TargetAssignment& t);
TargetAssignment read_labels(const std::string& path);

void write_codebook(const std::string& path, const ClusterModel& model);
ClusterModel read_codebook(const std::string& path);

}  // namespace pms

#endif  // PMSSPEECH_KMEANS_HPP_
