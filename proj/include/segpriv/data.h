//
// Copyright 2026 The seg-privacy-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef SEGPRIV_DATA_H_
#define SEGPRIV_DATA_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "nlohmann/json.hpp"
#include "segpriv/tensor.h"

namespace segpriv {

// One sample: an image in [0,1] and its ground-truth label mask.
struct ImageMaskPair {
  std::string id;
  Tensor image;    // C x H x W, C in {1, 3}
  LabelMask mask;  // H x W, labels < num_classes
};

using Dataset = std::vector<ImageMaskPair>;

// Checks shape agreement, label range and the [0,1] image range.
absl::Status ValidatePair(const ImageMaskPair& pair, int num_classes);

struct SplitSizes {
  int victim_train = 0;
  int victim_test = 0;
  int shadow_train = 0;
  int shadow_test = 0;
  int reference = 0;

  int total() const {
    return victim_train + victim_test + shadow_train + shadow_test + reference;
  }
};

// Five pairwise-disjoint subsets. `reference` may be empty.
struct DatasetSplits {
  Dataset victim_train;
  Dataset victim_test;
  Dataset shadow_train;
  Dataset shadow_test;
  Dataset reference;
};

// Draws the requested subsets without replacement from a seeded shuffle of
// `dataset`. Fails with kOutOfRange when the dataset is too small and with
// kInvalidArgument on duplicate ids.
absl::StatusOr<DatasetSplits> MakeSplits(std::span<const ImageMaskPair> dataset,
                                         const SplitSizes& sizes,
                                         uint64_t seed);

// Returns an error naming the first id found in two subsets.
absl::Status CheckSplitsDisjoint(const DatasetSplits& splits);

// Split manifest: {"seed": .., "victim_train": [ids], ...}.
nlohmann::json SplitManifest(const DatasetSplits& splits, uint64_t seed);

// Image: bilinear (half-pixel centres). Mask: nearest neighbour.
ImageMaskPair ResizePair(const ImageMaskPair& pair, int height, int width);

struct SyntheticTaskSpec {
  int height = 32;
  int width = 32;
  int channels = 1;
  int num_classes = 2;
  int min_shapes = 1;
  int max_shapes = 3;
  double noise_level = 0.25;
  // Intensity offset of labelled shapes above the background.
  double min_contrast = 0.1;
  double max_contrast = 0.3;
  // Unlabelled darker blobs painted underneath the labelled shapes.
  int distractors = 2;
  uint64_t seed = 0;
};

absl::Status ValidateSyntheticSpec(const SyntheticTaskSpec& spec);

// Sample i depends only on (spec, i), so a dataset of size n is a prefix of
// any larger dataset generated from the same spec.
absl::StatusOr<Dataset> GenerateSyntheticDataset(const SyntheticTaskSpec& spec,
                                                 int n);

// Loads `root/images/<id>.png` with `root/masks/<id>.png`. Images are scaled
// to [0,1]; mask pixel values are class labels.
absl::StatusOr<Dataset> LoadDirectoryDataset(const std::filesystem::path& root,
                                             int num_classes);

// 8-bit PNG helpers (1 or 3 channels).
absl::StatusOr<Tensor> ReadPngImage(const std::filesystem::path& path);
absl::StatusOr<LabelMask> ReadPngMask(const std::filesystem::path& path);
absl::Status WritePngImage(const std::filesystem::path& path,
                           const Tensor& image);
absl::Status WritePngMask(const std::filesystem::path& path,
                          const LabelMask& mask);

}  // namespace segpriv

#endif  // SEGPRIV_DATA_H_
