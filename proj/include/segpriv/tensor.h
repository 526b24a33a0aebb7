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

#ifndef SEGPRIV_TENSOR_H_
#define SEGPRIV_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace segpriv {

// Dense channel-major (C x H x W) float grid. Used for images, per-pixel
// probability masks, logits and attack-model inputs alike.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, float fill = 0.0f)
      : channels_(channels),
        height_(height),
        width_(width),
        data_(static_cast<size_t>(channels) * height * width, fill) {}

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  size_t plane_size() const { return static_cast<size_t>(height_) * width_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int c, int y, int x) {
    return data_[(static_cast<size_t>(c) * height_ + y) * width_ + x];
  }
  float at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * height_ + y) * width_ + x];
  }

  float* channel(int c) { return data_.data() + c * plane_size(); }
  const float* channel(int c) const { return data_.data() + c * plane_size(); }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  bool SameShape(const Tensor& other) const {
    return channels_ == other.channels_ && height_ == other.height_ &&
           width_ == other.width_;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

// H x W grid of integer class labels. 0 is background.
class LabelMask {
 public:
  LabelMask() = default;
  LabelMask(int height, int width, uint8_t fill = 0)
      : height_(height),
        width_(width),
        labels_(static_cast<size_t>(height) * width, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  size_t size() const { return labels_.size(); }

  uint8_t& at(int y, int x) {
    return labels_[static_cast<size_t>(y) * width_ + x];
  }
  uint8_t at(int y, int x) const {
    return labels_[static_cast<size_t>(y) * width_ + x];
  }

  std::span<uint8_t> labels() { return labels_; }
  std::span<const uint8_t> labels() const { return labels_; }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<uint8_t> labels_;
};

// Concatenates two tensors of equal spatial size along the channel axis.
Tensor ConcatChannels(const Tensor& first, const Tensor& second);

// 64-bit FNV-1a over the raw bytes of a tensor.
uint64_t Fingerprint(const Tensor& tensor, uint64_t seed = 1469598103934665603ull);

}  // namespace segpriv

#endif  // SEGPRIV_TENSOR_H_
