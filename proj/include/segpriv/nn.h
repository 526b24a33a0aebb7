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

// Minimal single-sample neural network layers with explicit backward passes.
//
// Layers hold parameters only. Activations needed by the backward pass are
// pushed onto a caller-owned Tape during Forward and popped in reverse order
// during Backward, so a frozen network can run inference from several
// threads at once (pass a null tape).

#ifndef SEGPRIV_NN_H_
#define SEGPRIV_NN_H_

#include <memory>
#include <string>
#include <vector>

#include "segpriv/random.h"
#include "segpriv/tensor.h"

namespace segpriv::nn {

struct Parameter {
  std::vector<float> value;
  std::vector<float> grad;

  explicit Parameter(size_t n = 0) : value(n, 0.0f), grad(n, 0.0f) {}
};

class Tape {
 public:
  void Push(Tensor t) { stack_.push_back(std::move(t)); }
  Tensor Pop() {
    Tensor t = std::move(stack_.back());
    stack_.pop_back();
    return t;
  }
  bool empty() const { return stack_.empty(); }
  void Clear() { stack_.clear(); }

 private:
  std::vector<Tensor> stack_;
};

class Layer {
 public:
  virtual ~Layer() = default;

  // `tape` may be null, in which case nothing is recorded.
  virtual Tensor Forward(const Tensor& input, Tape* tape) const = 0;
  // Accumulates parameter gradients and returns the gradient w.r.t. input.
  virtual Tensor Backward(const Tensor& grad_output, Tape& tape) = 0;
  virtual void CollectParameters(std::vector<Parameter*>& /*params*/) {}
};

// Square convolution with stride 1 and "same" zero padding (kernel 1 or 3).
class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, Rng& rng);

  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
  void CollectParameters(std::vector<Parameter*>& params) override;

 private:
  int in_channels_;
  int out_channels_;
  int kernel_;
  Parameter weight_;  // [out][in][ky][kx]
  Parameter bias_;
};

// Per-channel 3x3 convolution, "same" padding.
class DepthwiseConv3x3 : public Layer {
 public:
  DepthwiseConv3x3(int channels, Rng& rng);

  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
  void CollectParameters(std::vector<Parameter*>& params) override;

 private:
  int channels_;
  Parameter weight_;  // [c][ky][kx]
  Parameter bias_;
};

class ReLU : public Layer {
 public:
  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
};

// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped.
class MaxPool2 : public Layer {
 public:
  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
};

// Nearest-neighbour 2x upsampling.
class Upsample2 : public Layer {
 public:
  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
};

// Spatial mean per channel; output is C x 1 x 1.
class GlobalAvgPool : public Layer {
 public:
  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
};

// Appends the per-channel spatial mean, broadcast over the plane, so every
// output position sees image-wide context. Output has 2C channels.
class GlobalContext : public Layer {
 public:
  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
};

// Fully connected layer over the flattened input; output is out x 1 x 1.
class Dense : public Layer {
 public:
  Dense(int in_features, int out_features, Rng& rng);

  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
  void CollectParameters(std::vector<Parameter*>& params) override;

 private:
  int in_features_;
  int out_features_;
  Parameter weight_;  // [out][in]
  Parameter bias_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;

  Sequential& Add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <typename T, typename... Args>
  Sequential& Emplace(Args&&... args) {
    return Add(std::make_unique<T>(std::forward<Args>(args)...));
  }

  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
  void CollectParameters(std::vector<Parameter*>& params) override;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// y = body(x) + shortcut(x); identity shortcut when none is given.
class Residual : public Layer {
 public:
  explicit Residual(std::unique_ptr<Layer> body,
                    std::unique_ptr<Layer> shortcut = nullptr)
      : body_(std::move(body)), shortcut_(std::move(shortcut)) {}

  Tensor Forward(const Tensor& input, Tape* tape) const override;
  Tensor Backward(const Tensor& grad_output, Tape& tape) override;
  void CollectParameters(std::vector<Parameter*>& params) override;

 private:
  std::unique_ptr<Layer> body_;
  std::unique_ptr<Layer> shortcut_;
};

// Splits a tensor produced by ConcatChannels back into its two parts.
void SplitChannels(const Tensor& joined, int first_channels, Tensor& first,
                   Tensor& second);

void AddInPlace(Tensor& accumulator, const Tensor& addend);

}  // namespace segpriv::nn

#endif  // SEGPRIV_NN_H_
