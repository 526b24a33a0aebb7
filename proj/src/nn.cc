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

#include "segpriv/nn.h"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace segpriv::nn {
namespace {

void HeInit(Parameter& p, int fan_in, Rng& rng) {
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / fan_in));
  for (float& v : p.value) v = dist(rng);
}

// Copies `input` into a (H+2) x (W+2) zero-bordered buffer per channel.
Tensor PadByOne(const Tensor& input) {
  const int h = input.height();
  const int w = input.width();
  Tensor padded(input.channels(), h + 2, w + 2);
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      std::memcpy(&padded.at(c, y + 1, 1), input.channel(c) + y * w,
                  sizeof(float) * w);
    }
  }
  return padded;
}

float Dot(const float* a, const float* b, int n) {
  float s = 0.0f;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void Axpy(float alpha, const float* x, float* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void AddInPlace(Tensor& accumulator, const Tensor& addend) {
  auto acc = accumulator.values();
  auto add = addend.values();
  for (size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
}

void SplitChannels(const Tensor& joined, int first_channels, Tensor& first,
                   Tensor& second) {
  const int h = joined.height();
  const int w = joined.width();
  first = Tensor(first_channels, h, w);
  second = Tensor(joined.channels() - first_channels, h, w);
  const size_t split = first.size();
  auto src = joined.values();
  std::copy(src.begin(), src.begin() + split, first.values().begin());
  std::copy(src.begin() + split, src.end(), second.values().begin());
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, Rng& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      weight_(static_cast<size_t>(out_channels) * in_channels * kernel *
              kernel),
      bias_(out_channels) {
  HeInit(weight_, in_channels * kernel * kernel, rng);
}

Tensor Conv2d::Forward(const Tensor& input, Tape* tape) const {
  const int h = input.height();
  const int w = input.width();
  Tensor out(out_channels_, h, w);
  if (kernel_ == 1) {
    const int n = h * w;
    for (int oc = 0; oc < out_channels_; ++oc) {
      float* dst = out.channel(oc);
      std::fill(dst, dst + n, bias_.value[oc]);
      for (int ic = 0; ic < in_channels_; ++ic) {
        Axpy(weight_.value[oc * in_channels_ + ic], input.channel(ic), dst, n);
      }
    }
    if (tape) tape->Push(input);
    return out;
  }
  Tensor padded = PadByOne(input);
  const int pw = w + 2;
  for (int oc = 0; oc < out_channels_; ++oc) {
    float* dst = out.channel(oc);
    std::fill(dst, dst + h * w, bias_.value[oc]);
    for (int ic = 0; ic < in_channels_; ++ic) {
      const float* kw = &weight_.value[(oc * in_channels_ + ic) * 9];
      const float* src = padded.channel(ic);
      for (int y = 0; y < h; ++y) {
        float* row = dst + y * w;
        for (int ky = 0; ky < 3; ++ky) {
          const float* s = src + (y + ky) * pw;
          const float k0 = kw[ky * 3 + 0];
          const float k1 = kw[ky * 3 + 1];
          const float k2 = kw[ky * 3 + 2];
          for (int x = 0; x < w; ++x) {
            row[x] += k0 * s[x] + k1 * s[x + 1] + k2 * s[x + 2];
          }
        }
      }
    }
  }
  if (tape) tape->Push(std::move(padded));
  return out;
}

Tensor Conv2d::Backward(const Tensor& grad_output, Tape& tape) {
  const int h = grad_output.height();
  const int w = grad_output.width();
  Tensor cached = tape.Pop();
  for (int oc = 0; oc < out_channels_; ++oc) {
    const float* g = grad_output.channel(oc);
    float s = 0.0f;
    for (int i = 0; i < h * w; ++i) s += g[i];
    bias_.grad[oc] += s;
  }
  if (kernel_ == 1) {
    const int n = h * w;
    Tensor grad_in(in_channels_, h, w);
    for (int oc = 0; oc < out_channels_; ++oc) {
      const float* g = grad_output.channel(oc);
      for (int ic = 0; ic < in_channels_; ++ic) {
        const int wi = oc * in_channels_ + ic;
        weight_.grad[wi] += Dot(g, cached.channel(ic), n);
        Axpy(weight_.value[wi], g, grad_in.channel(ic), n);
      }
    }
    return grad_in;
  }
  const int pw = w + 2;
  Tensor grad_padded(in_channels_, h + 2, w + 2);
  for (int oc = 0; oc < out_channels_; ++oc) {
    const float* g = grad_output.channel(oc);
    for (int ic = 0; ic < in_channels_; ++ic) {
      const int base = (oc * in_channels_ + ic) * 9;
      const float* src = cached.channel(ic);
      float* gsrc = grad_padded.channel(ic);
      float acc[9] = {};
      for (int y = 0; y < h; ++y) {
        const float* grow = g + y * w;
        for (int ky = 0; ky < 3; ++ky) {
          const float* s = src + (y + ky) * pw;
          float* gs = gsrc + (y + ky) * pw;
          const float k0 = weight_.value[base + ky * 3 + 0];
          const float k1 = weight_.value[base + ky * 3 + 1];
          const float k2 = weight_.value[base + ky * 3 + 2];
          float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f;
          for (int x = 0; x < w; ++x) {
            const float gx = grow[x];
            a0 += gx * s[x];
            a1 += gx * s[x + 1];
            a2 += gx * s[x + 2];
          }
          for (int x = 0; x < w; ++x) {
            gs[x] += k0 * grow[x];
            gs[x + 1] += k1 * grow[x];
            gs[x + 2] += k2 * grow[x];
          }
          acc[ky * 3 + 0] += a0;
          acc[ky * 3 + 1] += a1;
          acc[ky * 3 + 2] += a2;
        }
      }
      for (int k = 0; k < 9; ++k) weight_.grad[base + k] += acc[k];
    }
  }
  Tensor grad_in(in_channels_, h, w);
  for (int c = 0; c < in_channels_; ++c) {
    for (int y = 0; y < h; ++y) {
      std::memcpy(&grad_in.at(c, y, 0), &grad_padded.at(c, y + 1, 1),
                  sizeof(float) * w);
    }
  }
  return grad_in;
}

void Conv2d::CollectParameters(std::vector<Parameter*>& params) {
  params.push_back(&weight_);
  params.push_back(&bias_);
}

// ------------------------------------------------------ DepthwiseConv3x3

DepthwiseConv3x3::DepthwiseConv3x3(int channels, Rng& rng)
    : channels_(channels), weight_(static_cast<size_t>(channels) * 9),
      bias_(channels) {
  HeInit(weight_, 9, rng);
}

Tensor DepthwiseConv3x3::Forward(const Tensor& input, Tape* tape) const {
  const int h = input.height();
  const int w = input.width();
  const int pw = w + 2;
  Tensor padded = PadByOne(input);
  Tensor out(channels_, h, w);
  for (int c = 0; c < channels_; ++c) {
    const float* kw = &weight_.value[c * 9];
    const float* src = padded.channel(c);
    float* dst = out.channel(c);
    for (int y = 0; y < h; ++y) {
      float* row = dst + y * w;
      std::fill(row, row + w, bias_.value[c]);
      for (int ky = 0; ky < 3; ++ky) {
        const float* s = src + (y + ky) * pw;
        for (int x = 0; x < w; ++x) {
          row[x] += kw[ky * 3] * s[x] + kw[ky * 3 + 1] * s[x + 1] +
                    kw[ky * 3 + 2] * s[x + 2];
        }
      }
    }
  }
  if (tape) tape->Push(std::move(padded));
  return out;
}

Tensor DepthwiseConv3x3::Backward(const Tensor& grad_output, Tape& tape) {
  const int h = grad_output.height();
  const int w = grad_output.width();
  const int pw = w + 2;
  Tensor cached = tape.Pop();
  Tensor grad_padded(channels_, h + 2, w + 2);
  for (int c = 0; c < channels_; ++c) {
    const float* g = grad_output.channel(c);
    const float* src = cached.channel(c);
    float* gsrc = grad_padded.channel(c);
    float bsum = 0.0f;
    for (int y = 0; y < h; ++y) {
      const float* grow = g + y * w;
      for (int x = 0; x < w; ++x) bsum += grow[x];
      for (int ky = 0; ky < 3; ++ky) {
        const float* s = src + (y + ky) * pw;
        float* gs = gsrc + (y + ky) * pw;
        for (int kx = 0; kx < 3; ++kx) {
          const float k = weight_.value[c * 9 + ky * 3 + kx];
          weight_.grad[c * 9 + ky * 3 + kx] += Dot(grow, s + kx, w);
          Axpy(k, grow, gs + kx, w);
        }
      }
    }
    bias_.grad[c] += bsum;
  }
  Tensor grad_in(channels_, h, w);
  for (int c = 0; c < channels_; ++c) {
    for (int y = 0; y < h; ++y) {
      std::memcpy(&grad_in.at(c, y, 0), &grad_padded.at(c, y + 1, 1),
                  sizeof(float) * w);
    }
  }
  return grad_in;
}

void DepthwiseConv3x3::CollectParameters(std::vector<Parameter*>& params) {
  params.push_back(&weight_);
  params.push_back(&bias_);
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::Forward(const Tensor& input, Tape* tape) const {
  Tensor out = input;
  for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
  if (tape) tape->Push(out);
  return out;
}

Tensor ReLU::Backward(const Tensor& grad_output, Tape& tape) {
  Tensor out = tape.Pop();
  Tensor grad = grad_output;
  auto g = grad.values();
  auto o = out.values();
  for (size_t i = 0; i < g.size(); ++i) {
    if (o[i] <= 0.0f) g[i] = 0.0f;
  }
  return grad;
}

// -------------------------------------------------------------- MaxPool2

Tensor MaxPool2::Forward(const Tensor& input, Tape* tape) const {
  const int oh = input.height() / 2;
  const int ow = input.width() / 2;
  Tensor out(input.channels(), oh, ow);
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        out.at(c, y, x) = std::max(
            std::max(input.at(c, 2 * y, 2 * x), input.at(c, 2 * y, 2 * x + 1)),
            std::max(input.at(c, 2 * y + 1, 2 * x),
                     input.at(c, 2 * y + 1, 2 * x + 1)));
      }
    }
  }
  if (tape) tape->Push(input);
  return out;
}

Tensor MaxPool2::Backward(const Tensor& grad_output, Tape& tape) {
  Tensor input = tape.Pop();
  Tensor grad(input.channels(), input.height(), input.width());
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < grad_output.height(); ++y) {
      for (int x = 0; x < grad_output.width(); ++x) {
        // First maximum in row-major order receives the gradient.
        int by = 2 * y;
        int bx = 2 * x;
        float best = input.at(c, by, bx);
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const float v = input.at(c, 2 * y + dy, 2 * x + dx);
            if (v > best) {
              best = v;
              by = 2 * y + dy;
              bx = 2 * x + dx;
            }
          }
        }
        grad.at(c, by, bx) += grad_output.at(c, y, x);
      }
    }
  }
  return grad;
}

// ------------------------------------------------------------- Upsample2

Tensor Upsample2::Forward(const Tensor& input, Tape* tape) const {
  Tensor out(input.channels(), input.height() * 2, input.width() * 2);
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) {
        out.at(c, y, x) = input.at(c, y / 2, x / 2);
      }
    }
  }
  return out;
}

Tensor Upsample2::Backward(const Tensor& grad_output, Tape& tape) {
  Tensor grad(grad_output.channels(), grad_output.height() / 2,
              grad_output.width() / 2);
  for (int c = 0; c < grad_output.channels(); ++c) {
    for (int y = 0; y < grad_output.height(); ++y) {
      for (int x = 0; x < grad_output.width(); ++x) {
        grad.at(c, y / 2, x / 2) += grad_output.at(c, y, x);
      }
    }
  }
  return grad;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::Forward(const Tensor& input, Tape* tape) const {
  Tensor out(input.channels(), 1, 1);
  const size_t n = input.plane_size();
  for (int c = 0; c < input.channels(); ++c) {
    const float* src = input.channel(c);
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += src[i];
    out.at(c, 0, 0) = static_cast<float>(s / n);
  }
  // Only the shape is needed for the backward pass.
  if (tape) tape->Push(Tensor(input.channels(), input.height(), input.width()));
  return out;
}

Tensor GlobalAvgPool::Backward(const Tensor& grad_output, Tape& tape) {
  Tensor grad = tape.Pop();
  const size_t n = grad.plane_size();
  for (int c = 0; c < grad.channels(); ++c) {
    const float g = grad_output.at(c, 0, 0) / static_cast<float>(n);
    float* dst = grad.channel(c);
    std::fill(dst, dst + n, g);
  }
  return grad;
}

Tensor GlobalContext::Forward(const Tensor& input, Tape* tape) const {
  const int c_in = input.channels();
  const size_t n = input.plane_size();
  Tensor out(2 * c_in, input.height(), input.width());
  std::copy(input.values().begin(), input.values().end(), out.values().begin());
  for (int c = 0; c < c_in; ++c) {
    const float* src = input.channel(c);
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += src[i];
    float* dst = out.channel(c_in + c);
    std::fill(dst, dst + n, static_cast<float>(s / n));
  }
  return out;
}

Tensor GlobalContext::Backward(const Tensor& grad_output, Tape& tape) {
  const int c_in = grad_output.channels() / 2;
  const size_t n = grad_output.plane_size();
  Tensor grad(c_in, grad_output.height(), grad_output.width());
  for (int c = 0; c < c_in; ++c) {
    const float* g_ctx = grad_output.channel(c_in + c);
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += g_ctx[i];
    const float share = static_cast<float>(s / n);
    const float* g_id = grad_output.channel(c);
    float* dst = grad.channel(c);
    for (size_t i = 0; i < n; ++i) dst[i] = g_id[i] + share;
  }
  return grad;
}

// ----------------------------------------------------------------- Dense

Dense::Dense(int in_features, int out_features, Rng& rng)
    : in_features_(in_features),
      out_features_(out_features),
      weight_(static_cast<size_t>(in_features) * out_features),
      bias_(out_features) {
  HeInit(weight_, in_features, rng);
}

Tensor Dense::Forward(const Tensor& input, Tape* tape) const {
  Tensor out(out_features_, 1, 1);
  const float* x = input.values().data();
  for (int o = 0; o < out_features_; ++o) {
    out.at(o, 0, 0) =
        bias_.value[o] + Dot(&weight_.value[o * in_features_], x, in_features_);
  }
  if (tape) tape->Push(input);
  return out;
}

Tensor Dense::Backward(const Tensor& grad_output, Tape& tape) {
  Tensor input = tape.Pop();
  Tensor grad(input.channels(), input.height(), input.width());
  const float* x = input.values().data();
  float* gx = grad.values().data();
  for (int o = 0; o < out_features_; ++o) {
    const float g = grad_output.at(o, 0, 0);
    bias_.grad[o] += g;
    Axpy(g, x, &weight_.grad[o * in_features_], in_features_);
    Axpy(g, &weight_.value[o * in_features_], gx, in_features_);
  }
  return grad;
}

void Dense::CollectParameters(std::vector<Parameter*>& params) {
  params.push_back(&weight_);
  params.push_back(&bias_);
}

// ------------------------------------------------------------ Sequential

Tensor Sequential::Forward(const Tensor& input, Tape* tape) const {
  Tensor x = input;
  for (const auto& layer : layers_) x = layer->Forward(x, tape);
  return x;
}

Tensor Sequential::Backward(const Tensor& grad_output, Tape& tape) {
  Tensor g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = (*it)->Backward(g, tape);
  }
  return g;
}

void Sequential::CollectParameters(std::vector<Parameter*>& params) {
  for (auto& layer : layers_) layer->CollectParameters(params);
}

// -------------------------------------------------------------- Residual

Tensor Residual::Forward(const Tensor& input, Tape* tape) const {
  Tensor y = body_->Forward(input, tape);
  if (shortcut_) {
    AddInPlace(y, shortcut_->Forward(input, tape));
  } else {
    AddInPlace(y, input);
  }
  return y;
}

Tensor Residual::Backward(const Tensor& grad_output, Tape& tape) {
  // The shortcut recorded last, so it unwinds first.
  Tensor g_short =
      shortcut_ ? shortcut_->Backward(grad_output, tape) : grad_output;
  Tensor g_body = body_->Backward(grad_output, tape);
  AddInPlace(g_body, g_short);
  return g_body;
}

void Residual::CollectParameters(std::vector<Parameter*>& params) {
  body_->CollectParameters(params);
  if (shortcut_) shortcut_->CollectParameters(params);
}

}  // namespace segpriv::nn
