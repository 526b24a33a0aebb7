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

#include "segpriv/data.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "segpriv/random.h"
#include "segpriv/status_macros.h"

namespace segpriv {

absl::Status ValidatePair(const ImageMaskPair& pair, int num_classes) {
  if (pair.image.height() != pair.mask.height() ||
      pair.image.width() != pair.mask.width()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "sample %s: image is %dx%d but mask is %dx%d", pair.id,
        pair.image.height(), pair.image.width(), pair.mask.height(),
        pair.mask.width()));
  }
  for (uint8_t label : pair.mask.labels()) {
    if (label >= num_classes) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "sample %s: label %d outside [0, %d)", pair.id, label, num_classes));
    }
  }
  for (float v : pair.image.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      return absl::InvalidArgumentError(
          absl::StrCat("sample ", pair.id, ": image value outside [0,1]"));
    }
  }
  return absl::OkStatus();
}

absl::StatusOr<DatasetSplits> MakeSplits(std::span<const ImageMaskPair> dataset,
                                         const SplitSizes& sizes,
                                         uint64_t seed) {
  if (sizes.victim_train < 0 || sizes.victim_test < 0 ||
      sizes.shadow_train < 0 || sizes.shadow_test < 0 || sizes.reference < 0) {
    return absl::InvalidArgumentError("split sizes must be non-negative");
  }
  if (static_cast<size_t>(sizes.total()) > dataset.size()) {
    return absl::OutOfRangeError(absl::StrFormat(
        "insufficient data: splits need %d samples, dataset has %d",
        sizes.total(), dataset.size()));
  }
  std::unordered_set<std::string> seen;
  for (const auto& pair : dataset) {
    if (!seen.insert(pair.id).second) {
      return absl::InvalidArgumentError(
          absl::StrCat("duplicate sample id: ", pair.id));
    }
  }

  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplits splits;
  size_t next = 0;
  auto take = [&](Dataset& out, int count) {
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(dataset[order[next++]]);
  };
  take(splits.victim_train, sizes.victim_train);
  take(splits.victim_test, sizes.victim_test);
  take(splits.shadow_train, sizes.shadow_train);
  take(splits.shadow_test, sizes.shadow_test);
  take(splits.reference, sizes.reference);
  return splits;
}

absl::Status CheckSplitsDisjoint(const DatasetSplits& splits) {
  std::unordered_map<std::string, const char*> owner;
  const std::pair<const char*, const Dataset*> subsets[] = {
      {"victim_train", &splits.victim_train},
      {"victim_test", &splits.victim_test},
      {"shadow_train", &splits.shadow_train},
      {"shadow_test", &splits.shadow_test},
      {"reference", &splits.reference}};
  for (const auto& [name, subset] : subsets) {
    for (const auto& pair : *subset) {
      auto [it, inserted] = owner.emplace(pair.id, name);
      if (!inserted) {
        return absl::FailedPreconditionError(absl::StrCat(
            "sample ", pair.id, " appears in both ", it->second, " and ", name));
      }
    }
  }
  return absl::OkStatus();
}

nlohmann::json SplitManifest(const DatasetSplits& splits, uint64_t seed) {
  auto ids = [](const Dataset& d) {
    std::vector<std::string> out;
    out.reserve(d.size());
    for (const auto& p : d) out.push_back(p.id);
    return out;
  };
  return {{"seed", seed},
          {"victim_train", ids(splits.victim_train)},
          {"victim_test", ids(splits.victim_test)},
          {"shadow_train", ids(splits.shadow_train)},
          {"shadow_test", ids(splits.shadow_test)},
          {"reference", ids(splits.reference)}};
}

ImageMaskPair ResizePair(const ImageMaskPair& pair, int height, int width) {
  const int in_h = pair.image.height();
  const int in_w = pair.image.width();
  if (in_h == height && in_w == width) return pair;

  ImageMaskPair out;
  out.id = pair.id;
  out.image = Tensor(pair.image.channels(), height, width);
  out.mask = LabelMask(height, width);
  const double sy = static_cast<double>(in_h) / height;
  const double sx = static_cast<double>(in_w) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, in_h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - y0;
    const int ny = std::min(static_cast<int>(y * sy), in_h - 1);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, in_w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < pair.image.channels(); ++c) {
        const double top = (1 - wx) * pair.image.at(c, y0, x0) +
                           wx * pair.image.at(c, y0, x1);
        const double bottom = (1 - wx) * pair.image.at(c, y1, x0) +
                              wx * pair.image.at(c, y1, x1);
        out.image.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
      const int nx = std::min(static_cast<int>(x * sx), in_w - 1);
      out.mask.at(y, x) = pair.mask.at(ny, nx);
    }
  }
  return out;
}

absl::Status ValidateSyntheticSpec(const SyntheticTaskSpec& spec) {
  if (spec.height < 32 || spec.width < 32) {
    return absl::InvalidArgumentError("synthetic images must be at least 32x32");
  }
  if (spec.num_classes < 2) {
    return absl::InvalidArgumentError("num_classes must be at least 2");
  }
  if (spec.channels != 1 && spec.channels != 3) {
    return absl::InvalidArgumentError("channels must be 1 or 3");
  }
  if (spec.min_shapes < 0 || spec.max_shapes < spec.min_shapes) {
    return absl::InvalidArgumentError("invalid shapes-per-image range");
  }
  if (spec.noise_level < 0 || spec.min_contrast <= 0 ||
      spec.max_contrast < spec.min_contrast || spec.max_contrast > 0.5) {
    return absl::InvalidArgumentError("invalid noise or contrast settings");
  }
  if (spec.distractors < 0) {
    return absl::InvalidArgumentError("distractors must be non-negative");
  }
  return absl::OkStatus();
}

namespace {

struct Shape {
  bool ellipse;
  double cy, cx, ry, rx;

  bool Contains(int y, int x) const {
    const double dy = (y + 0.5 - cy) / ry;
    const double dx = (x + 0.5 - cx) / rx;
    if (ellipse) return dy * dy + dx * dx <= 1.0;
    return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
  }
};

Shape RandomShape(const SyntheticTaskSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double min_r = spec.height / 10.0;
  const double max_r = spec.height / 4.0;
  Shape s;
  s.ellipse = unit(rng) < 0.5;
  s.ry = min_r + (max_r - min_r) * unit(rng);
  s.rx = (min_r + (max_r - min_r) * unit(rng)) * spec.width / spec.height;
  s.cy = s.ry + (spec.height - 2 * s.ry) * unit(rng);
  s.cx = s.rx + (spec.width - 2 * s.rx) * unit(rng);
  return s;
}

ImageMaskPair RenderSample(const SyntheticTaskSpec& spec, int index) {
  Rng rng(DeriveSeed(spec.seed, static_cast<uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int h = spec.height;
  const int w = spec.width;

  ImageMaskPair pair;
  pair.id = absl::StrFormat("syn-%06d", index);
  std::vector<double> canvas(static_cast<size_t>(h) * w);
  const double background = 0.2 + 0.2 * unit(rng);
  std::fill(canvas.begin(), canvas.end(), background);
  pair.mask = LabelMask(h, w, 0);

  auto contrast = [&]() {
    return spec.min_contrast + (spec.max_contrast - spec.min_contrast) * unit(rng);
  };
  for (int d = 0; d < spec.distractors; ++d) {
    const Shape s = RandomShape(spec, rng);
    const double value = background - 0.5 * contrast();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (s.Contains(y, x)) canvas[y * w + x] = value;
      }
    }
  }
  std::uniform_int_distribution<int> count(spec.min_shapes, spec.max_shapes);
  std::uniform_int_distribution<int> klass(1, spec.num_classes - 1);
  const int shapes = count(rng);
  for (int k = 0; k < shapes; ++k) {
    const Shape s = RandomShape(spec, rng);
    const int label = klass(rng);
    const double value =
        background + contrast() * label / (spec.num_classes - 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (s.Contains(y, x)) {
          canvas[y * w + x] = value;
          pair.mask.at(y, x) = static_cast<uint8_t>(label);
        }
      }
    }
  }

  pair.image = Tensor(spec.channels, h, w);
  std::normal_distribution<double> noise(0.0, spec.noise_level);
  for (int c = 0; c < spec.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double v = canvas[y * w + x];
        if (spec.noise_level > 0) v += noise(rng);
        pair.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return pair;
}

}  // namespace

absl::StatusOr<Dataset> GenerateSyntheticDataset(const SyntheticTaskSpec& spec,
                                                 int n) {
  RETURN_IF_ERROR(ValidateSyntheticSpec(spec));
  if (n < 1) return absl::InvalidArgumentError("n must be at least 1");
  Dataset out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(RenderSample(spec, i));
  return out;
}

// ------------------------------------------------------------------ PNG

namespace {

absl::StatusOr<std::vector<uint8_t>> ReadPng(const std::filesystem::path& path,
                                             png_uint_32 format, int& height,
                                             int& width) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    return absl::NotFoundError(
        absl::StrCat("cannot read ", path.string(), ": ", image.message));
  }
  image.format = format;
  std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    return absl::DataLossError(
        absl::StrCat("corrupt PNG ", path.string(), ": ", image.message));
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return buffer;
}

absl::Status WritePng(const std::filesystem::path& path, png_uint_32 format,
                      int height, int width, const std::vector<uint8_t>& pixels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.format = format;
  image.height = height;
  image.width = width;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0,
                               nullptr)) {
    return absl::InternalError(
        absl::StrCat("cannot write ", path.string(), ": ", image.message));
  }
  return absl::OkStatus();
}

}  // namespace

absl::StatusOr<Tensor> ReadPngImage(const std::filesystem::path& path) {
  // Probe the colour type first so grayscale stays single-channel.
  png_image probe{};
  probe.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&probe, path.c_str())) {
    return absl::NotFoundError(absl::StrCat("cannot read ", path.string()));
  }
  const bool color = (probe.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png_image_free(&probe);

  int h = 0;
  int w = 0;
  const int channels = color ? 3 : 1;
  ASSIGN_OR_RETURN(
      std::vector<uint8_t> pixels,
      ReadPng(path, color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, h, w));
  Tensor out(channels, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        out.at(c, y, x) = pixels[(y * w + x) * channels + c] / 255.0f;
      }
    }
  }
  return out;
}

absl::StatusOr<LabelMask> ReadPngMask(const std::filesystem::path& path) {
  int h = 0;
  int w = 0;
  ASSIGN_OR_RETURN(std::vector<uint8_t> pixels,
                   ReadPng(path, PNG_FORMAT_GRAY, h, w));
  LabelMask mask(h, w);
  std::copy(pixels.begin(), pixels.end(), mask.labels().begin());
  return mask;
}

absl::Status WritePngImage(const std::filesystem::path& path,
                           const Tensor& image) {
  const int channels = image.channels();
  if (channels != 1 && channels != 3) {
    return absl::InvalidArgumentError("PNG images must have 1 or 3 channels");
  }
  std::vector<uint8_t> pixels(image.size());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        pixels[(y * image.width() + x) * channels + c] =
            static_cast<uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return WritePng(path, channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY,
                  image.height(), image.width(), pixels);
}

absl::Status WritePngMask(const std::filesystem::path& path,
                          const LabelMask& mask) {
  std::vector<uint8_t> pixels(mask.labels().begin(), mask.labels().end());
  return WritePng(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), pixels);
}

absl::StatusOr<Dataset> LoadDirectoryDataset(const std::filesystem::path& root,
                                             int num_classes) {
  const auto image_dir = root / "images";
  const auto mask_dir = root / "masks";
  if (!std::filesystem::is_directory(image_dir) ||
      !std::filesystem::is_directory(mask_dir)) {
    return absl::NotFoundError(absl::StrCat(
        root.string(), " must contain images/ and masks/ subdirectories"));
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(image_dir)) {
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  Dataset out;
  out.reserve(files.size());
  for (const auto& file : files) {
    ImageMaskPair pair;
    pair.id = file.stem().string();
    ASSIGN_OR_RETURN(pair.image, ReadPngImage(file));
    ASSIGN_OR_RETURN(pair.mask, ReadPngMask(mask_dir / file.filename()));
    RETURN_IF_ERROR(ValidatePair(pair, num_classes));
    out.push_back(std::move(pair));
  }
  if (out.empty()) {
    return absl::NotFoundError(
        absl::StrCat("no PNG images under ", image_dir.string()));
  }
  return out;
}

}  // namespace segpriv
