#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrlc/tensor.hpp"

namespace lrlc {

struct DatasetSplit {
  std::string name;  // train | validation | test
  TensorF images;    // [N, H, W, C]
  std::vector<int> labels;
  std::uint64_t checksum = 0;  // FNV-1a over source payload bytes and labels

  std::size_t size() const { return labels.size(); }
};

/// Train/validation/test triple. Loaders produce raw pixels in [0, 1];
/// standardize() then applies the training split's per-channel mean/std to
/// all three splits.
struct Dataset {
  std::string name;
  DatasetSplit train, validation, test;
  std::vector<float> mean, stdev;  // per channel, filled by standardize()
  bool standardized = false;
  std::size_t classes = 10;

  std::size_t height() const { return train.images.extent(1); }
  std::size_t width() const { return train.images.extent(2); }
  std::size_t channels() const { return train.images.extent(3); }
};

/// MNIST IDX reader (raw or gzip): big-endian headers, image magic 2051,
/// label magic 2049. Validation is the tail 5000 of the official training
/// set, leaving 55000/5000/10000.
Dataset load_mnist(const std::string& dir, bool standardize_pixels = true);

/// CIFAR-10 binary reader: 3073-byte records (label + channel-major pixels),
/// converted to H x W x C. Splits 45000/5000/10000.
Dataset load_cifar10(const std::string& dir, bool standardize_pixels = true);

/// In-place standardization by training-split statistics.
void standardize(Dataset& data);

struct TranslateSpec {
  std::size_t canvas = 0;     // 0 = 1.5x the source extent (48 for 32, 42 for 28)
  std::uint64_t seed = 1234;  // offsets and noise
};

/// Pastes each image at an independent uniform offset onto a fresh
/// uniform-noise canvas (raw [0, 1] range). `salt` derives the per-split
/// stream from spec.seed.
DatasetSplit translate_split(const DatasetSplit& split, const TranslateSpec& spec,
                             std::uint64_t salt);

/// Applies translate_split to all three splits of a raw dataset.
Dataset translate_dataset(const Dataset& raw, const TranslateSpec& spec);

/// Procedural stand-in dataset (class-dependent oriented gratings plus a
/// class-positioned bump). Used by tests and demos; not a spec dataset.
struct SyntheticSpec {
  std::size_t train = 512, validation = 128, test = 128;
  std::size_t height = 12, width = 12, channels = 1, classes = 10;
  std::uint64_t seed = 7;
};
Dataset make_synthetic(const SyntheticSpec& spec);

}  // namespace lrlc
