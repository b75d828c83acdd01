#include "lrlc/datasets.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "lrlc/rng.hpp"

namespace lrlc {
namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<FormatError>(static_cast<bool>(in), "cannot open ", path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  require<FormatError>(static_cast<bool>(in), "short read from ", path);
  return bytes;
}

std::vector<unsigned char> gunzip(const std::string& path, const std::vector<unsigned char>& in) {
  std::vector<unsigned char> out;
  out.resize(std::max<std::size_t>(in.size() * 4, 1 << 20));
  z_stream zs{};
  require<FormatError>(inflateInit2(&zs, 15 + 32) == Z_OK, path, ": zlib init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::size_t written = 0;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    if (written == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + written;
    zs.avail_out = static_cast<uInt>(out.size() - written);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError(detail::concat(path, ": gzip decode failed at output offset ", written));
    }
    written = out.size() - zs.avail_out;
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

/// Reads `name` from dir, accepting either the raw file or name + ".gz".
std::vector<unsigned char> read_maybe_gz(const std::string& dir, const std::string& name) {
  namespace fs = std::filesystem;
  const std::string raw = (fs::path(dir) / name).string();
  if (fs::exists(raw)) {
    auto bytes = read_file(raw);
    // Some distributions ship the canonical name actually gzip-compressed.
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(raw, bytes);
    return bytes;
  }
  const std::string gz = raw + ".gz";
  require<FormatError>(fs::exists(gz), "missing dataset file ", raw, " (or .gz)");
  return gunzip(gz, read_file(gz));
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& file) {
  require<FormatError>(off + 4 <= b.size(), file, ": truncated at offset ", off);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

struct IdxImages {
  std::size_t count, rows, cols;
  const unsigned char* pixels;
  std::vector<unsigned char> storage;
};

IdxImages parse_idx_images(const std::string& file, std::vector<unsigned char> bytes) {
  const std::uint32_t magic = be32(bytes, 0, file);
  require<FormatError>(magic == 2051, file, ": bad IDX image magic ", magic, " at offset 0",
                       " (expected 2051)");
  IdxImages out;
  out.count = be32(bytes, 4, file);
  out.rows = be32(bytes, 8, file);
  out.cols = be32(bytes, 12, file);
  const std::size_t need = 16 + out.count * out.rows * out.cols;
  require<FormatError>(bytes.size() >= need, file, ": expected ", need, " bytes, got ",
                       bytes.size());
  out.storage = std::move(bytes);
  out.pixels = out.storage.data() + 16;
  return out;
}

std::vector<int> parse_idx_labels(const std::string& file, std::vector<unsigned char> bytes,
                                  std::size_t expected_count) {
  const std::uint32_t magic = be32(bytes, 0, file);
  require<FormatError>(magic == 2049, file, ": bad IDX label magic ", magic, " at offset 0",
                       " (expected 2049)");
  const std::size_t count = be32(bytes, 4, file);
  require<FormatError>(count == expected_count, file, ": label count ", count,
                       " != image count ", expected_count);
  require<FormatError>(bytes.size() >= 8 + count, file, ": truncated at offset ", bytes.size());
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = bytes[8 + i];
    require<FormatError>(labels[i] <= 9, file, ": label ", labels[i], " out of range at record ",
                         i);
  }
  return labels;
}

DatasetSplit make_split(std::string name, const unsigned char* pixels, const int* labels,
                        std::size_t n, std::size_t H, std::size_t W, std::size_t C) {
  DatasetSplit split;
  split.name = std::move(name);
  split.images = TensorF({n, H, W, C});
  for (std::size_t i = 0; i < n * H * W * C; ++i)
    split.images[i] = static_cast<float>(pixels[i]) / 255.0f;
  split.labels.assign(labels, labels + n);
  std::uint64_t h = fnv1a(kFnvOffset, pixels, n * H * W * C);
  h = fnv1a(h, split.labels.data(), split.labels.size() * sizeof(int));
  split.checksum = h;
  return split;
}

}  // namespace

Dataset load_mnist(const std::string& dir, bool standardize_pixels) {
  const std::string img_train = "train-images-idx3-ubyte";
  const std::string lbl_train = "train-labels-idx1-ubyte";
  const std::string img_test = "t10k-images-idx3-ubyte";
  const std::string lbl_test = "t10k-labels-idx1-ubyte";

  IdxImages tr = parse_idx_images(img_train, read_maybe_gz(dir, img_train));
  std::vector<int> tr_labels = parse_idx_labels(lbl_train, read_maybe_gz(dir, lbl_train), tr.count);
  IdxImages te = parse_idx_images(img_test, read_maybe_gz(dir, img_test));
  std::vector<int> te_labels = parse_idx_labels(lbl_test, read_maybe_gz(dir, lbl_test), te.count);

  require<FormatError>(tr.count == 60000, img_train, ": expected 60000 images, got ", tr.count);
  require<FormatError>(te.count == 10000, img_test, ": expected 10000 images, got ", te.count);
  const std::size_t H = tr.rows, W = tr.cols;

  const std::size_t n_train = 55000, n_val = 5000;
  Dataset data;
  data.name = "mnist";
  data.train = make_split("train", tr.pixels, tr_labels.data(), n_train, H, W, 1);
  data.validation = make_split("validation", tr.pixels + n_train * H * W,
                               tr_labels.data() + n_train, n_val, H, W, 1);
  data.test = make_split("test", te.pixels, te_labels.data(), te.count, H, W, 1);
  if (standardize_pixels) standardize(data);
  return data;
}

Dataset load_cifar10(const std::string& dir, bool standardize_pixels) {
  constexpr std::size_t kRecord = 3073, kPerFile = 10000, kH = 32, kW = 32, kC = 3;
  auto parse_file = [&](const std::string& name, std::vector<unsigned char>& pixels,
                        std::vector<int>& labels, std::uint64_t& checksum) {
    std::vector<unsigned char> bytes = read_maybe_gz(dir, name);
    require<FormatError>(bytes.size() == kRecord * kPerFile, name, ": expected ",
                         kRecord * kPerFile, " bytes, got ", bytes.size());
    checksum = fnv1a(checksum, bytes.data(), bytes.size());
    for (std::size_t r = 0; r < kPerFile; ++r) {
      const unsigned char* rec = bytes.data() + r * kRecord;
      require<FormatError>(rec[0] <= 9, name, ": label ", int(rec[0]), " out of range at offset ",
                           r * kRecord);
      labels.push_back(rec[0]);
      // channel-major (R plane, G plane, B plane) -> interleaved H x W x C
      const std::size_t base = pixels.size();
      pixels.resize(base + kH * kW * kC);
      for (std::size_t c = 0; c < kC; ++c)
        for (std::size_t p = 0; p < kH * kW; ++p)
          pixels[base + p * kC + c] = rec[1 + c * kH * kW + p];
    }
  };

  std::vector<unsigned char> train_pixels;
  std::vector<int> train_labels;
  std::uint64_t train_sum = kFnvOffset;
  for (int i = 1; i <= 5; ++i)
    parse_file("data_batch_" + std::to_string(i) + ".bin", train_pixels, train_labels, train_sum);
  std::vector<unsigned char> test_pixels;
  std::vector<int> test_labels;
  std::uint64_t test_sum = kFnvOffset;
  parse_file("test_batch.bin", test_pixels, test_labels, test_sum);

  const std::size_t n_train = 45000, n_val = 5000;
  Dataset data;
  data.name = "cifar10";
  data.train = make_split("train", train_pixels.data(), train_labels.data(), n_train, kH, kW, kC);
  data.validation = make_split("validation", train_pixels.data() + n_train * kH * kW * kC,
                               train_labels.data() + n_train, n_val, kH, kW, kC);
  data.test = make_split("test", test_pixels.data(), test_labels.data(), kPerFile, kH, kW, kC);
  if (standardize_pixels) standardize(data);
  return data;
}

void standardize(Dataset& data) {
  require<ConfigError>(!data.standardized, "dataset already standardized");
  const std::size_t C = data.channels();
  std::vector<double> sum(C, 0.0), sumsq(C, 0.0);
  const TensorF& train = data.train.images;
  const std::size_t per_channel = train.size() / C;
  for (std::size_t i = 0; i < train.size(); i += C)
    for (std::size_t c = 0; c < C; ++c) {
      sum[c] += train[i + c];
      sumsq[c] += double(train[i + c]) * double(train[i + c]);
    }
  data.mean.resize(C);
  data.stdev.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double mean = sum[c] / double(per_channel);
    const double var = std::max(0.0, sumsq[c] / double(per_channel) - mean * mean);
    data.mean[c] = static_cast<float>(mean);
    data.stdev[c] = static_cast<float>(std::max(std::sqrt(var), 1e-8));
  }
  for (DatasetSplit* split : {&data.train, &data.validation, &data.test}) {
    TensorF& img = split->images;
    for (std::size_t i = 0; i < img.size(); i += C)
      for (std::size_t c = 0; c < C; ++c) img[i + c] = (img[i + c] - data.mean[c]) / data.stdev[c];
  }
  data.standardized = true;
}

DatasetSplit translate_split(const DatasetSplit& split, const TranslateSpec& spec,
                             std::uint64_t salt) {
  const std::size_t N = split.images.extent(0), H = split.images.extent(1),
                    W = split.images.extent(2), C = split.images.extent(3);
  require<ConfigError>(H == W, "translate_split expects square images, got ", H, "x", W);
  const std::size_t canvas = spec.canvas == 0 ? H * 3 / 2 : spec.canvas;
  require<ConfigError>(canvas >= H, "canvas ", canvas, " smaller than source extent ", H);

  Rng base(spec.seed);
  Rng rng = base.fork(salt);
  DatasetSplit out;
  out.name = split.name;
  out.labels = split.labels;
  out.images = TensorF({N, canvas, canvas, C});
  const std::size_t slack = canvas - H;
  for (std::size_t n = 0; n < N; ++n) {
    float* img = out.images.data() + n * canvas * canvas * C;
    for (std::size_t i = 0; i < canvas * canvas * C; ++i)
      img[i] = static_cast<float>(rng.uniform());
    const std::size_t di = rng.uniform_index(slack + 1);
    const std::size_t dj = rng.uniform_index(slack + 1);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const float* src = split.images.data() + ((n * H + i) * W + j) * C;
        float* dst = img + ((di + i) * canvas + (dj + j)) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
      }
  }
  out.checksum = fnv1a(fnv1a(kFnvOffset, out.images.data(), out.images.size() * sizeof(float)),
                       out.labels.data(), out.labels.size() * sizeof(int));
  return out;
}

Dataset translate_dataset(const Dataset& raw, const TranslateSpec& spec) {
  require<ConfigError>(!raw.standardized,
                       "translate_dataset needs raw pixels; background noise is drawn in the "
                       "raw range before standardization");
  Dataset out;
  out.name = raw.name + "_translated";
  out.classes = raw.classes;
  out.train = translate_split(raw.train, spec, 0);
  out.validation = translate_split(raw.validation, spec, 1);
  out.test = translate_split(raw.test, spec, 2);
  return out;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  require<ConfigError>(spec.classes >= 2, "synthetic dataset needs >= 2 classes");
  Rng base(spec.seed);
  auto gen_split = [&](const char* name, std::size_t n, std::uint64_t salt) {
    Rng rng = base.fork(salt);
    DatasetSplit split;
    split.name = name;
    split.images = TensorF({n, spec.height, spec.width, spec.channels});
    split.labels.resize(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
      const int y = static_cast<int>(rng.uniform_index(spec.classes));
      split.labels[idx] = y;
      // Oriented grating with class-dependent frequency plus a bump whose
      // position also depends on the class.
      const double fy = 0.6 + 0.9 * double(y % 3);
      const double fx = 0.6 + 0.9 * double(y / 3 % 3);
      const double cy = spec.height * (0.25 + 0.5 * ((y * 2654435761u) % 97) / 96.0);
      const double cx = spec.width * (0.25 + 0.5 * ((y * 40503u) % 89) / 88.0);
      const double sigma2 = 2.0 * std::pow(double(spec.height) / 5.0, 2.0);
      const double phase = rng.uniform(0, 0.6);
      for (std::size_t i = 0; i < spec.height; ++i)
        for (std::size_t j = 0; j < spec.width; ++j) {
          const double wave = 0.5 + 0.25 * std::sin(fy * i + fx * j + phase);
          const double d2 = std::pow(double(i) - cy, 2.0) + std::pow(double(j) - cx, 2.0);
          const double bump = 0.35 * std::exp(-d2 / sigma2);
          for (std::size_t c = 0; c < spec.channels; ++c) {
            const double noise = 0.08 * rng.uniform();
            const double v = std::min(1.0, wave + bump + noise);
            split.images((std::size_t)idx, i, j, c) = static_cast<float>(v);
          }
        }
    }
    split.checksum =
        fnv1a(fnv1a(kFnvOffset, split.images.data(), split.images.size() * sizeof(float)),
              split.labels.data(), split.labels.size() * sizeof(int));
    return split;
  };
  Dataset data;
  data.name = "synthetic";
  data.classes = spec.classes;
  data.train = gen_split("train", spec.train, 0);
  data.validation = gen_split("validation", spec.validation, 1);
  data.test = gen_split("test", spec.test, 2);
  return data;
}

}  // namespace lrlc
