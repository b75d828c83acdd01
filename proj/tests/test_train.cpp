#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lrlc/optimize.hpp"
#include "oracles.hpp"

using namespace lrlc;
namespace fs = std::filesystem;

namespace {

const std::string kTmp = (fs::temp_directory_path() / "lrlc_train_test").string();

struct TmpDir {
  TmpDir() { fs::create_directories(kTmp); }
} tmp_dir_guard;

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back((x >> 24) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back(x & 0xff);
}

/// Full-size MNIST-format fixture. A base-251 encoding of the global example
/// index at three reserved pixels makes every example distinct (the test set
/// continues the numbering at 60000).
void write_mnist_fixture(const std::string& dir) {
  if (fs::exists(dir + "/t10k-labels-idx1-ubyte")) return;
  fs::create_directories(dir);
  auto images = [&](const std::string& name, std::size_t count, std::size_t index_base) {
    std::vector<unsigned char> v;
    push_be32(v, 2051);
    push_be32(v, std::uint32_t(count));
    push_be32(v, 28);
    push_be32(v, 28);
    v.resize(v.size() + count * 28 * 28);
    for (std::size_t i = 0; i < count; ++i) {
      unsigned char* img = v.data() + 16 + i * 28 * 28;
      const std::size_t id = index_base + i;
      img[50 + i % 700] = 255;  // some spatial variety
      img[10] = (unsigned char)(id % 251);
      img[11] = (unsigned char)((id / 251) % 251);
      img[12] = (unsigned char)((id / 63001) % 251);
    }
    write_bytes(dir + "/" + name, v);
  };
  auto labels = [&](const std::string& name, std::size_t count) {
    std::vector<unsigned char> v;
    push_be32(v, 2049);
    push_be32(v, std::uint32_t(count));
    for (std::size_t i = 0; i < count; ++i) v.push_back(i % 10);
    write_bytes(dir + "/" + name, v);
  };
  images("train-images-idx3-ubyte", 60000, 0);
  labels("train-labels-idx1-ubyte", 60000);
  images("t10k-images-idx3-ubyte", 10000, 60000);
  labels("t10k-labels-idx1-ubyte", 10000);
}

void write_cifar_fixture(const std::string& dir) {
  if (fs::exists(dir + "/test_batch.bin")) return;
  fs::create_directories(dir);
  Rng rng(99);
  auto batch = [&](const std::string& name) {
    std::vector<unsigned char> v(3073 * 10000, 0);
    for (std::size_t r = 0; r < 10000; ++r) {
      unsigned char* rec = v.data() + r * 3073;
      rec[0] = (unsigned char)(r % 10);
      for (int p = 0; p < 24; ++p) rec[1 + rng.uniform_index(3072)] = (unsigned char)rng.uniform_index(256);
    }
    write_bytes(dir + "/" + name, v);
  };
  for (int i = 1; i <= 5; ++i) batch("data_batch_" + std::to_string(i) + ".bin");
  batch("test_batch.bin");
}

}  // namespace

TEST_CASE("cross_entropy analytic values and finite-difference gradient") {
  TensorD uniform({2, 10});
  LossResult<double> r = cross_entropy(uniform, std::vector<int>{3, 7});
  CHECK(r.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  TensorD confident({1, 4});
  confident(std::size_t{0}, std::size_t{2}) = 200.0;
  LossResult<double> r2 = cross_entropy(confident, std::vector<int>{2});
  CHECK(r2.loss <= 1e-12);
  CHECK(r2.correct == 1);

  CHECK_THROWS_AS(cross_entropy(uniform, std::vector<int>{3, 10}), DataError);
  CHECK_THROWS_AS(cross_entropy(uniform, std::vector<int>{-1, 0}), DataError);

  Rng rng(3);
  std::vector<int> labels{1, 0, 4};
  auto fwd = [&](const std::vector<TensorD>& in) {
    return cross_entropy(in[0], labels).loss;
  };
  auto grads = [&](const std::vector<TensorD>& in) {
    return std::vector<TensorD>{cross_entropy(in[0], labels).dlogits};
  };
  GradCheckReport rep = grad_check("cross_entropy", fwd, grads,
                                   {oracle::random_tensor<double>({3, 5}, rng)},
                                   {.tolerance = 1e-6});
  CHECK(rep.pass);
}

TEST_CASE("adam: first-step magnitude, zero-grad fixpoint, quadratic descent, nan guard") {
  TensorD w({1});
  TensorD g({1});
  std::vector<ParamRef<double>> params{{"w", &w, &g}};
  Adam<double> adam(params);
  g[0] = 1.0;
  adam.step(0.01);
  CHECK(w[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(adam.step_count() == 1);

  TensorD w2 = TensorD({3}, {1.0, -2.0, 0.5});
  TensorD g2({3});
  Adam<double> adam2({{"w", &w2, &g2}});
  for (int i = 0; i < 50; ++i) adam2.step(0.1);
  CHECK(w2[0] == 1.0);
  CHECK(w2[1] == -2.0);
  CHECK(w2[2] == 0.5);

  // descend f(w) = w^2 from w=1 at rate 0.1 for 100 steps
  TensorD w3({1}, {1.0});
  TensorD g3({1});
  Adam<double> adam3({{"w", &w3, &g3}});
  for (int i = 0; i < 100; ++i) {
    g3[0] = 2.0 * w3[0];
    adam3.step(0.1);
  }
  CHECK(std::abs(w3[0]) < 0.1);

  TensorD g_bad({1}, {std::numeric_limits<double>::quiet_NaN()});
  TensorD w4({1}, {0.25});
  Adam<double> adam4({{"w", &w4, &g_bad}});
  CHECK_THROWS_AS(adam4.step(0.1), DataError);
  CHECK(w4[0] == 0.25);  // aborted before mutation
}

TEST_CASE("schedule: warmup endpoints, cosine midpoint, terminal rate") {
  Schedule s{20, 2, 100, 0.01};
  CHECK(s.rate(0) == 0.0);
  CHECK(s.rate(s.warmup_steps()) == 0.01);
  CHECK(s.rate(s.total_steps() - 1) <= 1e-3 * s.peak);
  // midpoint of the decay phase
  const std::size_t mid = s.warmup_steps() + (s.total_steps() - 1 - s.warmup_steps()) / 2;
  CHECK(s.rate(mid) == doctest::Approx(0.005).epsilon(1e-3));
  // warmup is linear
  CHECK(s.rate(100) == doctest::Approx(0.005).epsilon(1e-12));
  // monotone rise then fall
  for (std::size_t t = 1; t <= s.warmup_steps(); ++t) CHECK(s.rate(t) >= s.rate(t - 1));
  for (std::size_t t = s.warmup_steps() + 1; t < s.total_steps(); ++t)
    CHECK(s.rate(t) <= s.rate(t - 1));
}

TEST_CASE("train for 0 epochs changes nothing and yields empty metrics") {
  SyntheticSpec spec;
  spec.train = 64;
  spec.validation = 16;
  spec.test = 16;
  spec.height = spec.width = 6;
  spec.classes = 4;
  Dataset data = make_synthetic(spec);
  standardize(data);

  ModelConfig mc;
  mc.input_h = mc.input_w = 6;
  mc.input_c = 1;
  mc.classes = 4;
  mc.channels = 4;
  mc.kinds = {LayerKind::kConv};
  Model<double> model(mc, 1);
  std::vector<double> before;
  for (auto& p : model.parameters())
    for (double v : p.value->values()) before.push_back(v);

  TrainConfig tc;
  tc.batch = 16;
  tc.epochs = 0;
  tc.warmup_epochs = 0;
  tc.test_mode = true;
  TrainResult<double> r = train(model, data, tc);
  CHECK(r.history.empty());
  std::size_t i = 0;
  for (auto& p : model.parameters())
    for (double v : p.value->values()) CHECK(v == before[i++]);
}

TEST_CASE("overfit sanity: 2-layer model reaches 100% train accuracy on 64 samples") {
  SyntheticSpec spec;
  spec.train = 64;
  spec.validation = 16;
  spec.test = 16;
  spec.height = spec.width = 8;
  spec.classes = 4;
  spec.seed = 5;
  Dataset data = make_synthetic(spec);
  standardize(data);

  ModelConfig mc;
  mc.input_h = mc.input_w = 8;
  mc.input_c = 1;
  mc.classes = 4;
  mc.channels = 16;
  mc.kinds = {LayerKind::kConv, LayerKind::kConv};
  Model<float> model(mc, 7);

  TrainConfig tc;
  tc.batch = 32;
  tc.epochs = 100;  // 2 steps per epoch -> 200 steps
  tc.warmup_epochs = 10;
  tc.peak_lr = 0.01;
  tc.seed = 11;
  tc.eval_validation = false;
  TrainResult<float> r = train(model, data, tc);

  EvalResult final_train = evaluate(model, data.train, tc.batch);
  CHECK(final_train.top1 == 1.0);
}

TEST_CASE("evaluate on a constant-class predictor equals that class frequency") {
  SyntheticSpec spec;
  spec.train = 32;
  spec.validation = 8;
  spec.test = 40;
  spec.height = spec.width = 5;
  spec.classes = 3;
  Dataset data = make_synthetic(spec);
  standardize(data);

  ModelConfig mc;
  mc.input_h = mc.input_w = 5;
  mc.input_c = 1;
  mc.classes = 3;
  mc.channels = 2;
  mc.kinds = {LayerKind::kConv};
  Model<double> model(mc, 3);
  for (auto& p : model.parameters()) p.value->fill(0.0);
  // head bias picks class 2 unconditionally
  auto params = model.parameters();
  for (auto& p : params)
    if (p.name == "head.bias") (*p.value)[2] = 5.0;

  std::size_t count2 = 0;
  for (int y : data.test.labels) count2 += y == 2;
  EvalResult r = evaluate(model, data.test, 7);  // odd batch exercises remainder
  CHECK(r.top1 == doctest::Approx(double(count2) / double(data.test.size())).epsilon(1e-12));
}

TEST_CASE("loss on the first batch decreases within 50 steps for every layer kind") {
  SyntheticSpec sspec;
  sspec.train = 512;
  sspec.validation = 8;
  sspec.test = 8;
  sspec.height = sspec.width = 10;
  sspec.classes = 10;
  Dataset data = make_synthetic(sspec);
  standardize(data);

  const LayerKind kinds[] = {LayerKind::kConv, LayerKind::kLocal, LayerKind::kCoordConv,
                             LayerKind::kLrlc, LayerKind::kDynamicLrlc};
  for (LayerKind kind : kinds) {
    CAPTURE(layer_kind_name(kind));
    ModelConfig mc;
    mc.input_h = mc.input_w = 10;
    mc.input_c = 1;
    mc.classes = 10;
    mc.channels = 32;  // template geometry shrunk to keep the suite quick
    mc.kinds = kinds_from_placement(kind, "third", 3);
    mc.rank = 2;
    Model<float> model(mc, 17);

    const std::size_t B = 128;
    Tensor<float> xb({B, 10, 10, 1});
    std::vector<int> yb(B);
    for (std::size_t b = 0; b < B; ++b) {
      yb[b] = data.train.labels[b];
      for (std::size_t e = 0; e < 100; ++e) xb[b * 100 + e] = data.train.images[b * 100 + e];
    }
    const double loss0 = cross_entropy(model.forward(xb, true), yb).loss;

    Adam<float> adam(model.parameters());
    Schedule sched{20, 2, 4, 0.01};  // desk-scale shape: warmup 2/20 of the run
    Tensor<float> batch({B, 10, 10, 1});
    std::vector<int> labels(B);
    for (std::size_t step = 0; step < 50; ++step) {
      const std::size_t offset = (step * B) % (sspec.train - B + 1);
      for (std::size_t b = 0; b < B; ++b) {
        labels[b] = data.train.labels[offset + b];
        for (std::size_t e = 0; e < 100; ++e)
          batch[b * 100 + e] = data.train.images[(offset + b) * 100 + e];
      }
      LossResult<float> res = cross_entropy(model.forward(batch, true), labels);
      model.backward(res.dlogits);
      adam.step(sched.rate(std::min<std::size_t>(step, sched.total_steps() - 1)));
    }
    const double loss1 = cross_entropy(model.forward(xb, true), yb).loss;
    CHECK(loss1 < loss0);
  }
}

TEST_CASE("checkpoint sink: best flag tracks the max recorded validation top-1") {
  SyntheticSpec spec;
  spec.train = 96;
  spec.validation = 32;
  spec.test = 16;
  spec.height = spec.width = 8;
  spec.classes = 4;
  Dataset data = make_synthetic(spec);
  standardize(data);

  ModelConfig mc;
  mc.input_h = mc.input_w = 8;
  mc.input_c = 1;
  mc.classes = 4;
  mc.channels = 8;
  mc.kinds = {LayerKind::kConv, LayerKind::kConv};
  Model<float> model(mc, 31);

  TrainConfig tc;
  tc.batch = 32;
  tc.epochs = 8;
  tc.warmup_epochs = 1;
  tc.seed = 13;
  std::vector<std::pair<std::size_t, bool>> sink_calls;
  TrainResult<float> r = train<float>(
      model, data, tc,
      [&](Model<float>&, std::size_t epoch, bool best) { sink_calls.emplace_back(epoch, best); });

  REQUIRE(sink_calls.size() == 8);  // one per epoch
  // reconstruct the running max over validation rows
  double running = -1;
  std::size_t best_epoch = 0;
  std::vector<bool> expect_best;
  for (const auto& row : r.history)
    if (row.split == "validation") {
      const bool improved = row.top1 > running;
      if (improved) {
        running = row.top1;
        best_epoch = row.epoch;
      }
      expect_best.push_back(improved);
    }
  for (std::size_t e = 0; e < sink_calls.size(); ++e) CHECK(sink_calls[e].second == expect_best[e]);
  CHECK(r.best_val_top1 == running);
  CHECK(r.best_epoch == best_epoch);
}

TEST_CASE("determinism: identical seed and test mode give bitwise-identical metrics") {
  SyntheticSpec spec;
  spec.train = 96;
  spec.validation = 24;
  spec.test = 24;
  spec.height = spec.width = 6;
  spec.classes = 4;
  Dataset data = make_synthetic(spec);
  standardize(data);

  auto run = [&](const std::string& csv) {
    fs::remove(csv);
    ModelConfig mc;
    mc.input_h = mc.input_w = 6;
    mc.input_c = 1;
    mc.classes = 4;
    mc.channels = 6;
    mc.kinds = {LayerKind::kConv, LayerKind::kLrlc};
    mc.rank = 2;
    Model<double> model(mc, 23);
    TrainConfig tc;
    tc.batch = 24;
    tc.epochs = 3;
    tc.warmup_epochs = 1;
    tc.seed = 42;
    tc.test_mode = true;
    tc.metrics_csv = csv;
    train(model, data, tc);
    std::ifstream in(csv, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string a = run(kTmp + "/det_a.csv");
  const std::string b = run(kTmp + "/det_b.csv");
  CHECK(a == b);
  CHECK(a.find("epoch,split,loss,top1,lr,seconds") == 0);
  exec::set_test_mode(false);
}

TEST_CASE("mnist fixture: splits, magics, checksums, reload determinism") {
  const std::string dir = kTmp + "/mnist";
  write_mnist_fixture(dir);

  Dataset data = load_mnist(dir);
  CHECK(data.train.size() == 55000);
  CHECK(data.validation.size() == 5000);
  CHECK(data.test.size() == 10000);
  for (int y : data.train.labels) CHECK((y >= 0 && y <= 9));

  Dataset again = load_mnist(dir);
  CHECK(again.train.checksum == data.train.checksum);
  CHECK(again.validation.checksum == data.validation.checksum);
  CHECK(again.test.checksum == data.test.checksum);
  CHECK(again.train.images == data.train.images);

  // standardization invariant on the training split
  const std::size_t n = data.train.images.size();
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += data.train.images[i];
  mean /= double(n);
  double var = 0;
  for (std::size_t i = 0; i < n; ++i)
    var += (data.train.images[i] - mean) * (data.train.images[i] - mean);
  var /= double(n);
  CHECK(std::abs(mean) <= 1e-6);
  CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-4);

  // no overlap between splits (distinct examples by construction)
  auto digest = [](const TensorF& images, std::size_t i) {
    const std::size_t px = 28 * 28;
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t e = 0; e < px; ++e) {
      std::uint32_t bits;
      std::memcpy(&bits, &images[i * px + e], 4);
      h = (h ^ bits) * 1099511628211ull;
    }
    return h;
  };
  std::set<std::uint64_t> train_hashes, val_hashes, test_hashes;
  for (std::size_t i = 0; i < 2000; ++i) train_hashes.insert(digest(data.train.images, i));
  for (std::size_t i = 0; i < 2000; ++i) val_hashes.insert(digest(data.validation.images, i));
  for (std::size_t i = 0; i < 2000; ++i) test_hashes.insert(digest(data.test.images, i));
  for (std::uint64_t h : val_hashes) CHECK(train_hashes.count(h) == 0);
  for (std::uint64_t h : test_hashes) CHECK(train_hashes.count(h) == 0);
}

TEST_CASE("mnist format errors name the offending file") {
  const std::string dir = kTmp + "/mnist_bad";
  fs::create_directories(dir);
  std::vector<unsigned char> v;
  push_be32(v, 1234);  // wrong magic
  push_be32(v, 60000);
  push_be32(v, 28);
  push_be32(v, 28);
  write_bytes(dir + "/train-images-idx3-ubyte", v);
  try {
    load_mnist(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("train-images-idx3-ubyte") != std::string::npos);
    CHECK(msg.find("2051") != std::string::npos);
  }
}

TEST_CASE("mnist reads gzip-compressed files") {
  const std::string raw_dir = kTmp + "/mnist";  // written by the fixture test
  write_mnist_fixture(raw_dir);
  const std::string gz_dir = kTmp + "/mnist_gz";
  fs::create_directories(gz_dir);
  for (const char* name : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                           "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"}) {
    std::ifstream in(raw_dir + "/" + name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    gzFile gz = gzopen((gz_dir + "/" + name + ".gz").c_str(), "wb");
    REQUIRE(gz != nullptr);
    gzwrite(gz, bytes.data(), unsigned(bytes.size()));
    gzclose(gz);
  }
  Dataset raw = load_mnist(raw_dir);
  Dataset zipped = load_mnist(gz_dir);
  CHECK(raw.train.images == zipped.train.images);
  CHECK(raw.test.checksum == zipped.test.checksum);
}

TEST_CASE("cifar-10 fixture: splits and channel-major record decoding") {
  const std::string dir = kTmp + "/cifar";
  write_cifar_fixture(dir);
  Dataset data = load_cifar10(dir, /*standardize_pixels=*/false);
  CHECK(data.train.size() == 45000);
  CHECK(data.validation.size() == 5000);
  CHECK(data.test.size() == 10000);

  // byte-level reference decode of the first record of data_batch_1
  std::ifstream in(dir + "/data_batch_1.bin", std::ios::binary);
  std::vector<unsigned char> rec(3073);
  in.read(reinterpret_cast<char*>(rec.data()), 3073);
  CHECK(data.train.labels[0] == int(rec[0]));
  for (std::size_t p = 0; p < 1024; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const float want = float(rec[1 + c * 1024 + p]) / 255.0f;
      CHECK(data.train.images[p * 3 + c] == want);
    }
}

TEST_CASE("translate: degenerate canvas, uniform offsets, bit-exact paste") {
  // canvas == source: offset forced to (0,0), background fully covered
  Rng rng(7);
  DatasetSplit src;
  src.name = "train";
  src.images = oracle::random_tensor<float>({5, 8, 8, 1}, rng, 0.0f, 1.0f);
  src.labels = {0, 1, 2, 3, 4};
  TranslateSpec same{8, 123};
  DatasetSplit out = translate_split(src, same, 0);
  CHECK(out.images == src.images);
  CHECK(out.labels == src.labels);

  // offsets uniform over {0..16}^2 for 32 -> 48 (chi-square over 10k draws)
  DatasetSplit ones;
  ones.name = "train";
  ones.images = TensorF::full({10000, 32, 32, 1}, 1.0f);
  ones.labels.assign(10000, 0);
  TranslateSpec spec48{48, 999};
  DatasetSplit t = translate_split(ones, spec48, 0);
  std::vector<std::size_t> counts(17 * 17, 0);
  for (std::size_t n = 0; n < 10000; ++n) {
    // the all-ones source makes the offset identifiable: first pixel == 1.0
    std::size_t di = 48, dj = 48;
    for (std::size_t i = 0; i < 48 && di == 48; ++i)
      for (std::size_t j = 0; j < 48; ++j)
        if (t.images(n, i, j, std::size_t{0}) == 1.0f) {
          di = i;
          dj = j;
          break;
        }
    REQUIRE(di <= 16);
    REQUIRE(dj <= 16);
    counts[di * 17 + dj]++;
  }
  const double expected = 10000.0 / 289.0;
  double chi2 = 0;
  for (std::size_t c : counts) chi2 += (double(c) - expected) * (double(c) - expected) / expected;
  CHECK(chi2 < 400.0);  // 288 dof; mean 288, sd ~24

  // pasted region equals the original bit-exactly at its offset
  TranslateSpec spec12{12, 77};
  DatasetSplit moved = translate_split(src, spec12, 0);
  for (std::size_t n = 0; n < src.images.extent(0); ++n) {
    bool found = false;
    for (std::size_t di = 0; di <= 4 && !found; ++di)
      for (std::size_t dj = 0; dj <= 4 && !found; ++dj) {
        bool match = true;
        for (std::size_t i = 0; i < 8 && match; ++i)
          for (std::size_t j = 0; j < 8 && match; ++j)
            match = moved.images(n, di + i, dj + j, std::size_t{0}) ==
                    src.images(n, i, j, std::size_t{0});
        found = match;
      }
    CHECK(found);
  }

  // canvas smaller than source
  TranslateSpec tiny{4, 1};
  CHECK_THROWS_AS(translate_split(src, tiny, 0), ConfigError);

  // determinism per seed
  DatasetSplit again = translate_split(ones, spec48, 0);
  CHECK(again.images == t.images);
}

TEST_CASE("translate_dataset defaults the canvas to 1.5x and requires raw pixels") {
  SyntheticSpec spec;
  spec.train = 8;
  spec.validation = 4;
  spec.test = 4;
  spec.height = spec.width = 8;
  Dataset raw = make_synthetic(spec);
  Dataset moved = translate_dataset(raw, TranslateSpec{});
  CHECK(moved.height() == 12);  // 8 * 3 / 2
  CHECK(moved.train.size() == 8);

  standardize(raw);
  CHECK_THROWS_AS(translate_dataset(raw, TranslateSpec{}), ConfigError);
}
