// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <jpeglib.h>

#include "fabricnet/data_io.hpp"
#include "fabricnet/ensemble.hpp"
#include "test_util.hpp"

namespace fabricnet {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("fabricnet_test_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

DataError::Kind manifest_error(const std::string& text, std::string* message = nullptr) {
  try {
    parse_manifest(text);
  } catch (const DataError& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "manifest parsed: " << text;
  return DataError::Kind::kIo;
}

CheckpointError::Kind checkpoint_error(std::span<const std::uint8_t> bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "checkpoint parsed";
  return CheckpointError::Kind::kIo;
}

TEST(Manifest, BuildsSortedVocabulary) {
  const Manifest m = parse_manifest("path,labels\na.png,cotton;silk\nb.png,silk\n", "/data");
  EXPECT_EQ(m.vocabulary.names, (std::vector<std::string>{"cotton", "silk"}));
  EXPECT_EQ(m.label_matrix(), LabelMatrix(2, 2, {1, 1, 0, 1}));
  EXPECT_EQ(m.rows[0].path, fs::path("/data/a.png"));
  EXPECT_EQ(m.rows[1].line, 3u);
  // Byte order puts upper case first; reloading gives the same result.
  const std::string text = "path,labels\r\n\"x,1.png\",wool;Linen;acrylic\ny.png, wool \n";
  const Manifest a = parse_manifest(text);
  EXPECT_EQ(a.vocabulary.names, (std::vector<std::string>{"Linen", "acrylic", "wool"}));
  EXPECT_EQ(a.rows[0].path, fs::path("x,1.png"));
  EXPECT_EQ(parse_manifest(text).label_matrix(), a.label_matrix());
  EXPECT_EQ(a.vocabulary.index_of("wool"), 2u);
  EXPECT_FALSE(a.vocabulary.index_of("silk").has_value());
}

TEST(Manifest, ErrorKindsCarryLineNumbers) {
  std::string msg;
  EXPECT_EQ(manifest_error("path,labels\na.png,silk\nb.png,\n", &msg), DataError::Kind::kMalformedRow);
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_EQ(manifest_error("path,labels\na.png,silk,extra\n", &msg), DataError::Kind::kMalformedRow);
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_EQ(manifest_error("file,tags\na.png,silk\n"), DataError::Kind::kMalformedRow);
  EXPECT_EQ(manifest_error("path,labels\na.png,silk\na.png,wool\n", &msg), DataError::Kind::kDuplicate);
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_EQ(manifest_error(std::string("\xFF\xFEp\0a\0", 6)), DataError::Kind::kEncoding);
  EXPECT_EQ(manifest_error("path,labels\na.png,s\xC3\x28lk\n"), DataError::Kind::kEncoding);
  try {
    load_manifest("/nonexistent/fabricnet/manifest.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataError::Kind::kMissingFile);
  }
}

TEST(ImageIo, PngRoundTripAndGrey) {
  TempDir dir;
  std::vector<float> grey(10 * 7 * 3, 128.0f / 255.0f);
  write_png(dir.path() / "grey.png", grey, 10, 7);
  const Tensor img = decode_image(dir.path() / "grey.png", 120);
  EXPECT_EQ(img.shape(), (Shape{120, 120, 3}));
  for (float v : img.data()) ASSERT_NEAR(v, 128.0f / 255.0f, 1e-6f);

  // Same-size decode of an 8-bit image is exact.
  std::vector<float> pixels(6 * 5 * 3);
  std::mt19937_64 rng(4);
  for (float& v : pixels) v = static_cast<float>(rng() % 256) / 255.0f;
  write_png(dir.path() / "rand.png", pixels, 6, 5);
  const Tensor square = decode_image(dir.path() / "rand.png", 6);
  EXPECT_EQ(square.shape(), (Shape{6, 6, 3}));
  EXPECT_THROW(write_png(dir.path() / "bad.png", pixels, 6, 4), ShapeError);
}

TEST(ImageIo, PpmAndPgm) {
  TempDir dir;
  std::string ppm = "P6\n# comment\n2 1\n255\n";
  ppm += std::string("\xFF\x00\x00\x00\x00\xFF", 6);
  write_file(dir.path() / "a.ppm", ppm);
  const Tensor a = decode_image(dir.path() / "a.ppm", 2);
  EXPECT_EQ(a.at({0, 0, 0}), 1.0f);
  EXPECT_EQ(a.at({0, 1, 2}), 1.0f);
  EXPECT_EQ(a.at({1, 0, 0}), 1.0f);
  std::string pgm = "P5 1 1 255\n";
  pgm += '\x66';
  write_file(dir.path() / "b.pgm", pgm);
  const Tensor b = decode_image(dir.path() / "b.pgm", 1);
  EXPECT_EQ(b.data()[0], 102.0f / 255.0f);
  EXPECT_EQ(b.data()[2], 102.0f / 255.0f);
}

TEST(ImageIo, Jpeg) {
  TempDir dir;
  const fs::path path = dir.path() / "grey.jpg";
  {
    FILE* f = std::fopen(path.c_str(), "wb");
    ASSERT_NE(f, nullptr);
    jpeg_compress_struct c{};
    jpeg_error_mgr err{};
    c.err = jpeg_std_error(&err);
    jpeg_create_compress(&c);
    jpeg_stdio_dest(&c, f);
    c.image_width = 16;
    c.image_height = 16;
    c.input_components = 3;
    c.in_color_space = JCS_RGB;
    jpeg_set_defaults(&c);
    jpeg_set_quality(&c, 95, TRUE);
    jpeg_start_compress(&c, TRUE);
    std::vector<JSAMPLE> row(16 * 3, 128);
    while (c.next_scanline < c.image_height) {
      JSAMPROW r = row.data();
      jpeg_write_scanlines(&c, &r, 1);
    }
    jpeg_finish_compress(&c);
    jpeg_destroy_compress(&c);
    std::fclose(f);
  }
  const Tensor img = decode_image(path, 120);
  EXPECT_EQ(img.shape(), (Shape{120, 120, 3}));
  for (float v : img.data()) ASSERT_NEAR(v, 128.0f / 255.0f, 2.0f / 255.0f);
}

TEST(ImageIo, DecodeErrorsNameThePath) {
  TempDir dir;
  write_file(dir.path() / "junk.png", "\x89PNG\r\n\x1a\nnot really");
  write_file(dir.path() / "short.ppm", "P6 4 4 255\nabc");
  write_file(dir.path() / "text.txt", "hello");
  for (const char* name : {"junk.png", "short.ppm", "text.txt", "missing.png"}) {
    try {
      decode_image(dir.path() / name, 8);
      ADD_FAILURE() << name;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
    }
  }
}

TEST(ImageIo, CheckerboardBlockMeansSurviveHalving) {
  TempDir dir;
  const std::size_t n = 240, cell = 8;
  std::vector<float> board(n * n * 3);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const float v = ((y / cell + x / cell) % 2) ? 1.0f : 0.0f;
      for (std::size_t c = 0; c < 3; ++c) board[(y * n + x) * 3 + c] = v;
    }
  }
  write_png(dir.path() / "board.png", board, n, n);
  const Tensor img = decode_image(dir.path() / "board.png", 120);
  const std::size_t half = cell / 2;
  for (std::size_t by = 0; by < 120 / half; ++by) {
    for (std::size_t bx = 0; bx < 120 / half; ++bx) {
      double mean = 0.0;
      for (std::size_t y = by * half; y < (by + 1) * half; ++y) {
        for (std::size_t x = bx * half; x < (bx + 1) * half; ++x) mean += img.at({y, x, 0});
      }
      mean /= static_cast<double>(half * half);
      const double want = ((by + bx) % 2) ? 1.0 : 0.0;
      ASSERT_NEAR(mean, want, 0.01) << by << "," << bx;
    }
  }
}

TEST(ImageIo, ResizeIdentityAndConstant) {
  const std::vector<float> src = testing::uniform_vector<float>(5 * 4 * 3, 1, 0.0, 1.0);
  EXPECT_EQ(resize_bilinear(src, 5, 4, 3, 5, 4), src);
  const std::vector<float> flat(3 * 3 * 2, 0.25f);
  for (float v : resize_bilinear(flat, 3, 3, 2, 11, 7)) EXPECT_FLOAT_EQ(v, 0.25f);
  EXPECT_THROW(resize_bilinear(src, 5, 5, 3, 2, 2), ShapeError);
}

TEST(Synthetic, DeterministicAndInRange) {
  SynthConfig sc;
  sc.n_classes = 5;
  sc.n_samples = 40;
  sc.image_size = 24;
  sc.seed = 9;
  const Dataset a = gen_synthetic(sc);
  const Dataset b = gen_synthetic(sc);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.vocabulary.size(), 5u);
  for (float v : a.pixels) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  for (std::size_t r = 0; r < a.size(); ++r) {
    std::size_t count = 0;
    for (auto bit : a.labels.row(r)) count += bit;
    EXPECT_GE(count, 1u);
    EXPECT_LE(count, 3u);
  }
  sc.seed = 10;
  EXPECT_NE(gen_synthetic(sc).pixels, a.pixels);
  sc.max_labels_per_sample = 6;
  EXPECT_THROW(gen_synthetic(sc), ValidationError);
  sc.max_labels_per_sample = 1;
  sc.n_classes = 1;
  EXPECT_THROW(gen_synthetic(sc), ValidationError);
}

// Plain logistic regression on raw pixels, trained by full-batch gradient
// descent on one half and scored on the other.
TEST(Synthetic, LinearProbeSeparatesTwoClasses) {
  SynthConfig sc;
  sc.n_classes = 2;
  sc.n_samples = 200;
  sc.max_labels_per_sample = 1;
  sc.image_size = 24;
  sc.seed = 3;
  const Dataset d = gen_synthetic(sc);
  const std::size_t dim = d.image_numel();
  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  const auto logit = [&](std::size_t i) {
    double z = b;
    const auto img = d.image(i);
    for (std::size_t j = 0; j < dim; ++j) z += w[j] * (img[j] - 0.5);
    return z;
  };
  for (int it = 0; it < 300; ++it) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
      const double err = 1.0 / (1.0 + std::exp(-logit(i))) - d.labels(i, 1);
      const auto img = d.image(i);
      for (std::size_t j = 0; j < dim; ++j) gw[j] += err * (img[j] - 0.5);
      gb += err;
    }
    for (std::size_t j = 0; j < dim; ++j) w[j] -= 0.05 * gw[j] / 100.0;
    b -= 0.05 * gb / 100.0;
  }
  std::size_t correct = 0;
  for (std::size_t i = 100; i < 200; ++i) {
    ASSERT_NE(d.labels(i, 0), d.labels(i, 1));
    correct += (logit(i) >= 0.0) == (d.labels(i, 1) == 1);
  }
  EXPECT_GE(correct, 95u);
}

TEST(Synthetic, ExportLoadsBack) {
  TempDir dir;
  SynthConfig sc;
  sc.n_classes = 3;
  sc.n_samples = 6;
  sc.image_size = 16;
  const Dataset d = gen_synthetic(sc);
  export_dataset(d, dir.path());
  const Dataset back = load_dataset(load_manifest(dir.path() / "manifest.csv"), 16);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.vocabulary, d.vocabulary);
  ASSERT_EQ(back.pixels.size(), d.pixels.size());
  // 8-bit quantization is the only loss.
  for (std::size_t i = 0; i < d.pixels.size(); ++i) ASSERT_NEAR(back.pixels[i], d.pixels[i], 0.5f / 255.0f + 1e-6f);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    config.n_classes = 2;
    config.middle_flows = 0;
    config.input_size = 32;
    config.ensemble_spec = "{S4,3,1}";
    model = std::make_unique<ModelGraph>(build_model<float>(config));
    init_params(*model, 5);
  }
  ModelConfig config;
  std::unique_ptr<ModelGraph> model;
};

TEST_F(CheckpointTest, RoundTripIsBitwise) {
  const Checkpoint ck = make_checkpoint(*model, config, {{"seed", "5"}, {"note", "a;b"}});
  const auto bytes = serialize_checkpoint(ck);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "FABNET01");
  const Checkpoint back = parse_checkpoint(bytes);
  EXPECT_EQ(back.model_config, config.to_string());
  EXPECT_EQ(back.meta("note"), "a;b");
  ASSERT_EQ(back.arrays.size(), model->params().size());
  for (const auto& e : model->params().entries()) {
    const auto* a = back.find(e.name);
    ASSERT_NE(a, nullptr) << e.name;
    EXPECT_EQ(std::get<Tensor>(a->data), e.var->value) << e.name;
  }
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  const ModelGraph rebuilt = model_from_checkpoint(back);
  const Tensor x = testing::uniform_tensor<float>({3, 32, 32, 3}, 8, 0.0, 1.0);
  EXPECT_EQ(predict_scores(rebuilt, x), predict_scores(*model, x));

  TempDir dir;
  write_checkpoint(dir.path() / "m.ckpt", ck);
  EXPECT_EQ(fs::file_size(dir.path() / "m.ckpt"), bytes.size());
  EXPECT_EQ(serialize_checkpoint(read_checkpoint(dir.path() / "m.ckpt")), bytes);

  Tensor64 wide({2}, {1.0 / 3.0, -0.0});
  Checkpoint mixed;
  mixed.arrays.push_back({"wide", wide});
  const auto round = parse_checkpoint(serialize_checkpoint(mixed));
  EXPECT_EQ(std::get<Tensor64>(round.arrays[0].data), wide);
}

TEST_F(CheckpointTest, CorruptionIsDetected) {
  const auto bytes = serialize_checkpoint(make_checkpoint(*model, config));
  std::vector<std::uint8_t> flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_EQ(checkpoint_error(flipped), CheckpointError::Kind::kCrcMismatch);
  for (std::size_t cut : {std::size_t{3}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_EQ(checkpoint_error(std::span(bytes).first(cut)), CheckpointError::Kind::kTruncated) << cut;
  }
  std::vector<std::uint8_t> magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(checkpoint_error(magic), CheckpointError::Kind::kMagicMismatch);
  std::vector<std::uint8_t> version = bytes;
  version[8] = 2;
  EXPECT_EQ(checkpoint_error(version), CheckpointError::Kind::kUnsupportedVersion);
  std::vector<std::uint8_t> longer = bytes;
  longer.push_back(0);
  EXPECT_EQ(checkpoint_error(longer), CheckpointError::Kind::kMalformed);
  try {
    read_checkpoint("/nonexistent/fabricnet.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kIo);
  }
}

TEST_F(CheckpointTest, ApplyValidatesBeforeWriting) {
  Checkpoint ck = make_checkpoint(*model, config);
  ModelGraph other = build_model<float>(config);
  init_params(other, 6);
  const Tensor before = other.params().entries()[0].var->value;
  ck.arrays.pop_back();
  EXPECT_THROW(apply_checkpoint(ck, other), CheckpointError);
  EXPECT_EQ(other.params().entries()[0].var->value, before);
  ck = make_checkpoint(*model, config);
  std::get<Tensor>(ck.arrays.back().data) = Tensor({7});
  EXPECT_THROW(apply_checkpoint(ck, other), CheckpointError);
  EXPECT_EQ(other.params().entries()[0].var->value, before);
  apply_checkpoint(make_checkpoint(*model, config), other);
  EXPECT_EQ(other.params().entries()[0].var->value, model->params().entries()[0].var->value);
}

TEST_F(CheckpointTest, OptimizerStateRoundTrips) {
  Adam adam(model->params());
  for (auto& e : model->params().entries()) {
    if (e.trainable) e.var->ensure_grad() = testing::uniform_tensor<float>(e.var->value.shape(), 1, -1.0, 1.0);
  }
  adam.step();
  adam.step();
  const Checkpoint ck = parse_checkpoint(serialize_checkpoint(make_checkpoint(*model, config, {}, &adam)));
  ModelGraph other = build_model<float>(config);
  Adam restored(other.params());
  apply_checkpoint(ck, other, &restored);
  EXPECT_EQ(restored.steps(), 2u);
  ASSERT_EQ(restored.slots().size(), adam.slots().size());
  for (std::size_t i = 0; i < adam.slots().size(); ++i) {
    EXPECT_EQ(restored.slots()[i].m, adam.slots()[i].m);
    EXPECT_EQ(restored.slots()[i].v, adam.slots()[i].v);
  }
  Adam none(other.params());
  EXPECT_THROW(apply_checkpoint(make_checkpoint(*model, config), other, &none), CheckpointError);
}

TEST(CheckpointSize, FullModelIsFourBytesPerParameter) {
  const ModelConfig config;
  const ModelGraph model = build_model<float>(config);
  const std::uint64_t total = count_params(model).total;
  const auto bytes = serialize_checkpoint(make_checkpoint(model, config));
  EXPECT_GE(bytes.size(), 4 * total);
  EXPECT_LT(bytes.size(), 4 * total + (1u << 20));
  EXPECT_NEAR(static_cast<double>(bytes.size()) / 1e6, 19.3, 0.2);
}

}  // namespace
}  // namespace fabricnet
