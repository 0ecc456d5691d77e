#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "veca/veca.hpp"

using namespace veca;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("veca_ckpt_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
void expect_bitwise_equal(const VecaEncoder<T>& a, const VecaEncoder<T>& b) {
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].first, pb[i].first);
    ASSERT_EQ(pa[i].second.shape(), pb[i].second.shape()) << pa[i].first;
    const auto& va = pa[i].second.values();
    const auto& vb = pb[i].second.values();
    ASSERT_EQ(std::memcmp(va.data(), vb.data(), va.size() * sizeof(T)), 0) << pa[i].first;
  }
}

}  // namespace

TEST(Checkpoint, RoundTripFloat64) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 91);
  const auto path = temp_path("f64.veca");
  save_checkpoint(path, m, {{"note", "x"}});
  const auto loaded = load_checkpoint<double>(path);
  expect_bitwise_equal(m, loaded.model);
  EXPECT_EQ(loaded.header.at("note"), "x");
  EXPECT_EQ(loaded.header.at("dtype"), "float64");
  EXPECT_EQ(loaded.header.at("rope").at("base"), 100.0);
  EXPECT_EQ(loaded.header.at("model").get<ModelConfig>().dim, m.config.dim);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RoundTripFloat32AndSameForward) {
  ModelConfig cfg = preset("small");
  cfg.layers = 1;
  const auto m = VecaEncoder<float>::init(cfg, 92);
  const auto path = temp_path("f32.veca");
  save_checkpoint(path, m);
  const auto loaded = load_checkpoint<float>(path);
  expect_bitwise_equal(m, loaded.model);
  EXPECT_EQ(loaded.model.config.layers, 1u);
  Rng rng(93, "test");
  const auto img = synthetic_batch<float>(1, 32, 32, rng);
  NoGradGuard ng;
  EXPECT_EQ(m.forward(img, 8).global.values(), loaded.model.forward(img, 8).global.values());
  std::filesystem::remove(path);
}

TEST(Checkpoint, SaveIsDeterministic) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 94);
  const auto a = temp_path("det_a.veca"), b = temp_path("det_b.veca");
  save_checkpoint(a, m);
  save_checkpoint(b, VecaEncoder<double>::init(preset("tiny-test"), 94));
  EXPECT_EQ(slurp(a), slurp(b));
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(Checkpoint, ByteLayoutPrefix) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 95);
  const auto path = temp_path("layout.veca");
  save_checkpoint(path, m);
  const std::string bytes = slurp(path);
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "VECA");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  std::uint64_t jlen = 0;
  for (int i = 7; i >= 0; --i) jlen = (jlen << 8) | static_cast<unsigned char>(bytes[8 + i]);
  const auto js = nlohmann::json::parse(bytes.substr(16, jlen));
  EXPECT_EQ(js.at("kind"), "veca-encoder");
  std::filesystem::remove(path);
}

TEST(Checkpoint, UnsupportedVersion) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 96);
  const auto path = temp_path("version.veca");
  save_checkpoint(path, m);
  std::string bytes = slurp(path);
  bytes[4] = 2;
  spit(path, bytes);
  try {
    load_checkpoint<double>(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported version 2"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, BadMagicAndTruncation) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 97);
  const auto path = temp_path("trunc.veca");
  save_checkpoint(path, m);
  const std::string bytes = slurp(path);
  spit(path, "VECB" + bytes.substr(4));
  EXPECT_THROW(load_checkpoint<double>(path), FormatError);
  for (std::size_t cut : {2ul, 10ul, 40ul, bytes.size() / 2, bytes.size() - 1}) {
    spit(path, bytes.substr(0, cut));
    EXPECT_THROW(load_checkpoint<double>(path), FormatError) << "cut at " << cut;
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, DtypeMismatchAndMissingFile) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 98);
  const auto path = temp_path("dtype.veca");
  save_checkpoint(path, m);
  EXPECT_THROW(load_checkpoint<float>(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint<double>(path), IoError);
}

TEST(Checkpoint, MissingTensor) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 99);
  Container c{model_header(m), {}};
  for (const auto& [name, t] : m.named_parameters())
    if (name != "final_norm.gamma") c.tensors.push_back(to_record(name, t));
  ASSERT_EQ(c.tensors.size() + 1, m.named_parameters().size());
  const auto path = temp_path("missing.veca");
  write_container(path, c);
  EXPECT_THROW(load_checkpoint<double>(path), FormatError);
  std::filesystem::remove(path);
}

TEST(Targets, RoundTrip) {
  const auto teacher = DenseTeacher<double>::init(preset("tiny-test"), 100);
  Rng rng(101, "test");
  const auto imgs = synthetic_batch<double>(3, 64, 64, rng);
  const auto tgt = teacher(imgs);
  const auto path = temp_path("targets.veca");
  save_targets(path, imgs, tgt);
  const auto [imgs2, tgt2] = load_targets<double>(path);
  EXPECT_EQ(imgs2.values(), imgs.values());
  EXPECT_EQ(tgt2.y_star.values(), tgt.y_star.values());
  EXPECT_EQ(tgt2.z_star.values(), tgt.z_star.values());
  EXPECT_THROW(load_checkpoint<double>(path), FormatError);
  std::filesystem::remove(path);
}

TEST(Ppm, RoundTripAndErrors) {
  Rng rng(102, "test");
  const RgbImage img = synthetic_image(5, 7, rng);
  const auto path = temp_path("img.ppm");
  write_ppm(path, img);
  const RgbImage back = read_ppm(path);
  ASSERT_EQ(back.height, 5u);
  ASSERT_EQ(back.width, 7u);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.5 / 255 + 1e-12);
  spit(path, "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(read_ppm(path), FormatError);
  spit(path, "P6\n2 2\n255\nabc");
  EXPECT_THROW(read_ppm(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_ppm(path), IoError);
}
