#include <catch_amalgamated.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <random>

#include "dtp/datasets.hpp"

using namespace dtp;

namespace {

Bytes bytes_of(const std::string& header, const std::vector<std::uint8_t>& payload = {}) {
  Bytes b(header.begin(), header.end());
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

std::vector<std::uint8_t> le(float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  return {std::uint8_t(u), std::uint8_t(u >> 8), std::uint8_t(u >> 16), std::uint8_t(u >> 24)};
}

std::vector<std::uint8_t> be(float v) {
  auto b = le(v);
  std::reverse(b.begin(), b.end());
  return b;
}

std::size_t error_offset(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("expected FormatError");
  return 0;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("dtp_test_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("PFM minimal file, row order and endianness", "[pfm]") {
  auto one = read_pfm(bytes_of("Pf\n1 1\n-1.0\n", le(1.0f)));
  CHECK(one.width == 1);
  CHECK(one.height == 1);
  CHECK(one.data == std::vector<float>{1.0f});

  // stored bottom row first: [1, 2] then top row [3, 4]
  std::vector<std::uint8_t> payload;
  for (float v : {1.0f, 2.0f, 3.0f, 4.0f}) {
    auto b = le(v);
    payload.insert(payload.end(), b.begin(), b.end());
  }
  auto two = read_pfm(bytes_of("Pf\n2 2\n-1.0\n", payload));
  CHECK(two.at(0, 0) == 3.0f);
  CHECK(two.at(0, 1) == 4.0f);
  CHECK(two.at(1, 0) == 1.0f);

  auto big = read_pfm(bytes_of("Pf\n1 1\n1.0\n", be(-2.5f)));
  CHECK(big.data == std::vector<float>{-2.5f});

  auto color = read_pfm(bytes_of("PF\n1 1\n-1\n", [] {
    std::vector<std::uint8_t> p;
    for (float v : {0.25f, 0.5f, 0.75f}) {
      auto b = le(v);
      p.insert(p.end(), b.begin(), b.end());
    }
    return p;
  }()));
  CHECK(color.channels == 3);
  CHECK(color.at(0, 0, 2) == 0.75f);
}

TEST_CASE("PFM round trip is byte-exact", "[pfm]") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-100, 100);
  for (double scale : {-1.0, 1.0, -0.5, 3.25}) {
    PfmImage img;
    img.width = 4;
    img.height = 3;
    img.scale = scale;
    img.data.resize(12);
    for (auto& v : img.data) v = u(rng);
    const Bytes file = write_pfm(img);
    CHECK(write_pfm(read_pfm(file)) == file);
    CHECK(read_pfm(file).data == img.data);
  }
  // Foreign header spelling survives as well.
  const Bytes foreign = bytes_of("Pf\n1 1\n-1.000000\n", le(7.0f));
  CHECK(write_pfm(read_pfm(foreign)) == foreign);

  // Non-finite payloads too.
  PfmImage odd;
  odd.width = 3;
  odd.height = 1;
  odd.data = {std::numeric_limits<float>::infinity(), -0.0f, std::numeric_limits<float>::denorm_min()};
  const Bytes f = write_pfm(odd);
  CHECK(write_pfm(read_pfm(f)) == f);
}

TEST_CASE("PFM errors carry byte offsets", "[pfm][errors]") {
  CHECK(error_offset([] { read_pfm(bytes_of("P6\n1 1\n-1\n", le(1))); }) == 0);
  CHECK(error_offset([] { read_pfm(bytes_of("Pf\n2 2\n-1\n", le(1))); }) == 14);
  CHECK(error_offset([] { read_pfm(bytes_of("Pf\n1 1\n0.0\n", le(1))); }) == 7);
  CHECK_THROWS_AS(read_pfm(bytes_of("Pf\n1 x\n-1\n", le(1))), FormatError);
  CHECK_THROWS_AS(read_pfm(bytes_of("Pf\n1")), FormatError);
}

TEST_CASE("KITTI disparity decode", "[kitti]") {
  Tensor<float> d({1, 3}, std::vector<float>{2.0f, 0.0f, 255.99609375f});
  auto png = write_kitti_disparity(d);
  auto back = read_kitti_disparity(png);
  CHECK(back.disparity[0] == 2.0f);
  CHECK(back.valid[0] == 1);
  CHECK(back.valid[1] == 0);
  CHECK(back.disparity[2] == Catch::Approx(255.996).margin(1e-3));
  CHECK(back.valid[2] == 1);

  // 65535 survives decoding but leaves the valid range downstream.
  StereoSample s{Tensor<float>({3, 1, 3}), Tensor<float>({3, 1, 3}), back.disparity, back.valid};
  enforce_invariants(s, 192);
  CHECK(s.valid[0] == 1);
  CHECK(s.valid[2] == 0);

  auto rgb = write_png_rgb(Tensor<float>({3, 2, 2}, 0.5f));
  CHECK_THROWS_AS(read_kitti_disparity(rgb), FormatError);
  CHECK_THROWS_AS(read_kitti_disparity(Bytes{1, 2, 3}), FormatError);
}

TEST_CASE("RGB PNG round trip", "[png]") {
  Tensor<float> img({3, 5, 7});
  std::mt19937_64 rng(1);
  for (auto& v : img.storage()) v = static_cast<float>(rng() % 256) / 255.0f;
  auto back = read_png_rgb(write_png_rgb(img));
  REQUIRE(back.shape() == img.shape());
  for (std::size_t k = 0; k < img.size(); ++k) CHECK(back[k] == img[k]);
}

TEST_CASE("synthetic pairs are deterministic and exact", "[synthetic]") {
  auto a = synth_stereo(42, 64, 96, 24, 3);
  auto b = synth_stereo(42, 64, 96, 24, 3);
  CHECK(a.left == b.left);
  CHECK(a.right == b.right);
  CHECK(a.gt == b.gt);
  CHECK(a.valid == b.valid);
  CHECK_FALSE(synth_stereo(43, 64, 96, 24, 3).left == a.left);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = synth_stereo(seed, 32, 64, 16, 4);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 64; ++x) {
        if (!s.valid.at(y, x)) continue;
        const int d = static_cast<int>(s.gt.at(y, x));
        REQUIRE(static_cast<float>(d) == s.gt.at(y, x));
        CHECK(d >= 1);
        CHECK(d <= 16);
        for (int c = 0; c < 3; ++c) CHECK(s.right.at(c, y, x - d) == s.left.at(c, y, x));
      }
  }
  CHECK_THROWS_AS(synth_stereo(1, 64, 96, 25, 3), DomainError);
  CHECK_THROWS_AS(synth_stereo(1, 62, 96, 8, 3), DomainError);
}

TEST_CASE("synthetic valid fraction at 64x96, max_d 24, 3 planes", "[synthetic]") {
  double lowest = 1.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto s = synth_stereo(seed, 64, 96, 24, 3);
    lowest = std::min(lowest, static_cast<double>(valid_count(s.valid)) / s.valid.size());
  }
  CHECK(lowest >= 0.70);
}

TEST_CASE("evaluation padding and unpadding", "[preprocess]") {
  StereoSample s{Tensor<float>({3, 375, 30}, 0.5f), Tensor<float>({3, 375, 30}, 0.5f), Tensor<float>({375, 30}, 3.0f),
                 Mask({375, 30}, std::uint8_t{1})};
  std::mt19937_64 rng(0);
  auto b = preprocess(s, 0, 0, false, rng);
  CHECK(b.left.shape() == Shape{1, 3, 376, 32});
  CHECK(b.pad.bottom == 1);
  CHECK(b.pad.right == 2);
  CHECK(b.valid.at(0, 375, 0) == 0);
  CHECK(b.valid.at(0, 374, 29) == 1);
  Tensor<float> pred({1, 376, 32}, 1.0f);
  CHECK(unpad(pred, b.pad).shape() == Shape{1, 375, 30});
}

TEST_CASE("training crops stay in bounds", "[preprocess]") {
  auto s = synth_stereo(5, 64, 96, 24, 3);
  // Tag every pixel with its coordinates to recover crop offsets.
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 96; ++x) s.gt.at(y, x) = static_cast<float>(y * 1000 + x);
  std::mt19937_64 rng(9);
  Normalization n;
  for (int i = 0; i < 1000; ++i) {
    auto b = preprocess(s, 32, 48, true, rng, n);
    REQUIRE(b.gt.shape() == Shape{1, 32, 48});
    const int tag = static_cast<int>(b.gt[0]);
    const int y0 = tag / 1000, x0 = tag % 1000;
    CHECK(y0 + 32 <= 64);
    CHECK(x0 + 48 <= 96);
  }
  CHECK_THROWS_AS(preprocess(s, 68, 48, true, rng, n), DataError);
  CHECK_THROWS_AS(preprocess(s, 30, 48, true, rng, n), ConfigError);
}

TEST_CASE("normalization inverts", "[preprocess]") {
  Tensor<float> img({2, 3, 4, 5});
  std::mt19937_64 rng(4);
  for (auto& v : img.storage()) v = static_cast<float>(rng() % 1000) / 999.0f;
  auto copy = img;
  Normalization n;
  normalize(copy, n);
  CHECK_FALSE(copy == img);
  denormalize(copy, n);
  for (std::size_t k = 0; k < img.size(); ++k) CHECK(std::abs(copy[k] - img[k]) <= 1e-6);
}

TEST_CASE("dataset URIs, ordering and batches", "[loader]") {
  auto spec = parse_dataset_uri("synthetic://7/32x64/12");
  CHECK(spec.seed == 7);
  CHECK(spec.height == 32);
  CHECK(spec.width == 64);
  CHECK(spec.max_d == 12);
  CHECK_THROWS_AS(parse_dataset_uri("synthetic://7/32-64/12"), ConfigError);
  spec.count = 12;
  spec.d_max = 32;
  spec.crop_h = 16;
  spec.crop_w = 32;
  StereoDataset a(spec), b(spec);
  CHECK(a.size() == 12);
  CHECK(a.get(3).left == b.get(3).left);
  auto val_spec = spec;
  val_spec.split = "val";
  CHECK_FALSE(StereoDataset(val_spec).get(0).left == a.get(0).left);

  auto o1 = epoch_order(12, 5, 0), o2 = epoch_order(12, 5, 0), o3 = epoch_order(12, 5, 1);
  CHECK(o1 == o2);
  CHECK(o1 != o3);
  auto sorted = o1;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 12; ++i) CHECK(sorted[i] == i);

  auto x = training_batch(a, o1, 0, 4, 5, 0), y = training_batch(b, o2, 0, 4, 5, 0);
  CHECK(x.left.shape() == Shape{4, 3, 16, 32});
  CHECK(x.left == y.left);
  CHECK(x.gt == y.gt);
  auto last = training_batch(a, o1, 8, 8, 5, 0);
  CHECK(last.size() == 4);

  auto j = to_json(spec);
  auto round = dataset_spec_from_json(j);
  CHECK(round.seed == spec.seed);
  CHECK(round.crop_w == spec.crop_w);
  spec.crop_h = 18;
  CHECK_THROWS_AS(validate(spec), ConfigError);
}

TEST_CASE("list-file datasets load PNG images with PFM or PNG disparity", "[loader]") {
  TempDir dir;
  auto s = synth_stereo(1, 16, 32, 8, 2);
  write_file((dir.path / "l.png").string(), write_png_rgb(s.left));
  write_file((dir.path / "r.png").string(), write_png_rgb(s.right));
  auto gt = Tensor<float>({16, 32}, s.gt.storage());
  gt[0] = 300.0f;  // beyond d_max
  write_file((dir.path / "d.pfm").string(), write_pfm(tensor_to_pfm(gt)));
  write_file((dir.path / "d.png").string(), write_kitti_disparity(gt));
  {
    std::ofstream list(dir.path / "train.txt");
    list << "# left right disparity\nl.png r.png d.pfm\nl.png r.png d.png\n";
  }
  DatasetSpec spec;
  spec.kind = DatasetKind::sceneflow;
  spec.root = dir.path.string();
  spec.d_max = 16;
  StereoDataset data(spec);
  REQUIRE(data.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    auto sample = data.get(i);
    CHECK(sample.height() == 16);
    CHECK(sample.valid[0] == 0);
    CHECK(sample.gt[1] == s.gt[1]);
    CHECK(sample.left.shape() == Shape{3, 16, 32});
  }
  spec.split = "missing";
  CHECK_THROWS_AS(StereoDataset(spec), DataError);
}
