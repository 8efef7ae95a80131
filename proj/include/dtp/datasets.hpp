#pragma once

// Stereo samples, dataset loaders (SceneFlow, KITTI, synthetic) and the
// preprocessing that turns a sample into network input.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtp/error.hpp"
#include "dtp/image_io.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

using Mask = Tensor<std::uint8_t>;

/// Images are 3 x H x W in [0, 1]; disparity and mask are H x W. The
/// disparity is the left-view disparity: left(y, x) matches right(y, x - d).
struct StereoSample {
  Tensor<float> left;
  Tensor<float> right;
  Tensor<float> gt;
  Mask valid;

  int height() const { return gt.dim(0); }
  int width() const { return gt.dim(1); }
};

/// Clears the mask wherever gt is not in (0, d_max) and checks that all arrays agree on H x W.
inline void enforce_invariants(StereoSample& s, int d_max) {
  if (s.gt.rank() != 2) throw DataError("ground truth must be H x W, got " + to_string(s.gt.shape()));
  const Shape image{3, s.gt.dim(0), s.gt.dim(1)};
  if (s.left.shape() != image || s.right.shape() != image || s.valid.shape() != s.gt.shape()) {
    throw DataError("sample arrays disagree: left " + to_string(s.left.shape()) + ", right " +
                    to_string(s.right.shape()) + ", gt " + to_string(s.gt.shape()) + ", mask " +
                    to_string(s.valid.shape()));
  }
  for (std::size_t k = 0; k < s.gt.size(); ++k) {
    const float g = s.gt[k];
    if (!(g > 0.0f && g < static_cast<float>(d_max))) s.valid[k] = 0;
  }
}

inline std::size_t valid_count(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.storage().begin(), m.storage().end(), [](auto v) { return v != 0; }));
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b + 0x632be59bd9b4e019ULL)); }

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return mix(mix(a, b), c); }

/// Uniform in [0, 1) from 53 hash bits.
inline double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

/// Uniform integer in [lo, hi].
inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(rng() % span);
}

struct Plane {
  int x0, x1, y0, y1;  // left-view rectangle, half-open
  int disparity;
  std::uint64_t texture;
  std::array<float, 3> base;
};

/// Texture colour of a plane at left-view integer coordinates: a per-plane
/// base colour modulated by pixel and 4x4 block noise.
inline float texel(const Plane& p, int y, int x, int c) {
  const auto xx = static_cast<std::uint64_t>(static_cast<std::int64_t>(x) + (1 << 20));
  const auto yy = static_cast<std::uint64_t>(y);
  const double fine = unit(mix(p.texture, yy * 0x100000001ULL + xx, static_cast<std::uint64_t>(c)));
  const double coarse = unit(mix(p.texture ^ 0xabcdefULL, (yy / 4) * 0x100000001ULL + xx / 4, static_cast<std::uint64_t>(c)));
  return static_cast<float>(0.35 * p.base[c] + 0.35 * coarse + 0.3 * fine);
}

}  // namespace detail

/// Fronto-parallel textured planes at integer disparities in [1, max_d]; the
/// first plane fills the frame. Pixels whose match falls outside the right
/// image or is hidden by a nearer plane are masked invalid.
inline StereoSample synth_stereo(std::uint64_t seed, int height, int width, int max_d, int n_planes) {
  if (height <= 0 || width <= 0 || height % 4 || width % 4) {
    throw DomainError("synthetic image size must be positive and divisible by 4");
  }
  if (max_d < 1 || max_d > width / 4) {
    throw DomainError("max_d = " + std::to_string(max_d) + " must lie in [1, W/4 = " + std::to_string(width / 4) + "]");
  }
  if (n_planes < 1) throw DomainError("n_planes must be >= 1");

  std::mt19937_64 rng(detail::mix(seed, 0x5eed));
  std::vector<detail::Plane> planes;
  for (int p = 0; p < n_planes; ++p) {
    detail::Plane pl{};
    if (p == 0) {
      pl = {0, width, 0, height, detail::uniform_int(rng, 1, std::max(1, max_d / 3)), 0, {}};
    } else {
      const int w = detail::uniform_int(rng, width / 6, width / 2);
      const int h = detail::uniform_int(rng, height / 6, height / 2);
      pl.x0 = detail::uniform_int(rng, 0, width - w);
      pl.y0 = detail::uniform_int(rng, 0, height - h);
      pl.x1 = pl.x0 + w;
      pl.y1 = pl.y0 + h;
      pl.disparity = detail::uniform_int(rng, 1, max_d);
    }
    pl.texture = rng();
    for (auto& b : pl.base) b = static_cast<float>(detail::unit(rng()));
    planes.push_back(pl);
  }
  // Draw order: larger disparity (nearer) wins; ties resolved by later plane.
  std::vector<int> order(planes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return planes[a].disparity < planes[b].disparity; });

  // Topmost plane at left-view (y, x) and at right-view (y, x) (the latter sees
  // plane p at left coordinate x + d_p).
  auto top_left = [&](int y, int x) {
    int best = 0;
    for (int idx : order) {
      const auto& p = planes[idx];
      if (y >= p.y0 && y < p.y1 && x >= p.x0 && x < p.x1) best = idx;
    }
    return best;
  };
  auto top_right = [&](int y, int x) {
    int best = -1;
    for (int idx : order) {
      const auto& p = planes[idx];
      const int xl = x + p.disparity;
      if (idx == 0 || (y >= p.y0 && y < p.y1 && xl >= p.x0 && xl < p.x1)) best = idx;
    }
    return best;
  };

  StereoSample s{Tensor<float>({3, height, width}), Tensor<float>({3, height, width}), Tensor<float>({height, width}),
                 Mask({height, width})};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int l = top_left(y, x);
      const int r = top_right(y, x);
      for (int c = 0; c < 3; ++c) {
        s.left.at(c, y, x) = detail::texel(planes[l], y, x, c);
        s.right.at(c, y, x) = detail::texel(planes[r], y, x + planes[r].disparity, c);
      }
      const int d = planes[l].disparity;
      s.gt.at(y, x) = static_cast<float>(d);
      s.valid.at(y, x) = x - d >= 0 && top_right(y, x - d) == l;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Per-channel image statistics (ImageNet) applied after scaling to [0, 1].
struct Normalization {
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
};

inline nlohmann::ordered_json to_json(const Normalization& n) { return {{"mean", n.mean}, {"std", n.stddev}}; }

inline Normalization normalization_from_json(const nlohmann::json& j) {
  Normalization n;
  if (j.contains("mean")) n.mean = j.at("mean").get<std::array<float, 3>>();
  if (j.contains("std")) n.stddev = j.at("std").get<std::array<float, 3>>();
  for (float s : n.stddev)
    if (!(s > 0)) throw ConfigError("normalization std must be positive");
  return n;
}

/// In-place on a 3 x H x W or B x 3 x H x W tensor.
inline void normalize(Tensor<float>& img, const Normalization& n) {
  const int c_axis = img.rank() - 3;
  const int batch = c_axis ? img.dim(0) : 1;
  const std::size_t plane = static_cast<std::size_t>(img.dim(c_axis + 1)) * img.dim(c_axis + 2);
  float* p = img.data();
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < 3; ++c, p += plane)
      for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - n.mean[c]) / n.stddev[c];
}

inline void denormalize(Tensor<float>& img, const Normalization& n) {
  const int c_axis = img.rank() - 3;
  const int batch = c_axis ? img.dim(0) : 1;
  const std::size_t plane = static_cast<std::size_t>(img.dim(c_axis + 1)) * img.dim(c_axis + 2);
  float* p = img.data();
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < 3; ++c, p += plane)
      for (std::size_t k = 0; k < plane; ++k) p[k] = p[k] * n.stddev[c] + n.mean[c];
}

struct Padding {
  int bottom = 0;
  int right = 0;
};

/// Network-ready batch: images B x 3 x H x W (normalized), gt and mask B x H x W.
struct Batch {
  Tensor<float> left;
  Tensor<float> right;
  Tensor<float> gt;
  Mask valid;
  Padding pad;

  int size() const { return left.empty() ? 0 : left.dim(0); }
};

namespace detail {

template <typename T>
Tensor<T> window(const Tensor<T>& src, int y0, int x0, int h, int w) {
  const bool image = src.rank() == 3;
  const int channels = image ? src.dim(0) : 1;
  const int sh = src.dim(src.rank() - 2), sw = src.dim(src.rank() - 1);
  Tensor<T> out(image ? Shape{channels, h, w} : Shape{h, w});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < h; ++y) {
      const int sy = y0 + y;
      if (sy >= sh) continue;
      for (int x = 0; x < w; ++x) {
        const int sx = x0 + x;
        if (sx >= sw) continue;
        out[(static_cast<std::size_t>(c) * h + y) * w + x] = src[(static_cast<std::size_t>(c) * sh + sy) * sw + sx];
      }
    }
  return out;
}

}  // namespace detail

/// Training: random crop of `crop_h x crop_w` drawn from `rng`. Evaluation:
/// the full frame zero-padded at the bottom/right to a multiple of 4 (the
/// padding is recorded for unpad()). Either way images are normalized and
/// come back as a batch of one.
inline Batch preprocess(const StereoSample& s, int crop_h, int crop_w, bool training, std::mt19937_64& rng,
                        const Normalization& norm = {}) {
  const int h = s.height(), w = s.width();
  Batch b;
  int y0 = 0, x0 = 0, out_h = h, out_w = w;
  if (training) {
    if (crop_h <= 0 || crop_w <= 0 || crop_h % 4 || crop_w % 4) throw ConfigError("crop must be positive multiples of 4");
    if (crop_h > h || crop_w > w) {
      throw DataError("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) + " exceeds image " +
                      std::to_string(h) + "x" + std::to_string(w));
    }
    y0 = detail::uniform_int(rng, 0, h - crop_h);
    x0 = detail::uniform_int(rng, 0, w - crop_w);
    out_h = crop_h;
    out_w = crop_w;
  } else {
    out_h = (h + 3) / 4 * 4;
    out_w = (w + 3) / 4 * 4;
    b.pad = {out_h - h, out_w - w};
  }
  auto l = detail::window(s.left, y0, x0, out_h, out_w);
  auto r = detail::window(s.right, y0, x0, out_h, out_w);
  normalize(l, norm);
  normalize(r, norm);
  if (!training) {
    // padded pixels hold zero after normalization
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
          if (y >= h || x >= w) l.at(c, y, x) = r.at(c, y, x) = 0.0f;
  }
  b.left = Tensor<float>({1, 3, out_h, out_w}, std::move(l.storage()));
  b.right = Tensor<float>({1, 3, out_h, out_w}, std::move(r.storage()));
  b.gt = Tensor<float>({1, out_h, out_w}, detail::window(s.gt, y0, x0, out_h, out_w).storage());
  b.valid = Mask({1, out_h, out_w}, detail::window(s.valid, y0, x0, out_h, out_w).storage());
  return b;
}

/// Crops B x H x W predictions back to the unpadded frame.
template <typename T>
Tensor<T> unpad(const Tensor<T>& pred, const Padding& pad) {
  if (pad.bottom == 0 && pad.right == 0) return pred;
  const int batch = pred.dim(0), h = pred.dim(1) - pad.bottom, w = pred.dim(2) - pad.right;
  Tensor<T> out({batch, h, w});
  for (int n = 0; n < batch; ++n)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(n, y, x) = pred.at(n, y, x);
  return out;
}

/// Concatenates single-sample batches of identical size along the batch axis.
inline Batch collate(const std::vector<Batch>& items) {
  if (items.empty()) throw DataError("cannot collate an empty batch");
  auto cat = [&](auto member) {
    using Tn = std::decay_t<decltype(items[0].*member)>;
    Shape shape = (items[0].*member).shape();
    std::vector<typename Tn::value_type> values;
    for (const auto& it : items) {
      const auto& t = it.*member;
      Shape s = t.shape();
      s[0] = shape[0];
      if (s != shape) throw ShapeError("collate: mismatched sample sizes " + to_string(t.shape()));
      values.insert(values.end(), t.storage().begin(), t.storage().end());
    }
    shape[0] = static_cast<int>(items.size()) * shape[0];
    return Tn(shape, std::move(values));
  };
  Batch b;
  b.left = cat(&Batch::left);
  b.right = cat(&Batch::right);
  b.gt = cat(&Batch::gt);
  b.valid = cat(&Batch::valid);
  b.pad = items[0].pad;
  return b;
}

// ---------------------------------------------------------------------------
// Datasets

enum class DatasetKind { sceneflow, kitti, synthetic };

inline const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::sceneflow: return "sceneflow";
    case DatasetKind::kitti: return "kitti";
    case DatasetKind::synthetic: return "synthetic";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "sceneflow") return DatasetKind::sceneflow;
  if (s == "kitti") return DatasetKind::kitti;
  if (s == "synthetic") return DatasetKind::synthetic;
  throw ConfigError("unknown dataset kind '" + s + "'");
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic;
  std::string root;  // directory for file datasets
  std::string split = "train";
  std::uint64_t seed = 0;
  int height = 64;  // synthetic frame size
  int width = 96;
  int max_d = 24;
  int n_planes = 3;
  int count = 500;
  int crop_h = 0;  // 0: full synthetic frame
  int crop_w = 0;
  int d_max = 192;
};

/// "synthetic://seed/HxW/max_d"
inline DatasetSpec parse_dataset_uri(const std::string& uri) {
  static const std::regex re(R"(synthetic://(\d+)/(\d+)x(\d+)/(\d+))");
  std::smatch m;
  if (!std::regex_match(uri, m, re)) throw ConfigError("bad dataset URI '" + uri + "'");
  DatasetSpec s;
  s.kind = DatasetKind::synthetic;
  s.seed = std::stoull(m[1]);
  s.height = std::stoi(m[2]);
  s.width = std::stoi(m[3]);
  s.max_d = std::stoi(m[4]);
  return s;
}

inline void validate(const DatasetSpec& s) {
  if (s.crop_h < 0 || s.crop_w < 0 || s.crop_h % 4 || s.crop_w % 4) {
    throw ConfigError("crop dimensions must be multiples of 4");
  }
  if (s.d_max <= 0) throw ConfigError("dataset d_max must be positive");
  if (s.kind == DatasetKind::synthetic) {
    if (s.count <= 0) throw ConfigError("synthetic dataset needs a positive count");
    if (s.crop_h > s.height || s.crop_w > s.width) throw ConfigError("crop exceeds synthetic frame size");
    if (s.max_d >= s.d_max) throw ConfigError("synthetic max_d must be below d_max");
  } else if (s.root.empty()) {
    throw ConfigError(std::string(to_string(s.kind)) + " dataset needs a root directory");
  }
}

inline nlohmann::ordered_json to_json(const DatasetSpec& s) {
  nlohmann::ordered_json j{{"kind", to_string(s.kind)}, {"split", s.split}, {"d_max", s.d_max},
                           {"crop", {s.crop_h, s.crop_w}}};
  if (s.kind == DatasetKind::synthetic) {
    j["seed"] = s.seed;
    j["size"] = {s.height, s.width};
    j["max_d"] = s.max_d;
    j["n_planes"] = s.n_planes;
    j["count"] = s.count;
  } else {
    j["root"] = s.root;
  }
  return j;
}

/// Accepts {"uri": "synthetic://..."} or explicit fields.
inline DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  DatasetSpec s;
  if (j.contains("uri")) s = parse_dataset_uri(j.at("uri").get<std::string>());
  if (j.contains("kind")) s.kind = parse_dataset_kind(j.at("kind").get<std::string>());
  s.root = j.value("root", s.root);
  s.split = j.value("split", s.split);
  s.seed = j.value("seed", s.seed);
  if (j.contains("size")) {
    s.height = j.at("size").at(0).get<int>();
    s.width = j.at("size").at(1).get<int>();
  }
  s.max_d = j.value("max_d", s.max_d);
  s.n_planes = j.value("n_planes", s.n_planes);
  s.count = j.value("count", s.count);
  if (j.contains("crop")) {
    s.crop_h = j.at("crop").at(0).get<int>();
    s.crop_w = j.at("crop").at(1).get<int>();
  }
  s.d_max = j.value("d_max", s.d_max);
  validate(s);
  return s;
}

struct SampleFiles {
  std::string left;
  std::string right;
  std::string disparity;
};

/// Whitespace-separated "left right disparity" per line, relative to `root`.
inline std::vector<SampleFiles> read_list_file(const std::string& path, const std::string& root) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open list file '" + path + "'");
  std::vector<SampleFiles> out;
  std::string line;
  int lineno = 0;
  auto resolve = [&](const std::string& p) {
    return std::filesystem::path(p).is_absolute() ? p : (std::filesystem::path(root) / p).string();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SampleFiles f;
    if (!(ls >> f.left >> f.right >> f.disparity)) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 'left right disparity'");
    }
    out.push_back({resolve(f.left), resolve(f.right), resolve(f.disparity)});
  }
  return out;
}

inline StereoSample load_sample_files(const SampleFiles& f) {
  StereoSample s;
  s.left = read_png_rgb(read_file(f.left));
  s.right = read_png_rgb(read_file(f.right));
  if (std::filesystem::path(f.disparity).extension() == ".pfm") {
    auto img = read_pfm(read_file(f.disparity));
    s.gt = pfm_to_tensor(img);
    s.valid = Mask(s.gt.shape(), std::uint8_t{1});
    for (std::size_t k = 0; k < s.gt.size(); ++k) {
      // SceneFlow stores positive left disparities; guard against sign flips
      s.gt[k] = std::abs(s.gt[k]);
      if (!std::isfinite(s.gt[k])) s.valid[k] = 0;
    }
  } else {
    auto d = read_kitti_disparity(read_file(f.disparity));
    s.gt = std::move(d.disparity);
    s.valid = std::move(d.valid);
  }
  return s;
}

class StereoDataset {
 public:
  /// File datasets read "<root>/<split>.txt"; KITTI falls back to the
  /// training layout (image_2, image_3, disp_occ_0) with every fifth frame in
  /// the "val" split.
  explicit StereoDataset(DatasetSpec spec) : spec_(std::move(spec)) {
    validate(spec_);
    if (spec_.kind == DatasetKind::synthetic) {
      std::uint64_t split_tag = 0xcbf29ce484222325ULL;  // FNV-1a of the split name
      for (unsigned char c : spec_.split) split_tag = (split_tag ^ c) * 0x100000001b3ULL;
      for (int i = 0; i < spec_.count; ++i) {
        StereoSample s = synth_stereo(detail::mix(spec_.seed, split_tag, static_cast<std::uint64_t>(i)), spec_.height,
                                      spec_.width, spec_.max_d, spec_.n_planes);
        enforce_invariants(s, spec_.d_max);
        cache_.push_back(std::move(s));
      }
      return;
    }
    const auto list = std::filesystem::path(spec_.root) / (spec_.split + ".txt");
    if (std::filesystem::exists(list)) {
      files_ = read_list_file(list.string(), spec_.root);
    } else if (spec_.kind == DatasetKind::kitti) {
      files_ = discover_kitti();
    } else {
      throw DataError("missing list file '" + list.string() + "'");
    }
    if (files_.empty()) throw DataError("dataset '" + spec_.root + "' split '" + spec_.split + "' is empty");
  }

  const DatasetSpec& spec() const { return spec_; }
  std::size_t size() const { return spec_.kind == DatasetKind::synthetic ? cache_.size() : files_.size(); }

  StereoSample get(std::size_t i) const {
    if (i >= size()) throw DataError("sample index " + std::to_string(i) + " out of range");
    if (spec_.kind == DatasetKind::synthetic) return cache_[i];
    StereoSample s = load_sample_files(files_[i]);
    enforce_invariants(s, spec_.d_max);
    return s;
  }

 private:
  std::vector<SampleFiles> discover_kitti() const {
    namespace fs = std::filesystem;
    const fs::path root(spec_.root);
    if (!fs::exists(root / "image_2")) throw DataError("KITTI root lacks image_2/: " + spec_.root);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(root / "image_2")) {
      const auto name = e.path().filename().string();
      if (name.size() > 7 && name.substr(name.size() - 7) == "_10.png") names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    std::vector<SampleFiles> out;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const bool val = i % 5 == 0;
      if ((spec_.split == "val") != val && spec_.split != "all") continue;
      out.push_back({(root / "image_2" / names[i]).string(), (root / "image_3" / names[i]).string(),
                     (root / "disp_occ_0" / names[i]).string()});
    }
    return out;
  }

  DatasetSpec spec_;
  std::vector<StereoSample> cache_;
  std::vector<SampleFiles> files_;
};

/// Sample order for an epoch: a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch, bool shuffle = true) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!shuffle) return order;
  std::mt19937_64 rng(detail::mix(seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

/// Training batch at position `first` of the epoch order; crops are drawn
/// from a generator keyed by (seed, epoch, sample index).
inline Batch training_batch(const StereoDataset& data, const std::vector<std::size_t>& order, std::size_t first,
                            int batch_size, std::uint64_t seed, int epoch, const Normalization& norm = {}) {
  const auto& spec = data.spec();
  const int ch = spec.crop_h ? spec.crop_h : spec.height;
  const int cw = spec.crop_w ? spec.crop_w : spec.width;
  std::vector<Batch> items;
  for (std::size_t k = first; k < std::min(order.size(), first + static_cast<std::size_t>(batch_size)); ++k) {
    std::mt19937_64 rng(detail::mix(seed, static_cast<std::uint64_t>(epoch), order[k]));
    items.push_back(preprocess(data.get(order[k]), ch, cw, true, rng, norm));
  }
  return collate(items);
}

/// Full-frame evaluation input for one sample.
inline Batch evaluation_batch(const StereoDataset& data, std::size_t index, const Normalization& norm = {}) {
  std::mt19937_64 unused(0);
  return preprocess(data.get(index), 0, 0, false, unused, norm);
}

}  // namespace dtp
