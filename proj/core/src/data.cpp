#include "mixacm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mixacm/error.hpp"

namespace mixacm {

std::pair<Tensor, std::vector<int>> Dataset::slice(std::size_t start, std::size_t count) const {
  if (start + count > size()) throw DimensionError("Dataset::slice: range out of bounds");
  const std::size_t row = images.numel() / size();
  Tensor x(Shape{count, images.dim(1), images.dim(2), images.dim(3)});
  std::copy_n(images.data().data() + start * row, count * row, x.data().data());
  std::vector<int> y(labels.begin() + (long)start, labels.begin() + (long)(start + count));
  return {std::move(x), std::move(y)};
}

std::pair<Tensor, std::vector<int>> Dataset::gather(const std::vector<std::size_t>& idx) const {
  const std::size_t row = images.numel() / size();
  Tensor x(Shape{idx.size(), images.dim(1), images.dim(2), images.dim(3)});
  std::vector<int> y(idx.size());
  auto src = images.data();
  auto dst = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= size()) throw DimensionError("Dataset::gather: index out of bounds");
    std::copy_n(src.data() + idx[i] * row, row, dst.data() + i * row);
    y[i] = labels[idx[i]];
  }
  return {std::move(x), std::move(y)};
}

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError("Dataset: images must be [N,C,H,W]");
  if (images.dim(0) != labels.size()) throw DataError("Dataset: image/label count mismatch");
  if (classes < 2) throw DataError("Dataset: need at least 2 classes");
  for (int y : labels)
    if (y < 0 || y >= classes) throw DataError("Dataset: label out of range");
  for (double v : images.data())
    if (v < 0.0 || v > 1.0) throw DataError("Dataset: pixel outside [0,1]");
}

Tensor one_hot(const std::vector<int>& labels, int classes) {
  Tensor y(Shape{labels.size(), (std::size_t)classes});
  auto yd = y.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw DimensionError("one_hot: label out of range");
    yd[i * (std::size_t)classes + (std::size_t)labels[i]] = 1.0;
  }
  return y;
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("load_idx: truncated file " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                        (unsigned char)(v >> 8), (unsigned char)v};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw DataError("load_idx: cannot open " + images_path);
  const std::uint32_t magic_i = read_be32(fi, images_path);
  if (magic_i != kIdxImagesMagic)
    throw DataError("load_idx: bad image magic in " + images_path);
  const std::uint32_t n = read_be32(fi, images_path);
  const std::uint32_t h = read_be32(fi, images_path);
  const std::uint32_t w = read_be32(fi, images_path);
  std::vector<unsigned char> pixels((std::size_t)n * h * w);
  if (!fi.read(reinterpret_cast<char*>(pixels.data()), (std::streamsize)pixels.size()))
    throw DataError("load_idx: truncated pixel data in " + images_path);

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw DataError("load_idx: cannot open " + labels_path);
  const std::uint32_t magic_l = read_be32(fl, labels_path);
  if (magic_l != kIdxLabelsMagic)
    throw DataError("load_idx: bad label magic in " + labels_path);
  const std::uint32_t nl = read_be32(fl, labels_path);
  if (nl != n)
    throw DataError("load_idx: " + std::to_string(n) + " images but " + std::to_string(nl) +
                    " labels");
  std::vector<unsigned char> raw_labels(nl);
  if (!fl.read(reinterpret_cast<char*>(raw_labels.data()), (std::streamsize)raw_labels.size()))
    throw DataError("load_idx: truncated label data in " + labels_path);

  Dataset ds;
  ds.images = Tensor(Shape{n, 1, h, w});
  auto img = ds.images.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) img[i] = pixels[i] / 255.0;
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  int max_label = 0;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.classes = max_label + 1;
  ds.name = images_path;
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& data) {
  if (data.images.dim(1) != 1)
    throw DataError("write_idx: only single-channel images are representable");
  std::ofstream fi(images_path, std::ios::binary);
  if (!fi) throw DataError("write_idx: cannot open " + images_path);
  write_be32(fi, kIdxImagesMagic);
  write_be32(fi, (std::uint32_t)data.size());
  write_be32(fi, (std::uint32_t)data.images.dim(2));
  write_be32(fi, (std::uint32_t)data.images.dim(3));
  for (double v : data.images.data()) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    const unsigned char b = (unsigned char)q;
    fi.write(reinterpret_cast<const char*>(&b), 1);
  }
  std::ofstream fl(labels_path, std::ios::binary);
  if (!fl) throw DataError("write_idx: cannot open " + labels_path);
  write_be32(fl, kIdxLabelsMagic);
  write_be32(fl, (std::uint32_t)data.size());
  for (int y : data.labels) {
    const unsigned char b = (unsigned char)y;
    fl.write(reinterpret_cast<const char*>(&b), 1);
  }
}

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

Dataset synth_blobs(int classes, int per_class, int image_size, double noise_sigma,
                    std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synth_blobs: need at least 2 classes");
  if (per_class < 1 || image_size < 4) throw ConfigError("synth_blobs: bad size parameters");
  if (noise_sigma < 0.0) throw ConfigError("synth_blobs: noise_sigma must be nonnegative");

  const int patch = std::max(2, image_size / 3);
  const double background = 0.1, amplitude = 0.6;
  // distinct patch corners: 4 corners, then centers of edges, then center
  std::vector<std::pair<int, int>> anchors = {
      {1, 1},
      {1, image_size - patch - 1},
      {image_size - patch - 1, 1},
      {image_size - patch - 1, image_size - patch - 1},
      {(image_size - patch) / 2, (image_size - patch) / 2},
      {1, (image_size - patch) / 2},
      {image_size - patch - 1, (image_size - patch) / 2},
      {(image_size - patch) / 2, 1},
  };
  if ((std::size_t)classes > anchors.size())
    throw ConfigError("synth_blobs: at most " + std::to_string(anchors.size()) + " classes");

  Rng rng(seed);
  const std::size_t n = (std::size_t)classes * per_class;
  Dataset ds;
  ds.classes = classes;
  ds.name = "synth_blobs";
  ds.images = Tensor(Shape{n, 1, (std::size_t)image_size, (std::size_t)image_size}, background);
  ds.labels.resize(n);
  auto img = ds.images.data();
  const std::size_t hw = (std::size_t)image_size * image_size;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = (int)(i / (std::size_t)per_class);
    ds.labels[i] = c;
    double* px = img.data() + i * hw;
    const auto [r0, c0] = anchors[(std::size_t)c];
    for (int r = r0; r < r0 + patch; ++r)
      for (int cc = c0; cc < c0 + patch; ++cc) px[r * image_size + cc] += amplitude;
    if (noise_sigma > 0.0)
      for (std::size_t p = 0; p < hw; ++p) px[p] += rng.normal(0.0, noise_sigma);
    for (std::size_t p = 0; p < hw; ++p) px[p] = std::clamp(px[p], 0.0, 1.0);
  }
  return ds;
}

void write_synth_manifest(const std::string& path, int classes, int per_class,
                          int image_size, double noise_sigma, std::uint64_t seed) {
  std::ofstream f(path);
  if (!f) throw DataError("write_synth_manifest: cannot open " + path);
  f << "generator=synth_blobs\nclasses=" << classes << "\nper_class=" << per_class
    << "\nimage_size=" << image_size << "\nnoise_sigma=" << noise_sigma << "\nseed=" << seed
    << "\n";
}

Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("subsample: fraction must lie in (0,1]");
  if (fraction == 1.0) return data;

  std::vector<std::vector<std::size_t>> per_class((std::size_t)data.classes);
  for (std::size_t i = 0; i < data.size(); ++i)
    per_class[(std::size_t)data.labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  for (auto& members : per_class) {
    if (members.empty()) continue;
    const std::size_t want =
        (std::size_t)std::llround(fraction * (double)members.size());
    if (want == 0)
      throw ConfigError("subsample: fraction leaves a class empty");
    std::vector<std::size_t> perm = rng.permutation(members.size());
    for (std::size_t j = 0; j < want; ++j) chosen.push_back(members[perm[j]]);
  }
  std::sort(chosen.begin(), chosen.end());

  auto [x, y] = data.gather(chosen);
  Dataset out;
  out.images = std::move(x);
  out.labels = std::move(y);
  out.classes = data.classes;
  out.name = data.name;
  out.split = data.split;
  return out;
}

// ---------------------------------------------------------------------------
// Batching / augmentation
// ---------------------------------------------------------------------------

Batcher::Batcher(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed)
    : data_(data), batch_size_(batch_size), rng_(shuffle_seed) {
  if (batch_size_ < 1) throw ConfigError("Batcher: batch_size must be >= 1");
}

std::size_t Batcher::batches_per_epoch() const {
  return (data_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> Batcher::epoch() {
  std::vector<std::size_t> perm = rng_.permutation(data_.size());
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < perm.size(); start += batch_size_) {
    const std::size_t count = std::min(batch_size_, perm.size() - start);
    out.emplace_back(perm.begin() + (long)start, perm.begin() + (long)(start + count));
  }
  return out;
}

Tensor random_crop_flip(const Tensor& batch, int pad, bool enabled, Rng& rng) {
  if (!enabled) return batch;
  if (batch.rank() != 4) throw DimensionError("random_crop_flip: expected NCHW");
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor out(batch.shape());
  auto src = batch.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const int dy = (int)rng.uniform_int((std::uint64_t)(2 * pad + 1)) - pad;
    const int dx = (int)rng.uniform_int((std::uint64_t)(2 * pad + 1)) - pad;
    const bool flip = rng.uniform() < 0.5;
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* sp = src.data() + (i * c + ci) * h * w;
      double* dp = dst.data() + (i * c + ci) * h * w;
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t cc = 0; cc < w; ++cc) {
          const long sr = (long)r + dy;
          const long sc0 = flip ? (long)(w - 1 - cc) : (long)cc;
          const long sc = sc0 + dx;
          dp[r * w + cc] = (sr >= 0 && sr < (long)h && sc >= 0 && sc < (long)w)
                               ? sp[sr * w + sc]
                               : 0.0;
        }
    }
  }
  return out;
}

}  // namespace mixacm
