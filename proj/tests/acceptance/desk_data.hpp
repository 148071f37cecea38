#pragma once

#include <algorithm>
#include <filesystem>
#include <string>

#include "mixacm/data.hpp"
#include "mixacm/rng.hpp"

namespace mixacm::acceptance {

/// Desk-scale 4-class datasets with a robust patch feature and a small-
/// amplitude (non-robust) class-mark feature, quantized through the IDX u8
/// path. Two layouts:
///   marked:        one bright 5x5 corner patch per class (wrong corner with
///                  probability flip_p) + exact 2x4 class marks at 14/255 and
///                  faint marks encoding the patch class at 10/255.
///   compositional: class = a PAIR of 3x3 corner patches (single corners are
///                  ambiguous between two classes) + the same class marks.
struct DeskDataParams {
  int size = 14;
  double bg = 0.1;
  double amp = 0.28;
  double noise = 0.10;
  double code_amp = 14.0 / 255.0;
  double eff_amp = 10.0 / 255.0;
  double flip_p = 0.30;
  bool compositional = false;
};

inline Dataset make_desk_dataset(int per_class, std::uint64_t seed, const DeskDataParams& p) {
  const int classes = 4;
  const int s = p.size;
  Rng rng(seed);
  Dataset ds;
  ds.classes = classes;
  ds.name = p.compositional ? "desk_pairs" : "desk_marked";
  const std::size_t n = (std::size_t)classes * per_class;
  ds.images = Tensor(Shape{n, 1, (std::size_t)s, (std::size_t)s}, p.bg);
  ds.labels.resize(n);

  const int patch = p.compositional ? 3 : 5;
  const int far = s - patch - 1;
  const std::pair<int, int> corner[4] = {{1, 1}, {1, far}, {far, 1}, {far, far}};
  const int pair_of[4][2] = {{0, 1}, {2, 3}, {0, 2}, {1, 3}};

  auto img = ds.images.data();
  const std::size_t hw = (std::size_t)s * s;
  const int band_a = s / 2 - 4, band_b = s / 2 + 2, band_e = s / 2 - 1;

  for (std::size_t i = 0; i < n; ++i) {
    const int y = (int)(i / (std::size_t)per_class);
    ds.labels[i] = y;
    double* px = img.data() + i * hw;

    // effective (patch) class: wrong with probability flip_p
    int eff = y;
    const double u = rng.uniform();
    const int wrong = (y + 1 + (int)rng.uniform_int(3)) % classes;
    if (u < p.flip_p) eff = wrong;

    auto stamp = [&](int which) {
      const auto [r0, c0] = corner[which];
      for (int r = r0; r < r0 + patch; ++r)
        for (int c = c0; c < c0 + patch; ++c) px[r * s + c] += p.amp;
    };
    if (p.compositional) {
      stamp(pair_of[eff][0]);
      stamp(pair_of[eff][1]);
    } else {
      stamp(eff);
    }

    for (std::size_t j = 0; j < hw; ++j) px[j] += rng.normal(0.0, p.noise);

    // noise-free mark bands
    for (int r : {band_a, band_a + 1, band_b, band_b + 1})
      for (int c = 0; c < s; ++c) px[r * s + c] = p.bg;
    const int mark_row = y < 2 ? band_a : band_b;
    const int mark_col = (y % 2 == 0) ? 2 : s - 6;
    for (int r = mark_row; r < mark_row + 2; ++r)
      for (int c = mark_col; c < mark_col + 4; ++c) px[r * s + c] = p.bg + p.code_amp;

    if (!p.compositional) {
      for (int c = 0; c < s; ++c) {
        px[band_e * s + c] = p.bg;
        px[(band_e + 1) * s + c] = p.bg;
      }
      for (int r = band_e; r < band_e + 2; ++r)
        for (int c = 1 + 3 * eff; c < 3 + 3 * eff; ++c) px[r * s + c] = p.bg + p.eff_amp;
    }

    for (std::size_t j = 0; j < hw; ++j) px[j] = std::clamp(px[j], 0.0, 1.0);
  }
  return ds;
}

/// Round trip through the IDX binary format (u8 quantization included), the
/// ingestion path the toolkit uses for external data.
inline Dataset through_idx(const Dataset& ds, const std::string& dir, const std::string& tag) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string img = (fs::path(dir) / (tag + "-images.idx")).string();
  const std::string lbl = (fs::path(dir) / (tag + "-labels.idx")).string();
  write_idx(img, lbl, ds);
  Dataset back = load_idx(img, lbl);
  back.split = ds.split;
  return back;
}

}  // namespace mixacm::acceptance
