#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mixacm/rng.hpp"
#include "mixacm/tensor.hpp"

namespace mixacm {

struct Dataset {
  Tensor images;            // [N,C,H,W], values in [0,1]
  std::vector<int> labels;  // in [0, classes)
  int classes = 0;
  std::string name;
  std::string split;

  std::size_t size() const { return labels.size(); }
  /// Contiguous sub-batch [start, start+count).
  std::pair<Tensor, std::vector<int>> slice(std::size_t start, std::size_t count) const;
  /// Gathered batch for arbitrary indices.
  std::pair<Tensor, std::vector<int>> gather(const std::vector<std::size_t>& idx) const;
  void validate() const;
};

Tensor one_hot(const std::vector<int>& labels, int classes);

// ---------------------------------------------------------------------------
// IDX binary ingestion (magic 0x00000803 images / 0x00000801 labels,
// big-endian dimension fields, u8 pixels scaled by 1/255).
// ---------------------------------------------------------------------------
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& data);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Per-class positioned bright patch plus Gaussian noise, clamped to [0,1].
Dataset synth_blobs(int classes, int per_class, int image_size, double noise_sigma,
                    std::uint64_t seed);

/// Records the generation parameters next to a synthetic dataset.
void write_synth_manifest(const std::string& path, int classes, int per_class,
                          int image_size, double noise_sigma, std::uint64_t seed);

/// Stratified subsample without replacement; per-class count is
/// round(fraction * class_count).
Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Batching and standard augmentation
// ---------------------------------------------------------------------------

/// Full reshuffle per epoch from the seeded generator; the final partial
/// batch is emitted.
class Batcher {
 public:
  Batcher(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed);

  /// Index groups for the next epoch.
  std::vector<std::vector<std::size_t>> epoch();
  std::size_t batches_per_epoch() const;

 private:
  const Dataset& data_;
  std::size_t batch_size_;
  Rng rng_;
};

/// Random crop after 4-pixel zero padding, then horizontal flip with
/// probability 1/2; identity when disabled. Shape and pixel range preserved.
Tensor random_crop_flip(const Tensor& batch, int pad, bool enabled, Rng& rng);

}  // namespace mixacm
