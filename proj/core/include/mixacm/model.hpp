#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mixacm/tensor.hpp"

namespace mixacm {

/// One residual-style group of convolutions. The first conv applies `stride`
/// (spatial downsampling); all convs map to `channels` outputs.
struct BlockSpec {
  int conv_layers = 2;
  int channels = 16;
  int kernel_size = 3;
  int stride = 1;
  bool use_bias = false;
  bool use_residual = false;
};

struct ModelSpec {
  int in_channels = 1;
  int classes = 10;
  std::vector<BlockSpec> blocks;

  bool bias_free() const;
  std::string describe() const;
};

struct ForwardResult {
  Tensor logits;                // [N, K]
  std::vector<Tensor> taps;     // stem output + one per block, post-activation
};

/// Block-structured conv/ReLU classifier with tappable per-block activations.
/// The stem conv shares channels/kernel/bias with the first block; the head
/// is global average pooling followed by a linear classifier.
class BlockCnn {
 public:
  BlockCnn(ModelSpec spec, std::uint64_t seed);

  ForwardResult forward(const Tensor& batch) const;

  const ModelSpec& spec() const { return spec_; }
  int classes() const { return spec_.classes; }
  std::size_t tap_count() const { return spec_.blocks.size() + 1; }

  /// Named parameter registry in construction order.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;

  void freeze();
  bool frozen() const { return frozen_; }
  void zero_grads() const;

  /// Replaces parameter values (checkpoint load). Names and shapes must match.
  void load_parameters(const std::vector<std::pair<std::string, Tensor>>& named);

 private:
  Tensor param(const std::string& name) const;

  ModelSpec spec_;
  std::vector<std::pair<std::string, Tensor>> params_;
  bool frozen_ = false;
};

BlockCnn make_teacher(std::vector<BlockSpec> blocks, int classes, int in_channels,
                      std::uint64_t seed);
BlockCnn make_student(std::vector<BlockSpec> blocks, int classes, int in_channels,
                      std::uint64_t seed);

/// Desk-scale defaults: teacher channels (32,64,128), student (16,32,64),
/// 2 convs per block, stride-2 entry into blocks 2 and 3.
std::vector<BlockSpec> default_teacher_blocks();
std::vector<BlockSpec> default_student_blocks();

}  // namespace mixacm
