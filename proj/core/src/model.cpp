#include "mixacm/model.hpp"

#include <cmath>
#include <sstream>

#include "mixacm/error.hpp"
#include "mixacm/ops.hpp"
#include "mixacm/rng.hpp"

namespace mixacm {

bool ModelSpec::bias_free() const {
  for (const auto& b : blocks)
    if (b.use_bias) return false;
  return true;
}

std::string ModelSpec::describe() const {
  std::ostringstream os;
  os << "in=" << in_channels << " classes=" << classes << " blocks=";
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (i) os << ",";
    os << b.channels << "x" << b.conv_layers << "k" << b.kernel_size << "s" << b.stride
       << (b.use_bias ? "b" : "") << (b.use_residual ? "r" : "");
  }
  return os.str();
}

namespace {

void validate_spec(const ModelSpec& spec) {
  if (spec.classes < 2) throw ConfigError("model: need at least 2 classes");
  if (spec.blocks.empty()) throw ConfigError("model: need at least one block");
  if (spec.in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
  for (const auto& b : spec.blocks) {
    if (b.channels < 1 || b.conv_layers < 1)
      throw ConfigError("model: channels and conv_layers must be >= 1");
    if (b.kernel_size < 1 || b.stride < 1)
      throw ConfigError("model: kernel_size and stride must be >= 1");
  }
}

Tensor kaiming_conv(int c_out, int c_in, int k, Rng& rng) {
  const double stddev = std::sqrt(2.0 / ((double)c_in * k * k));
  Tensor w(Shape{(std::size_t)c_out, (std::size_t)c_in, (std::size_t)k, (std::size_t)k},
           0.0, true);
  for (double& v : w.data()) v = rng.normal(0.0, stddev);
  return w;
}

Tensor kaiming_linear(int in_features, int out_features, Rng& rng) {
  const double stddev = std::sqrt(2.0 / (double)in_features);
  Tensor w(Shape{(std::size_t)in_features, (std::size_t)out_features}, 0.0, true);
  for (double& v : w.data()) v = rng.normal(0.0, stddev);
  return w;
}

}  // namespace

BlockCnn::BlockCnn(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  validate_spec(spec_);
  Rng rng(Rng::derive_seed(seed, 0x1117));
  const BlockSpec& first = spec_.blocks.front();

  params_.emplace_back("stem.w",
                       kaiming_conv(first.channels, spec_.in_channels, first.kernel_size, rng));
  if (first.use_bias)
    params_.emplace_back("stem.b", Tensor(Shape{(std::size_t)first.channels}, 0.0, true));

  int cin = first.channels;
  for (std::size_t bi = 0; bi < spec_.blocks.size(); ++bi) {
    const BlockSpec& b = spec_.blocks[bi];
    int layer_in = cin;
    for (int li = 0; li < b.conv_layers; ++li) {
      const std::string base = "block" + std::to_string(bi + 1) + ".conv" + std::to_string(li + 1);
      params_.emplace_back(base + ".w", kaiming_conv(b.channels, layer_in, b.kernel_size, rng));
      if (b.use_bias)
        params_.emplace_back(base + ".b", Tensor(Shape{(std::size_t)b.channels}, 0.0, true));
      layer_in = b.channels;
    }
    if (b.use_residual && (cin != b.channels || b.stride != 1)) {
      // 1x1 projection for the skip path
      params_.emplace_back("block" + std::to_string(bi + 1) + ".proj.w",
                           kaiming_conv(b.channels, cin, 1, rng));
    }
    cin = b.channels;
  }

  params_.emplace_back("head.w", kaiming_linear(cin, spec_.classes, rng));
  if (first.use_bias)
    params_.emplace_back("head.b", Tensor(Shape{(std::size_t)spec_.classes}, 0.0, true));
}

Tensor BlockCnn::param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw ContractError("BlockCnn: unknown parameter " + name);
}

ForwardResult BlockCnn::forward(const Tensor& batch) const {
  if (batch.rank() != 4)
    throw DimensionError("BlockCnn::forward: expected NCHW batch, got " +
                         shape_str(batch.shape()));
  if (batch.dim(1) != (std::size_t)spec_.in_channels)
    throw DimensionError("BlockCnn::forward: batch has " + std::to_string(batch.dim(1)) +
                         " channels, stem expects " + std::to_string(spec_.in_channels));

  ForwardResult out;
  const BlockSpec& first = spec_.blocks.front();
  const int stem_pad = first.kernel_size / 2;

  Tensor h = conv2d(batch, param("stem.w"), 1, stem_pad);
  if (first.use_bias) h = add_channel_bias(h, param("stem.b"));
  h = relu(h);
  out.taps.push_back(h);

  for (std::size_t bi = 0; bi < spec_.blocks.size(); ++bi) {
    const BlockSpec& b = spec_.blocks[bi];
    const int pad = b.kernel_size / 2;
    Tensor input = h;
    for (int li = 0; li < b.conv_layers; ++li) {
      const std::string base = "block" + std::to_string(bi + 1) + ".conv" + std::to_string(li + 1);
      h = conv2d(h, param(base + ".w"), li == 0 ? b.stride : 1, pad);
      if (b.use_bias) h = add_channel_bias(h, param(base + ".b"));
      // in residual blocks the last activation runs after the skip addition
      const bool last = li + 1 == b.conv_layers;
      if (!last || !b.use_residual) h = relu(h);
    }
    if (b.use_residual) {
      Tensor skip = input;
      if (input.dim(1) != (std::size_t)b.channels || b.stride != 1)
        skip = conv2d(input, param("block" + std::to_string(bi + 1) + ".proj.w"), b.stride, 0);
      h = relu(add(h, skip));
    }
    out.taps.push_back(h);
  }

  Tensor pooled = global_avg_pool(h);
  Tensor logits = matmul(pooled, param("head.w"));
  if (first.use_bias) logits = add_row_bias(logits, param("head.b"));
  out.logits = logits;
  return out;
}

std::vector<Tensor> BlockCnn::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [n, t] : params_) out.push_back(t);
  return out;
}

std::size_t BlockCnn::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void BlockCnn::freeze() {
  for (auto& [n, t] : params_) t.set_requires_grad(false);
  frozen_ = true;
}

void BlockCnn::zero_grads() const {
  for (const auto& [n, t] : params_) const_cast<Tensor&>(t).zero_grad();
}

void BlockCnn::load_parameters(const std::vector<std::pair<std::string, Tensor>>& named) {
  if (named.size() != params_.size())
    throw DataError("BlockCnn::load_parameters: expected " + std::to_string(params_.size()) +
                    " parameters, got " + std::to_string(named.size()));
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, dst] = params_[i];
    const auto& [src_name, src] = named[i];
    if (src_name != name)
      throw DataError("BlockCnn::load_parameters: parameter " + std::to_string(i) +
                      " is " + src_name + ", expected " + name);
    if (src.shape() != dst.shape())
      throw DataError("BlockCnn::load_parameters: shape mismatch for " + name);
    auto d = dst.data();
    auto s = src.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

BlockCnn make_teacher(std::vector<BlockSpec> blocks, int classes, int in_channels,
                      std::uint64_t seed) {
  ModelSpec spec;
  spec.blocks = std::move(blocks);
  spec.classes = classes;
  spec.in_channels = in_channels;
  return BlockCnn(spec, seed);
}

BlockCnn make_student(std::vector<BlockSpec> blocks, int classes, int in_channels,
                      std::uint64_t seed) {
  return make_teacher(std::move(blocks), classes, in_channels, seed);
}

std::vector<BlockSpec> default_teacher_blocks() {
  return {{2, 32, 3, 1, false, false}, {2, 64, 3, 2, false, false}, {2, 128, 3, 2, false, false}};
}

std::vector<BlockSpec> default_student_blocks() {
  return {{2, 16, 3, 1, false, false}, {2, 32, 3, 2, false, false}, {2, 64, 3, 2, false, false}};
}

}  // namespace mixacm
