#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ecg/errors.hpp"

namespace ecg::model {

struct Tensor {
  std::vector<long> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<long> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  }

  static long numel_of(const std::vector<long>& s) {
    long n = 1;
    for (long d : s) n *= d;
    return n;
  }
  long numel() const { return static_cast<long>(data.size()); }
  long dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool finite() const;
};

struct NamedParam {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

// Cross-correlation with zero padding, NCHW input, OCKK kernels.
// out spatial = floor((in + 2*pad - k) / stride) + 1.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

struct Conv2dGrads {
  Tensor dx, dw, db;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, int stride, int pad,
                            const Tensor& dy);

// Numerically stabilized softmax cross-entropy over B x n_classes logits.
// loss is the batch mean of -log p[label]; grad is (p - onehot) / B.
std::pair<double, Tensor> softmax_xent(const Tensor& logits, const std::vector<int>& labels);

// (N,C,H,W) -> (N,C) channel means; the classifier head applies this before
// its fully connected layer, which makes the logits independent of the input
// spatial size whenever the channel means agree.
Tensor global_avg_pool(const Tensor& x);

class Layer {
 public:
  virtual ~Layer() = default;
  // cache=true stores what backward needs; backward without a cached forward
  // throws GraphNotEvaluated.
  virtual Tensor forward(const Tensor& x, bool cache) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect_params(std::vector<NamedParam>& out, const std::string& prefix) {}
};

struct ModelSpec {
  int in_channels = 1;
  int stem_channels = 8;
  std::vector<int> stage_channels = {8, 16};
  int blocks_per_stage = 1;
  int n_classes = 4;

  static ModelSpec compact() { return {}; }
  static ModelSpec tiny() { return {1, 4, {4, 8}, 1, 4}; }
  // full-width shape family, for importing externally trained weights
  static ModelSpec resnet18_shape() { return {1, 64, {64, 128, 256, 512}, 2, 4}; }
  static ModelSpec by_name(const std::string& name);
};

// Residual classifier: 7x7/2 stem conv + 3x3/2 max pool, stages of plain
// residual blocks (3x3 conv, ReLU, 3x3 conv + shortcut; stride-2 1x1
// projection between stages), global average pool, fully connected head.
class Net {
 public:
  explicit Net(const ModelSpec& spec, std::uint64_t init_seed = 0);

  const ModelSpec& spec() const { return spec_; }

  Tensor forward(const Tensor& x, bool cache = false);
  // Gradients for every parameter and the input, from d(loss)/d(logits).
  Tensor backward(const Tensor& dlogits);
  void zero_grads();

  std::vector<NamedParam> params();
  long param_count();

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step_count = 0;
};

// Standard bias-corrected Adam update over the parameter list. Initializes
// the state's moments on first use; shapes must mirror the parameters.
void adam_step(std::vector<NamedParam>& params, AdamState& state, const AdamConfig& cfg);

struct ImageSet {
  int height = 224;
  int width = 224;
  std::vector<std::vector<float>> images;  // row-major pixels, one per sample
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

struct TrainConfig {
  int batch_size = 500;
  int max_epochs = 20;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  double plateau_rel_improvement = 1e-4;  // early stop when below, over window
  int plateau_window = 3;
  bool stop_at_full_accuracy = false;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

// Seeded-shuffle minibatch training with Adam. Single-threaded by contract;
// every batch asserts finite loss and parameters. Throws EmptyDataset.
std::vector<EpochLog> train(Net& net, const ImageSet& train_set, const TrainConfig& cfg);

struct Prediction {
  int cls = 0;
  std::array<double, 4> probs{};
};

// Argmax of the logits; ties break toward the lower class index.
std::vector<Prediction> predict(Net& net, const ImageSet& images, int batch_size = 64);

// Weight container: magic "CPW1", u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, u32 dims..., float64 LE data.
void save_weights(Net& net, const std::filesystem::path& path);
// Loads by name; shapes must match, except a 3-channel first conv collapsing
// onto a 1-channel stem by summing kernel channels.
void load_weights(Net& net, const std::filesystem::path& path);

std::string loss_log_csv(const std::vector<EpochLog>& log);

}  // namespace ecg::model
