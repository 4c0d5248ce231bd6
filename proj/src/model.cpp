#include "ecg/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ecg/rng.hpp"

namespace ecg::model {

namespace {

// C = A (m x k) * B (k x n), accumulating into C.
void matmul_acc(const double* a, const double* b, double* c, long m, long k, long n) {
  for (long i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (long p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// im2col: x (C,H,W) slice -> col (C*K*K, Ho*Wo)
void im2col(const double* x, long C, long H, long W, long K, long stride, long pad,
            long Ho, long Wo, double* col) {
  for (long c = 0; c < C; ++c) {
    for (long ki = 0; ki < K; ++ki) {
      for (long kj = 0; kj < K; ++kj) {
        double* dst = col + ((c * K + ki) * K + kj) * (Ho * Wo);
        for (long oi = 0; oi < Ho; ++oi) {
          const long ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= H) {
            std::fill(dst + oi * Wo, dst + (oi + 1) * Wo, 0.0);
            continue;
          }
          const double* src = x + (c * H + ii) * W;
          for (long oj = 0; oj < Wo; ++oj) {
            const long jj = oj * stride - pad + kj;
            dst[oi * Wo + oj] = (jj >= 0 && jj < W) ? src[jj] : 0.0;
          }
        }
      }
    }
  }
}

// col2im: scatter-add col (C*K*K, Ho*Wo) back onto x-shaped (C,H,W) buffer
void col2im_acc(const double* col, long C, long H, long W, long K, long stride, long pad,
                long Ho, long Wo, double* x) {
  for (long c = 0; c < C; ++c) {
    for (long ki = 0; ki < K; ++ki) {
      for (long kj = 0; kj < K; ++kj) {
        const double* src = col + ((c * K + ki) * K + kj) * (Ho * Wo);
        for (long oi = 0; oi < Ho; ++oi) {
          const long ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= H) continue;
          double* dst = x + (c * H + ii) * W;
          for (long oj = 0; oj < Wo; ++oj) {
            const long jj = oj * stride - pad + kj;
            if (jj >= 0 && jj < W) dst[jj] += src[oi * Wo + oj];
          }
        }
      }
    }
  }
}

void check_conv_shapes(const Tensor& x, const Tensor& w, const Tensor* b, int stride) {
  if (x.shape.size() != 4 || w.shape.size() != 4)
    throw ShapeMismatch("conv2d expects NCHW input and OCKK kernels");
  if (x.dim(1) != w.dim(1))
    throw ShapeMismatch("conv2d channel mismatch: input C=" + std::to_string(x.dim(1)) +
                        ", kernel C=" + std::to_string(w.dim(1)));
  if (w.dim(2) != w.dim(3)) throw ShapeMismatch("conv2d kernels must be square");
  if (b && (b->shape.size() != 1 || b->dim(0) != w.dim(0)))
    throw ShapeMismatch("conv2d bias must have one entry per output channel");
  if (stride < 1) throw ShapeMismatch("conv2d stride must be >= 1");
}

}  // namespace

bool Tensor::finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  check_conv_shapes(x, w, &b, stride);
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long O = w.dim(0), K = w.dim(2);
  const long Ho = (H + 2L * pad - K) / stride + 1;
  const long Wo = (W + 2L * pad - K) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ShapeMismatch("conv2d output would be empty");

  Tensor y({N, O, Ho, Wo});
  std::vector<double> col(static_cast<std::size_t>(C * K * K) * (Ho * Wo));
  for (long n = 0; n < N; ++n) {
    im2col(x.data.data() + n * C * H * W, C, H, W, K, stride, pad, Ho, Wo, col.data());
    double* out = y.data.data() + n * O * Ho * Wo;
    matmul_acc(w.data.data(), col.data(), out, O, C * K * K, Ho * Wo);
    for (long o = 0; o < O; ++o) {
      const double bias = b.data[o];
      double* row = out + o * Ho * Wo;
      for (long i = 0; i < Ho * Wo; ++i) row[i] += bias;
    }
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, int stride, int pad,
                            const Tensor& dy) {
  check_conv_shapes(x, w, nullptr, stride);
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long O = w.dim(0), K = w.dim(2);
  const long Ho = dy.dim(2), Wo = dy.dim(3);
  if (dy.dim(0) != N || dy.dim(1) != O)
    throw ShapeMismatch("conv2d_backward: dy shape does not match forward output");

  Conv2dGrads g;
  g.dx = Tensor(x.shape);
  g.dw = Tensor(w.shape);
  g.db = Tensor({O});

  const long ckk = C * K * K;
  std::vector<double> col(static_cast<std::size_t>(ckk) * (Ho * Wo));
  std::vector<double> dcol(col.size());
  std::vector<double> wt(static_cast<std::size_t>(ckk) * O);
  // w transposed once: (CKK, O)
  for (long o = 0; o < O; ++o)
    for (long p = 0; p < ckk; ++p) wt[p * O + o] = w.data[o * ckk + p];

  for (long n = 0; n < N; ++n) {
    const double* dyn = dy.data.data() + n * O * Ho * Wo;
    im2col(x.data.data() + n * C * H * W, C, H, W, K, stride, pad, Ho, Wo, col.data());

    // db
    for (long o = 0; o < O; ++o) {
      double s = 0.0;
      const double* row = dyn + o * Ho * Wo;
      for (long i = 0; i < Ho * Wo; ++i) s += row[i];
      g.db.data[o] += s;
    }
    // dw += dy (O, HoWo) * col^T (HoWo, CKK): accumulate via dy rows over col rows
    for (long o = 0; o < O; ++o) {
      const double* dyrow = dyn + o * Ho * Wo;
      double* dwrow = g.dw.data.data() + o * ckk;
      for (long p = 0; p < ckk; ++p) {
        const double* crow = col.data() + p * Ho * Wo;
        double s = 0.0;
        for (long i = 0; i < Ho * Wo; ++i) s += dyrow[i] * crow[i];
        dwrow[p] += s;
      }
    }
    // dcol = w^T (CKK, O) * dy (O, HoWo)
    std::fill(dcol.begin(), dcol.end(), 0.0);
    matmul_acc(wt.data(), dyn, dcol.data(), ckk, O, Ho * Wo);
    col2im_acc(dcol.data(), C, H, W, K, stride, pad, Ho, Wo,
               g.dx.data.data() + n * C * H * W);
  }
  return g;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.shape.size() != 4) throw ShapeMismatch("global_avg_pool expects NCHW input");
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y({N, C});
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c) {
      const double* plane = x.data.data() + (n * C + c) * H * W;
      double s = 0.0;
      for (long i = 0; i < H * W; ++i) s += plane[i];
      y.data[n * C + c] = s / static_cast<double>(H * W);
    }
  return y;
}

std::pair<double, Tensor> softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape.size() != 2) throw ShapeMismatch("softmax_xent expects B x classes logits");
  const long B = logits.dim(0), C = logits.dim(1);
  if (static_cast<long>(labels.size()) != B)
    throw ShapeMismatch("softmax_xent: one label per row required");

  Tensor grad(logits.shape);
  double loss = 0.0;
  for (long i = 0; i < B; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= C) throw ShapeMismatch("label out of range");
    const double* row = logits.data.data() + i * C;
    double mx = row[0];
    for (long c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (long c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
    loss += -(row[label] - mx - std::log(denom));
    double* grow = grad.data.data() + i * C;
    for (long c = 0; c < C; ++c) {
      const double p = std::exp(row[c] - mx) / denom;
      grow[c] = (p - (c == label ? 1.0 : 0.0)) / static_cast<double>(B);
    }
  }
  return {loss / static_cast<double>(B), std::move(grad)};
}

namespace {

double kaiming_bound(long fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad,
              Rng& rng)
      : name_(std::move(name)),
        stride_(stride),
        pad_(pad),
        w_(Tensor({out_ch, in_ch, kernel, kernel})),
        b_(Tensor({static_cast<long>(out_ch)})),
        dw_(w_.shape),
        db_(b_.shape) {
    const double bound = kaiming_bound(static_cast<long>(in_ch) * kernel * kernel);
    for (auto& v : w_.data) v = rng.uniform(-bound, bound);
  }

  Tensor forward(const Tensor& x, bool cache) override {
    if (cache) x_ = x;
    has_cache_ = cache;
    return conv2d_forward(x, w_, b_, stride_, pad_);
  }

  Tensor backward(const Tensor& dy) override {
    if (!has_cache_) throw GraphNotEvaluated(name_ + ": backward before cached forward");
    auto g = conv2d_backward(x_, w_, stride_, pad_, dy);
    for (long i = 0; i < dw_.numel(); ++i) dw_.data[i] += g.dw.data[i];
    for (long i = 0; i < db_.numel(); ++i) db_.data[i] += g.db.data[i];
    return std::move(g.dx);
  }

  void collect_params(std::vector<NamedParam>& out, const std::string& prefix) override {
    out.push_back({prefix + name_ + ".w", &w_, &dw_});
    out.push_back({prefix + name_ + ".b", &b_, &db_});
  }

 private:
  std::string name_;
  int stride_, pad_;
  Tensor w_, b_, dw_, db_;
  Tensor x_;
  bool has_cache_ = false;
};

class ReluLayer : public Layer {
 public:
  Tensor forward(const Tensor& x, bool cache) override {
    Tensor y = x;
    for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
    if (cache) mask_ = x;
    has_cache_ = cache;
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    if (!has_cache_) throw GraphNotEvaluated("relu: backward before cached forward");
    Tensor dx = dy;
    for (long i = 0; i < dx.numel(); ++i)
      if (mask_.data[i] <= 0.0) dx.data[i] = 0.0;
    return dx;
  }

 private:
  Tensor mask_;
  bool has_cache_ = false;
};

class MaxPoolLayer : public Layer {
 public:
  MaxPoolLayer(int kernel, int stride, int pad) : k_(kernel), stride_(stride), pad_(pad) {}

  Tensor forward(const Tensor& x, bool cache) override {
    const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long Ho = (H + 2L * pad_ - k_) / stride_ + 1;
    const long Wo = (W + 2L * pad_ - k_) / stride_ + 1;
    Tensor y({N, C, Ho, Wo});
    argmax_.assign(y.data.size(), 0);
    in_shape_ = x.shape;
    for (long n = 0; n < N; ++n) {
      for (long c = 0; c < C; ++c) {
        const double* plane = x.data.data() + (n * C + c) * H * W;
        for (long oi = 0; oi < Ho; ++oi) {
          for (long oj = 0; oj < Wo; ++oj) {
            double best = -std::numeric_limits<double>::infinity();
            long best_idx = -1;
            for (long ki = 0; ki < k_; ++ki) {
              const long ii = oi * stride_ - pad_ + ki;
              if (ii < 0 || ii >= H) continue;
              for (long kj = 0; kj < k_; ++kj) {
                const long jj = oj * stride_ - pad_ + kj;
                if (jj < 0 || jj >= W) continue;
                const double v = plane[ii * W + jj];
                if (v > best) {
                  best = v;
                  best_idx = ii * W + jj;
                }
              }
            }
            const long oidx = ((n * C + c) * Ho + oi) * Wo + oj;
            y.data[oidx] = best;
            argmax_[oidx] = (n * C + c) * H * W + best_idx;
          }
        }
      }
    }
    has_cache_ = cache;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (!has_cache_) throw GraphNotEvaluated("maxpool: backward before cached forward");
    Tensor dx(in_shape_);
    for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[argmax_[i]] += dy.data[i];
    return dx;
  }

 private:
  int k_, stride_, pad_;
  std::vector<long> argmax_;
  std::vector<long> in_shape_;
  bool has_cache_ = false;
};

class GlobalAvgPoolLayer : public Layer {
 public:
  Tensor forward(const Tensor& x, bool cache) override {
    Tensor y = global_avg_pool(x);
    in_shape_ = x.shape;
    has_cache_ = cache;
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    if (!has_cache_) throw GraphNotEvaluated("gap: backward before cached forward");
    const long N = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
    Tensor dx(in_shape_);
    for (long n = 0; n < N; ++n)
      for (long c = 0; c < C; ++c) {
        const double g = dy.data[n * C + c] / static_cast<double>(H * W);
        double* plane = dx.data.data() + (n * C + c) * H * W;
        for (long i = 0; i < H * W; ++i) plane[i] = g;
      }
    return dx;
  }

 private:
  std::vector<long> in_shape_;
  bool has_cache_ = false;
};

class LinearLayer : public Layer {
 public:
  LinearLayer(std::string name, int in_dim, int out_dim, Rng& rng)
      : name_(std::move(name)),
        w_(Tensor({out_dim, in_dim})),
        b_(Tensor({static_cast<long>(out_dim)})),
        dw_(w_.shape),
        db_(b_.shape) {
    const double bound = kaiming_bound(in_dim);
    for (auto& v : w_.data) v = rng.uniform(-bound, bound);
  }

  Tensor forward(const Tensor& x, bool cache) override {
    const long B = x.dim(0), In = x.dim(1), Out = w_.dim(0);
    if (In != w_.dim(1)) throw ShapeMismatch(name_ + ": input width mismatch");
    Tensor y({B, Out});
    for (long i = 0; i < B; ++i)
      for (long o = 0; o < Out; ++o) {
        const double* xr = x.data.data() + i * In;
        const double* wr = w_.data.data() + o * In;
        double s = b_.data[o];
        for (long p = 0; p < In; ++p) s += xr[p] * wr[p];
        y.data[i * Out + o] = s;
      }
    if (cache) x_ = x;
    has_cache_ = cache;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (!has_cache_) throw GraphNotEvaluated(name_ + ": backward before cached forward");
    const long B = x_.dim(0), In = w_.dim(1), Out = w_.dim(0);
    Tensor dx({B, In});
    for (long i = 0; i < B; ++i) {
      const double* dyr = dy.data.data() + i * Out;
      const double* xr = x_.data.data() + i * In;
      for (long o = 0; o < Out; ++o) {
        const double g = dyr[o];
        db_.data[o] += g;
        double* dwr = dw_.data.data() + o * In;
        for (long p = 0; p < In; ++p) dwr[p] += g * xr[p];
      }
      double* dxr = dx.data.data() + i * In;
      for (long o = 0; o < Out; ++o) {
        const double g = dyr[o];
        const double* wr = w_.data.data() + o * In;
        for (long p = 0; p < In; ++p) dxr[p] += g * wr[p];
      }
    }
    return dx;
  }

  void collect_params(std::vector<NamedParam>& out, const std::string& prefix) override {
    out.push_back({prefix + name_ + ".w", &w_, &dw_});
    out.push_back({prefix + name_ + ".b", &b_, &db_});
  }

 private:
  std::string name_;
  Tensor w_, b_, dw_, db_;
  Tensor x_;
  bool has_cache_ = false;
};

class ResidualBlock : public Layer {
 public:
  ResidualBlock(std::string name, int in_ch, int out_ch, int stride, Rng& rng)
      : name_(std::move(name)),
        conv1_("conv1", in_ch, out_ch, 3, stride, 1, rng),
        conv2_("conv2", out_ch, out_ch, 3, 1, 1, rng) {
    if (stride != 1 || in_ch != out_ch)
      proj_ = std::make_unique<Conv2dLayer>("proj", in_ch, out_ch, 1, stride, 0, rng);
  }

  Tensor forward(const Tensor& x, bool cache) override {
    Tensor main = relu1_.forward(conv1_.forward(x, cache), cache);
    main = conv2_.forward(main, cache);
    const Tensor& shortcut = proj_ ? (proj_out_ = proj_->forward(x, cache)) : x;
    if (!main.same_shape(shortcut)) throw ShapeMismatch(name_ + ": shortcut shape mismatch");
    Tensor sum = std::move(main);
    for (long i = 0; i < sum.numel(); ++i) sum.data[i] += shortcut.data[i];
    return relu_out_.forward(sum, cache);
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dsum = relu_out_.backward(dy);
    Tensor dmain = conv2_.backward(dsum);
    dmain = conv1_.backward(relu1_.backward(dmain));
    Tensor dshort = proj_ ? proj_->backward(dsum) : std::move(dsum);
    for (long i = 0; i < dmain.numel(); ++i) dmain.data[i] += dshort.data[i];
    return dmain;
  }

  void collect_params(std::vector<NamedParam>& out, const std::string& prefix) override {
    const std::string p = prefix + name_ + ".";
    conv1_.collect_params(out, p);
    conv2_.collect_params(out, p);
    if (proj_) proj_->collect_params(out, p);
  }

 private:
  std::string name_;
  Conv2dLayer conv1_;
  Conv2dLayer conv2_;
  ReluLayer relu1_, relu_out_;
  std::unique_ptr<Conv2dLayer> proj_;
  Tensor proj_out_;
};

}  // namespace

ModelSpec ModelSpec::by_name(const std::string& name) {
  if (name == "compact") return compact();
  if (name == "tiny") return tiny();
  if (name == "resnet18") return resnet18_shape();
  throw ConfigError("unknown model spec '" + name + "' (compact, tiny, resnet18)");
}

Net::Net(const ModelSpec& spec, std::uint64_t init_seed) : spec_(spec) {
  Rng rng(derive_seed(init_seed, 0x6e37ULL));
  layers_.push_back(std::make_unique<Conv2dLayer>("stem.conv", spec.in_channels,
                                                  spec.stem_channels, 7, 2, 3, rng));
  layers_.push_back(std::make_unique<ReluLayer>());
  layers_.push_back(std::make_unique<MaxPoolLayer>(3, 2, 1));

  int ch = spec.stem_channels;
  for (std::size_t s = 0; s < spec.stage_channels.size(); ++s) {
    for (int b = 0; b < spec.blocks_per_stage; ++b) {
      const int out_ch = spec.stage_channels[s];
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      std::ostringstream name;
      name << "stage" << s << ".block" << b;
      layers_.push_back(std::make_unique<ResidualBlock>(name.str(), ch, out_ch, stride, rng));
      ch = out_ch;
    }
  }
  layers_.push_back(std::make_unique<GlobalAvgPoolLayer>());
  layers_.push_back(std::make_unique<LinearLayer>("head.fc", ch, spec.n_classes, rng));
}

Tensor Net::forward(const Tensor& x, bool cache) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, cache);
  return h;
}

Tensor Net::backward(const Tensor& dlogits) {
  Tensor g = dlogits;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Net::zero_grads() {
  for (auto& p : params())
    std::fill(p.grad->data.begin(), p.grad->data.end(), 0.0);
}

std::vector<NamedParam> Net::params() {
  std::vector<NamedParam> out;
  for (auto& layer : layers_) layer->collect_params(out, "");
  return out;
}

long Net::param_count() {
  long n = 0;
  for (auto& p : params()) n += p.value->numel();
  return n;
}

void adam_step(std::vector<NamedParam>& params, AdamState& state, const AdamConfig& cfg) {
  if (state.first_moment.empty()) {
    for (auto& p : params) {
      state.first_moment.emplace_back(p.value->shape);
      state.second_moment.emplace_back(p.value->shape);
    }
  }
  if (state.first_moment.size() != params.size())
    throw ShapeMismatch("adam state does not mirror the parameter list");

  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& value = *params[i].value;
    const Tensor& grad = *params[i].grad;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (!value.same_shape(grad) || !value.same_shape(m))
      throw ShapeMismatch("adam parameter/gradient shape mismatch");
    for (long j = 0; j < value.numel(); ++j) {
      const double g = grad.data[j];
      m.data[j] = cfg.beta1 * m.data[j] + (1.0 - cfg.beta1) * g;
      v.data[j] = cfg.beta2 * v.data[j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m.data[j] / bc1;
      const double vhat = v.data[j] / bc2;
      value.data[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

namespace {

Tensor batch_tensor(const ImageSet& set, const std::vector<std::size_t>& order,
                    std::size_t begin, std::size_t end) {
  const long B = static_cast<long>(end - begin);
  const long H = set.height, W = set.width;
  Tensor x({B, 1, H, W});
  for (long i = 0; i < B; ++i) {
    const auto& img = set.images[order[begin + static_cast<std::size_t>(i)]];
    double* dst = x.data.data() + i * H * W;
    for (long p = 0; p < H * W; ++p) dst[p] = static_cast<double>(img[p]);
  }
  return x;
}

}  // namespace

std::vector<EpochLog> train(Net& net, const ImageSet& train_set, const TrainConfig& cfg) {
  if (train_set.images.empty()) throw EmptyDataset("training set is empty");
  if (train_set.images.size() != train_set.labels.size())
    throw EmptyDataset("one label per training image required");

  std::vector<EpochLog> log;
  if (cfg.max_epochs <= 0) return log;

  auto params = net.params();
  AdamState adam;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;

  Rng shuffle_rng(derive_seed(cfg.seed, 0x7a17ULL));
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    long correct = 0;
    long seen = 0;

    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      Tensor x = batch_tensor(train_set, order, begin, end);
      std::vector<int> labels;
      labels.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i)
        labels.push_back(train_set.labels[order[i]]);

      net.zero_grads();
      Tensor logits = net.forward(x, /*cache=*/true);
      auto [loss, dlogits] = softmax_xent(logits, labels);
      net.backward(dlogits);
      adam_step(params, adam, adam_cfg);

      if (!std::isfinite(loss) || !logits.finite())
        throw StageFailure("non-finite loss or activations during training");
      for (const auto& p : params)
        if (!p.value->finite()) throw StageFailure("non-finite parameter during training");

      const long B = logits.dim(0), C = logits.dim(1);
      for (long i = 0; i < B; ++i) {
        const double* row = logits.data.data() + i * C;
        int best = 0;
        for (long c = 1; c < C; ++c)
          if (row[c] > row[best]) best = static_cast<int>(c);
        if (best == labels[static_cast<std::size_t>(i)]) ++correct;
      }
      loss_sum += loss * static_cast<double>(end - begin);
      seen += static_cast<long>(end - begin);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(seen);
    entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    log.push_back(entry);

    if (cfg.stop_at_full_accuracy && entry.train_accuracy >= 1.0) break;
    if (cfg.plateau_window > 0 &&
        static_cast<int>(log.size()) > cfg.plateau_window) {
      const double prev = log[log.size() - 1 - cfg.plateau_window].mean_loss;
      const double now = entry.mean_loss;
      if (prev > 0.0 && (prev - now) / prev < cfg.plateau_rel_improvement) break;
    }
  }
  return log;
}

std::vector<Prediction> predict(Net& net, const ImageSet& images, int batch_size) {
  std::vector<Prediction> out;
  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t begin = 0; begin < order.size();
       begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    Tensor x = batch_tensor(images, order, begin, end);
    Tensor logits = net.forward(x, /*cache=*/false);
    const long B = logits.dim(0), C = logits.dim(1);
    for (long i = 0; i < B; ++i) {
      const double* row = logits.data.data() + i * C;
      Prediction p;
      double mx = row[0];
      for (long c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      double denom = 0.0;
      for (long c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
      int best = 0;
      for (long c = 0; c < C; ++c) {
        const double prob = std::exp(row[c] - mx) / denom;
        if (c < 4) p.probs[static_cast<std::size_t>(c)] = prob;
        if (row[c] > row[best]) best = static_cast<int>(c);
      }
      p.cls = best;
      out.push_back(p);
    }
  }
  return out;
}

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw BadMagic("truncated weight container");
  return v;
}

}  // namespace

void save_weights(Net& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path.string());
  out.write("CPW1", 4);
  auto params = net.params();
  write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(out, static_cast<std::uint32_t>(p.value->shape.size()));
    for (long d : p.value->shape) write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(p.value->data.data()),
              static_cast<std::streamsize>(p.value->data.size() * sizeof(double)));
  }
  if (!out) throw IoFailure("short write to " + path.string());
}

void load_weights(Net& net, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CPW1", 4) != 0)
    throw BadMagic(path.string() + " is not a CPW1 weight container");

  auto params = net.params();
  const std::uint32_t count = read_u32(in);
  if (count != params.size())
    throw ShapeMismatch("weight container holds " + std::to_string(count) + " tensors, model has " +
                        std::to_string(params.size()));

  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = read_u32(in);
    if (name_len > 4096) throw BadMagic("implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw BadMagic("truncated weight container in tensor name");
    const std::uint32_t rank = read_u32(in);
    if (rank > 8) throw BadMagic("implausible tensor rank");
    std::vector<long> dims(rank);
    for (auto& d : dims) d = static_cast<long>(read_u32(in));
    if (Tensor::numel_of(dims) > (1L << 30)) throw BadMagic("implausible tensor size");
    std::vector<double> payload(static_cast<std::size_t>(Tensor::numel_of(dims)));
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!in) throw BadMagic("truncated weight container at tensor '" + name + "'");

    auto it = std::find_if(params.begin(), params.end(),
                           [&](const NamedParam& p) { return p.name == name; });
    if (it == params.end()) throw ShapeMismatch("model has no tensor named '" + name + "'");
    Tensor& dst = *it->value;

    if (dims == dst.shape) {
      dst.data = std::move(payload);
      continue;
    }
    // imported 3-channel stem collapsing onto a 1-channel model
    if (name == "stem.conv.w" && dims.size() == 4 && dst.shape.size() == 4 &&
        dims[0] == dst.shape[0] && dims[1] == 3 && dst.shape[1] == 1 &&
        dims[2] == dst.shape[2] && dims[3] == dst.shape[3]) {
      const long O = dims[0], K = dims[2];
      std::fill(dst.data.begin(), dst.data.end(), 0.0);
      for (long o = 0; o < O; ++o)
        for (long c = 0; c < 3; ++c)
          for (long i = 0; i < K * K; ++i)
            dst.data[o * K * K + i] += payload[(o * 3 + c) * K * K + i];
      continue;
    }
    throw ShapeMismatch("shape mismatch for tensor '" + name + "'");
  }
}

std::string loss_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,mean_loss,train_accuracy\n";
  out.precision(17);
  for (const auto& e : log)
    out << e.epoch << ',' << e.mean_loss << ',' << e.train_accuracy << '\n';
  return out.str();
}

}  // namespace ecg::model
