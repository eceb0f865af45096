#include <cmath>
#include <exception>
#include <stdexcept>

#include "jcnn/errors.hpp"
#include "jcnn/model.hpp"
#include "jcnn/rng.hpp"

namespace jcnn {

const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }
const char* to_string(Pooling p) { return p == Pooling::avg ? "avg" : "max"; }

void NetworkConfig::validate() const {
  if (subbands != kSubbands) throw std::invalid_argument("network: subbands must be 20");
  if (fc1_units < 2) throw std::invalid_argument("network: fc1 units must be at least 2");
  if (grid_x == 0 || grid_y == 0) throw std::invalid_argument("network: empty input grid");
  if (!(bn_tau > 0.0 && bn_tau < 1.0)) throw std::invalid_argument("network: BN tau must lie in (0,1)");
  if (!(bn_xi > 0.0)) throw std::invalid_argument("network: BN xi must be positive");
}

std::vector<std::size_t> NetworkConfig::branch_indices() const {
  std::vector<std::size_t> idx;
  if (use_intra)
    for (std::size_t k = 1; k <= kSubbands; ++k) idx.push_back(k);
  idx.push_back(kBranchCount);
  return idx;
}

std::size_t NetworkConfig::branch_features() const {
  auto pooled = [](std::size_t n) { return (((n + 1) / 2 + 1) / 2 + 1) / 2; };
  return 4 * pooled(grid_x) * pooled(grid_y);
}

namespace {

// FNV-1a, so per-tensor seeds do not depend on std::hash.
std::uint64_t name_tag(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

struct BlockSpec {
  std::size_t k1, k2, in_ch, out_ch;
  bool pool;
};

std::vector<BlockSpec> branch_layout(std::size_t k) {
  if (k == kBranchCount)
    return {{1, 1, kSubbands, 2, false}, {3, 3, 2, 4, true}, {2, 2, 4, 4, true}, {4, 4, 4, 4, true}};
  return {{3, 3, 1, 2, true}, {2, 2, 2, 4, true}, {4, 4, 4, 4, true}};
}

std::string block_prefix(std::size_t branch, std::size_t block) {
  return "b" + std::to_string(branch) + ".conv" + std::to_string(block + 1);
}

std::string bn_prefix(std::size_t branch, std::size_t block) {
  return "b" + std::to_string(branch) + ".bn" + std::to_string(block + 1);
}

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape());
}

}  // namespace

template <class T>
Network<T>::Network(const NetworkConfig& cfg, std::uint64_t seed, const InitConfig& init) : cfg_(cfg) {
  cfg_.validate();
  auto gaussian = [&](const std::string& name, Shape s, double stddev) {
    Rng rng(derive_seed(seed, name_tag(name)));
    Tensor<T> t(std::move(s));
    for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
  };
  auto uniform = [&](const std::string& name, Shape s, double lo, double hi) {
    Rng rng(derive_seed(seed, name_tag(name)));
    Tensor<T> t(std::move(s));
    for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  };

  for (std::size_t k : cfg_.branch_indices()) {
    Branch<T> br;
    br.index = k;
    const auto layout = branch_layout(k);
    for (std::size_t j = 0; j < layout.size(); ++j) {
      const auto& s = layout[j];
      ConvBlock<T> blk;
      blk.k1 = s.k1;
      blk.k2 = s.k2;
      blk.in_ch = s.in_ch;
      blk.out_ch = s.out_ch;
      blk.pool = s.pool;
      const std::string p = block_prefix(k, j);
      blk.conv.kernels = gaussian(p + ".w", {s.k1, s.k2, s.in_ch, s.out_ch}, init.conv_weight_std);
      blk.conv.bias = uniform(p + ".b", {s.out_ch}, init.conv_bias_lo, init.conv_bias_hi);
      blk.conv_grad.kernels = zeros_like(blk.conv.kernels);
      blk.conv_grad.bias = zeros_like(blk.conv.bias);
      blk.bn = BnState<T>::identity(s.out_ch, cfg_.bn_tau, cfg_.bn_xi);
      blk.gamma_grad = Tensor<T>({s.out_ch});
      blk.beta_grad = Tensor<T>({s.out_ch});
      br.blocks.push_back(std::move(blk));
    }
    branches_.push_back(std::move(br));
  }

  auto glorot = [&](const std::string& name, std::size_t in, std::size_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    return uniform(name, {in, out}, -limit, limit);
  };
  const std::size_t concat = cfg_.concat_length();
  fc1_.weights = glorot("fc1.w", concat, cfg_.fc1_units);
  fc1_.bias = Tensor<T>({cfg_.fc1_units});
  fc2_.weights = glorot("fc2.w", cfg_.fc1_units, 2);
  fc2_.bias = Tensor<T>({2});
  fc1_grad_ = {zeros_like(fc1_.weights), zeros_like(fc1_.bias)};
  fc2_grad_ = {zeros_like(fc2_.weights), zeros_like(fc2_.bias)};
}

template <class T>
Tensor<T> Network<T>::activate(const Tensor<T>& x) const {
  return cfg_.activation == Activation::tanh ? tanh_act(x) : relu_act(x);
}

template <class T>
Tensor<T> Network<T>::activate_backward(const Tensor<T>& pre, const Tensor<T>& post, const Tensor<T>& dy) const {
  return cfg_.activation == Activation::tanh ? tanh_backward(post, dy) : relu_backward(pre, dy);
}

template <class T>
Tensor<T> Network<T>::run_branch(std::size_t b, const Tensor<T>& in, Mode mode, std::vector<BlockCache>* cache) {
  Branch<T>& br = branches_[b];
  Tensor<T> x = in;
  if (cache) cache->assign(br.blocks.size(), BlockCache{});
  for (std::size_t j = 0; j < br.blocks.size(); ++j) {
    ConvBlock<T>& blk = br.blocks[j];
    BlockCache* c = cache ? &(*cache)[j] : nullptr;
    Tensor<T> y = conv2d_same(x, blk.conv);
    if (cfg_.use_bn) y = batchnorm(y, blk.bn, mode, c ? &c->bn : nullptr);
    Tensor<T> a = activate(y);
    if (c) {
      c->input = std::move(x);
      c->pre_act = std::move(y);
    }
    if (blk.pool) {
      Tensor<T> pooled = cfg_.pooling == Pooling::avg ? avgpool_3x3_s2(a)
                                                      : maxpool_3x3_s2(a, c ? &c->argmax : nullptr);
      if (c) c->act = std::move(a);
      x = std::move(pooled);
    } else {
      if (c) c->act = a;
      x = std::move(a);
    }
  }
  return x;
}

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& batch_in, Mode mode) {
  const Shape sample = cfg_.sample_shape();
  Tensor<T> batch;
  if (batch_in.rank() == 3 && batch_in.shape() == sample) {
    Shape s = sample;
    s.insert(s.begin(), 1);
    batch = batch_in.reshaped(s);
  } else if (batch_in.rank() == 4 && Shape(batch_in.shape().begin() + 1, batch_in.shape().end()) == sample) {
    batch = batch_in;
  } else {
    throw ShapeError("network input must be " + shape_str(sample) + " or [B," +
                     shape_str(sample).substr(1) + ", got " + shape_str(batch_in.shape()));
  }
  const std::size_t B = batch.dim(0);
  const bool keep = mode == Mode::train;
  cache_ = Cache{};

  const Tensor<T> mag = cfg_.use_abs ? abs_layer(batch) : batch;
  const std::size_t nb = branches_.size();
  std::vector<Tensor<T>> outs(nb);
  if (keep) cache_.blocks.resize(nb);

  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t b = 0; b < nb; ++b) {
    try {
      const Tensor<T> in = slice_branch_input(mag, branches_[b].index);
      outs[b] = run_branch(b, in, mode, keep ? &cache_.blocks[b] : nullptr);
    } catch (...) {
#pragma omp critical(jcnn_branch_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  const std::size_t per = cfg_.branch_features();
  Tensor<T> concat({B, nb * per});
  for (std::size_t b = 0; b < nb; ++b) {
    if (outs[b].size() != B * per) throw ShapeError("branch output size mismatch");
    for (std::size_t s = 0; s < B; ++s)
      std::copy_n(outs[b].data().data() + s * per, per, concat.data().data() + s * nb * per + b * per);
  }

  Tensor<T> h = fc(concat, fc1_);
  Tensor<T> ha = activate(h);
  Tensor<T> logits = fc(ha, fc2_);
  if (keep) {
    cache_.input = std::move(batch);
    cache_.concat = std::move(concat);
    cache_.fc1_pre = std::move(h);
    cache_.fc1_act = std::move(ha);
    cache_.valid = true;
  }
  return logits;
}

template <class T>
Tensor<T> Network<T>::predict_proba(const Tensor<T>& batch) {
  return softmax(forward(batch, Mode::infer));
}

template <class T>
Tensor<T> Network<T>::branch_backward(std::size_t b, const Tensor<T>& dy_in, std::vector<BlockCache>& cache) {
  Branch<T>& br = branches_[b];
  Tensor<T> dy = dy_in;
  for (std::size_t j = br.blocks.size(); j-- > 0;) {
    ConvBlock<T>& blk = br.blocks[j];
    BlockCache& c = cache[j];
    if (blk.pool)
      dy = cfg_.pooling == Pooling::avg ? avgpool_3x3_s2_backward(c.act.shape(), dy)
                                        : maxpool_3x3_s2_backward(c.act.shape(), c.argmax, dy);
    dy = activate_backward(c.pre_act, c.act, dy);
    if (cfg_.use_bn) {
      BnGrads<T> g = batchnorm_backward(c.bn, blk.bn, dy);
      blk.gamma_grad = std::move(g.gamma);
      blk.beta_grad = std::move(g.beta);
      dy = std::move(g.input);
    }
    ConvGrads<T> g = conv2d_same_backward(c.input, blk.conv, dy);
    blk.conv_grad.kernels = std::move(g.kernels);
    blk.conv_grad.bias = std::move(g.bias);
    dy = std::move(g.input);
  }
  return dy;
}

template <class T>
Tensor<T> Network<T>::backward(const Tensor<T>& grad_logits) {
  if (!cache_.valid) throw std::logic_error("backward() without a preceding train-mode forward()");
  const std::size_t B = cache_.input.dim(0);
  if (grad_logits.shape() != Shape{B, 2}) throw ShapeError("backward: gradient must be [B,2]");

  FcGrads<T> g2 = fc_backward(cache_.fc1_act, fc2_, grad_logits);
  fc2_grad_ = {std::move(g2.weights), std::move(g2.bias)};
  Tensor<T> dh = activate_backward(cache_.fc1_pre, cache_.fc1_act, g2.input);
  FcGrads<T> g1 = fc_backward(cache_.concat, fc1_, dh);
  fc1_grad_ = {std::move(g1.weights), std::move(g1.bias)};
  const Tensor<T>& dconcat = g1.input;

  const std::size_t nb = branches_.size();
  const std::size_t per = cfg_.branch_features();
  std::vector<Tensor<T>> dins(nb);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t b = 0; b < nb; ++b) {
    try {
      Shape out_shape = cache_.blocks[b].back().act.shape();  // last block always pools
      out_shape[1] = (out_shape[1] + 1) / 2;
      out_shape[2] = (out_shape[2] + 1) / 2;
      Tensor<T> dy(out_shape);
      for (std::size_t s = 0; s < B; ++s)
        std::copy_n(dconcat.data().data() + s * nb * per + b * per, per, dy.data().data() + s * per);
      dins[b] = branch_backward(b, dy, cache_.blocks[b]);
    } catch (...) {
#pragma omp critical(jcnn_branch_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  // Slice backward in branch order, then ABS.
  Tensor<T> dmag(cache_.input.shape());
  T* dm = dmag.data().data();
  const std::size_t cells = dmag.size() / kSubbands;
  for (std::size_t b = 0; b < nb; ++b) {
    const T* d = dins[b].data().data();
    const std::size_t k = branches_[b].index;
    if (k == kBranchCount) {
      for (std::size_t i = 0; i < dmag.size(); ++i) dm[i] += d[i];
    } else {
      for (std::size_t i = 0; i < cells; ++i) dm[i * kSubbands + k - 1] += d[i];
    }
  }
  return cfg_.use_abs ? abs_backward(cache_.input, dmag) : dmag;
}

template <class T>
std::vector<ParamRef<T>> Network<T>::params() {
  std::vector<ParamRef<T>> out;
  for (auto& br : branches_)
    for (std::size_t j = 0; j < br.blocks.size(); ++j) {
      auto& blk = br.blocks[j];
      const std::string p = block_prefix(br.index, j);
      out.push_back({p + ".w", &blk.conv.kernels, &blk.conv_grad.kernels});
      out.push_back({p + ".b", &blk.conv.bias, &blk.conv_grad.bias});
      if (cfg_.use_bn) {
        const std::string q = bn_prefix(br.index, j);
        out.push_back({q + ".gamma", &blk.bn.gamma, &blk.gamma_grad});
        out.push_back({q + ".beta", &blk.bn.beta, &blk.beta_grad});
      }
    }
  out.push_back({"fc1.w", &fc1_.weights, &fc1_grad_.weights});
  out.push_back({"fc1.b", &fc1_.bias, &fc1_grad_.bias});
  out.push_back({"fc2.w", &fc2_.weights, &fc2_grad_.weights});
  out.push_back({"fc2.b", &fc2_.bias, &fc2_grad_.bias});
  return out;
}

template <class T>
std::vector<StateRef<T>> Network<T>::state() {
  std::vector<StateRef<T>> out;
  for (auto& br : branches_)
    for (std::size_t j = 0; j < br.blocks.size(); ++j) {
      auto& blk = br.blocks[j];
      const std::string p = block_prefix(br.index, j);
      out.push_back({p + ".w", &blk.conv.kernels});
      out.push_back({p + ".b", &blk.conv.bias});
      if (cfg_.use_bn) {
        const std::string q = bn_prefix(br.index, j);
        out.push_back({q + ".gamma", &blk.bn.gamma});
        out.push_back({q + ".beta", &blk.bn.beta});
        out.push_back({q + ".mean", &blk.bn.moving_mean});
        out.push_back({q + ".var", &blk.bn.moving_var});
      }
    }
  out.push_back({"fc1.w", &fc1_.weights});
  out.push_back({"fc1.b", &fc1_.bias});
  out.push_back({"fc2.w", &fc2_.weights});
  out.push_back({"fc2.b", &fc2_.bias});
  return out;
}

template <class T>
std::vector<ConstStateRef<T>> Network<T>::state() const {
  auto mut = const_cast<Network*>(this)->state();
  std::vector<ConstStateRef<T>> out;
  out.reserve(mut.size());
  for (auto& r : mut) out.push_back({std::move(r.name), r.value});
  return out;
}

template <class T>
std::optional<std::string> Network<T>::first_non_finite() const {
  for (const auto& r : state())
    if (!r.value->all_finite()) return r.name;
  return std::nullopt;
}

template <class T>
void Network<T>::clear_cache() {
  cache_ = Cache{};
}

template <class T>
void Network<T>::set_bn_updates(std::uint64_t n) {
  for (auto& br : branches_)
    for (auto& blk : br.blocks) blk.bn.updates = n;
}

template <class To, class From>
Network<To> network_cast(Network<From>& src) {
  Network<To> dst(src.config(), 0);
  auto s = src.state();
  auto d = dst.state();
  for (std::size_t i = 0; i < s.size(); ++i) *d[i].value = tensor_cast<To>(*s[i].value);
  std::uint64_t updates = src.branches().front().blocks.front().bn.updates;
  dst.set_bn_updates(updates);
  return dst;
}

template <class T>
double NetworkLoss<T>::loss(const Tensor<T>& x) {
  const Tensor<T> logits = net->forward(x, Mode::train);
  if (!logits.all_finite()) throw NonFiniteError("network logits");
  SoftmaxXent<T> r = softmax_cross_entropy(logits, labels);
  grad_logits = std::move(r.grad_logits);
  return r.loss;
}

template class Network<float>;
template class Network<double>;
template struct NetworkLoss<float>;
template struct NetworkLoss<double>;
template Network<double> network_cast<double, float>(Network<float>&);
template Network<float> network_cast<float, double>(Network<double>&);
template Network<float> network_cast<float, float>(Network<float>&);

}  // namespace jcnn
