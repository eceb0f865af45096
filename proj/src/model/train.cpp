#include <cmath>
#include <stdexcept>

#include "jcnn/errors.hpp"
#include "jcnn/model.hpp"
#include "jcnn/rng.hpp"

namespace jcnn {

void SampleSet::add(std::span<const float> sample, int label, std::string id) {
  if (sample.size() != sample_size())
    throw ShapeError("sample size " + std::to_string(sample.size()) + " does not match " + shape_str(sample_shape));
  if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1");
  values.insert(values.end(), sample.begin(), sample.end());
  labels.push_back(label);
  ids.push_back(std::move(id));
}

Tensor<float> SampleSet::batch(std::span<const std::size_t> indices) const {
  Shape s = sample_shape;
  s.insert(s.begin(), indices.size());
  Tensor<float> t(s);
  const std::size_t n = sample_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw std::out_of_range("sample index out of range");
    std::copy_n(values.data() + indices[i] * n, n, t.data().data() + i * n);
  }
  return t;
}

void PairSet::add(std::span<const float> single, std::span<const float> dbl, std::string id) {
  if (single.size() != sample_size() || dbl.size() != sample_size())
    throw ShapeError("pair sample size does not match " + shape_str(sample_shape));
  single_values.insert(single_values.end(), single.begin(), single.end());
  double_values.insert(double_values.end(), dbl.begin(), dbl.end());
  ids.push_back(std::move(id));
}

SampleSet PairSet::flattened() const {
  SampleSet s;
  s.sample_shape = sample_shape;
  s.values.reserve(2 * single_values.size());
  s.values = single_values;
  s.values.insert(s.values.end(), double_values.begin(), double_values.end());
  for (int label = 0; label < 2; ++label)
    for (const auto& id : ids) {
      s.labels.push_back(label);
      s.ids.push_back(id);
    }
  return s;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size < 2 || batch_size % 2 != 0) throw std::invalid_argument("batch size must be even and >= 2");
  if (!(lr0 >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  if (lr_decay_every == 0) throw std::invalid_argument("lr decay interval must be positive");
  if (!(lr_keep_fraction > 0.0)) throw std::invalid_argument("lr keep fraction must be positive");
  if (validate_from == 0) throw std::invalid_argument("validation start epoch counts from 1");
}

double learning_rate(std::size_t epoch, const TrainConfig& tc) {
  if (epoch == 0) throw std::invalid_argument("epochs count from 1");
  const auto steps = static_cast<double>((epoch - 1) / tc.lr_decay_every);
  return tc.lr0 * std::pow(tc.lr_keep_fraction, steps);
}

std::vector<std::vector<std::size_t>> batch_schedule(std::size_t pair_count, std::size_t pairs_per_batch,
                                                     std::size_t epoch, std::uint64_t seed) {
  if (pairs_per_batch == 0) throw std::invalid_argument("pairs per batch must be positive");
  if (pair_count < pairs_per_batch)
    throw DataError("need at least " + std::to_string(pairs_per_batch) + " training pairs, got " +
                    std::to_string(pair_count));
  std::vector<std::size_t> order(pair_count);
  for (std::size_t i = 0; i < pair_count; ++i) order[i] = i;
  Rng rng(derive_seed(derive_seed(seed, 0x7368756666ull), epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start + pairs_per_batch <= pair_count; start += pairs_per_batch)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + pairs_per_batch));
  return batches;
}

Metrics metrics_from_scores(const Tensor<float>& probabilities, std::span<const int> labels) {
  if (probabilities.rank() != 2 || probabilities.dim(1) != 2 || probabilities.dim(0) != labels.size())
    throw ShapeError("metrics: probabilities must be [N,2] matching the labels");
  Metrics m;
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int pred = probabilities(i, 1) > probabilities(i, 0) ? 1 : 0;
    ++m.total;
    ++m.count[y];
    if (pred == y) {
      ++m.correct;
      ++m.correct_count[y];
    }
    loss -= std::log(std::max(static_cast<double>(probabilities(i, static_cast<std::size_t>(y))), 1e-12));
  }
  m.loss = m.total ? loss / static_cast<double>(m.total) : 0.0;
  return m;
}

Tensor<float> score(Network<float>& net, const SampleSet& set, std::size_t chunk) {
  if (set.sample_shape != net.config().sample_shape())
    throw ShapeError("sample shape " + shape_str(set.sample_shape) + " does not match the model input " +
                     shape_str(net.config().sample_shape()));
  if (chunk == 0) chunk = 1;
  Tensor<float> out({std::max<std::size_t>(set.size(), 1), 2});
  if (set.size() == 0) return Tensor<float>();
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + chunk); ++i) idx.push_back(i);
    const Tensor<float> p = net.predict_proba(set.batch(idx));
    std::copy_n(p.data().data(), p.size(), out.data().data() + start * 2);
  }
  return out;
}

Metrics evaluate(Network<float>& net, const SampleSet& set, std::size_t chunk) {
  if (set.size() == 0) throw DataError("evaluation set is empty");
  return metrics_from_scores(score(net, set, chunk), set.labels);
}

TrainResult train(const PairSet& train_set, const PairSet& val_set, const NetworkConfig& cfg,
                  const TrainConfig& tc, const SampleSet* monitor, const TrainCallbacks& callbacks) {
  cfg.validate();
  tc.validate();
  if (train_set.size() == 0) throw DataError("training set is empty");
  if (val_set.size() == 0) throw DataError("validation set is empty");
  for (const PairSet* s : {&train_set, &val_set})
    if (s->sample_shape != cfg.sample_shape() || s->single_values.size() != s->double_values.size())
      throw DataError("pair set does not match the network input " + shape_str(cfg.sample_shape()));

  const std::size_t ppb = tc.batch_size / 2;
  Network<float> net(cfg, tc.seed, tc.init);
  const SampleSet val = val_set.flattened();

  TrainResult result;
  result.validate_from = std::min(tc.validate_from, tc.epochs);
  bool have_best = false;

  const std::size_t n = train_set.sample_size();
  Shape bshape = cfg.sample_shape();
  bshape.insert(bshape.begin(), 2 * ppb);
  std::vector<int> labels(2 * ppb);
  for (std::size_t i = 0; i < ppb; ++i) labels[ppb + i] = 1;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const double lr = learning_rate(epoch, tc);
    const auto schedule = batch_schedule(train_set.size(), ppb, epoch, tc.seed);
    result.batches_per_epoch = schedule.size();
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;

    for (std::size_t bi = 0; bi < schedule.size(); ++bi) {
      Tensor<float> batch(bshape);
      float* dst = batch.data().data();
      const auto& pairs = schedule[bi];
      for (std::size_t i = 0; i < ppb; ++i) {
        std::copy_n(train_set.single_values.data() + pairs[i] * n, n, dst + i * n);
        std::copy_n(train_set.double_values.data() + pairs[i] * n, n, dst + (ppb + i) * n);
      }
      const Tensor<float> logits = net.forward(batch, Mode::train);
      const std::string where = "epoch " + std::to_string(epoch) + " batch " + std::to_string(bi + 1);
      if (!logits.all_finite()) throw NonFiniteError("logits at " + where);
      const SoftmaxXent<float> sx = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(sx.loss)) throw NonFiniteError("loss at " + where);
      net.backward(sx.grad_logits);
      const auto params = net.params();
      sgd_step<float>(params, lr);
      if (auto bad = net.first_non_finite()) throw NonFiniteError(*bad + " at " + where);
      ++result.finite_checks;

      loss_sum += sx.loss * static_cast<double>(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const int pred = sx.probabilities(i, 1) > sx.probabilities(i, 0) ? 1 : 0;
        correct += pred == labels[i];
      }
      seen += labels.size();
    }
    net.clear_cache();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    const Metrics m = evaluate(net, val);
    rec.val_accuracy = m.accuracy();
    rec.val_loss = m.loss;
    if (epoch >= result.validate_from) {
      if (!have_best || m.accuracy() >= result.best_val_accuracy) {
        result.best = net;
        result.best_epoch = epoch;
        result.best_val_accuracy = m.accuracy();
        have_best = true;
      }
    }
    if (monitor) rec.test_accuracy = evaluate(net, *monitor).accuracy();
    result.history.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
  }
  result.best.clear_cache();
  return result;
}

}  // namespace jcnn
