#include "mimlab/eval.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "mimlab/augment.hpp"
#include "mimlab/error.hpp"
#include "mimlab/optim.hpp"
#include "mimlab/schedule.hpp"
#include "mimlab/trainer.hpp"

namespace mimlab {

std::vector<double> layer_multipliers(Index depth, double decay) {
  if (depth < 0) throw ConfigError("layer_multipliers: negative depth");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("layer_multipliers: decay must be in (0, 1]");
  const Index top = depth + 1;
  std::vector<double> out(static_cast<std::size_t>(top + 1));
  for (Index i = 0; i <= top; ++i) out[static_cast<std::size_t>(i)] = std::pow(decay, static_cast<double>(top - i));
  return out;
}

Accuracy score(std::span<const int> predictions, std::span<const int> labels, int num_classes) {
  if (predictions.size() != labels.size()) throw ShapeError("score: predictions and labels differ in length");
  if (labels.empty()) throw ConfigError("score: empty split");
  Accuracy acc;
  acc.per_class.assign(static_cast<std::size_t>(num_classes), 0.0);
  acc.class_counts.assign(static_cast<std::size_t>(num_classes), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw ConfigError("score: label " + std::to_string(y) + " out of range");
    acc.class_counts[static_cast<std::size_t>(y)] += 1;
    if (predictions[i] == y) {
      ++correct;
      acc.per_class[static_cast<std::size_t>(y)] += 1.0;
    }
  }
  for (std::size_t k = 0; k < acc.per_class.size(); ++k)
    if (acc.class_counts[k]) acc.per_class[k] /= static_cast<double>(acc.class_counts[k]);
  acc.overall = static_cast<double>(correct) / static_cast<double>(labels.size());
  return acc;
}

void check_disjoint(const Dataset& train, const Dataset& eval) {
  std::unordered_set<std::uint64_t> seen;
  for (const Image& img : train.images) seen.insert(image_hash(img));
  for (std::size_t i = 0; i < eval.size(); ++i)
    if (seen.count(image_hash(eval.images[i])))
      throw ConfigError("evaluation image " + std::to_string(i) + " also appears in the training split");
}

void check_labels(const Dataset& data, int num_classes) {
  if (data.labels.size() != data.size()) throw ConfigError("dataset: one label per image required");
  for (std::size_t i = 0; i < data.labels.size(); ++i)
    if (data.labels[i] < 0 || data.labels[i] >= num_classes)
      throw ConfigError("dataset: label " + std::to_string(data.labels[i]) + " of image " + std::to_string(i) +
                        " outside [0, " + std::to_string(num_classes) + ")");
}

namespace {

constexpr std::size_t kChunk = 64;

Tensor<float> input_tokens(const Model& model, std::span<const Image> images, const ChannelStats& mean,
                           const ChannelStats& stddev) {
  std::vector<Image> inputs;
  inputs.reserve(images.size());
  for (const Image& img : images) inputs.push_back(plain_view(img, model.encoder.image_size, mean, stddev).input);
  return patchify_batch(inputs, model.encoder.patch_size);
}

void append_rows(Tensor<float>& out, const Tensor<float>& part, Index at) {
  out.matrix().middleRows(at, part.rows()) = part.matrix();
}

Index argmax_row(const Tensor<float>& t, Index r) {
  Index best = 0;
  for (Index c = 1; c < t.cols(); ++c)
    if (t.at(r, c) > t.at(r, best)) best = c;
  return best;
}

Var<float> class_nll(const Var<float>& logits, std::span<const int> labels) {
  const Index k = logits.value().cols();
  std::vector<Index> picks(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) picks[i] = static_cast<Index>(i) * k + labels[i];
  return scale(mean(gather(log_softmax(logits), std::move(picks))), -1.0f);
}

}  // namespace

std::vector<Tensor<float>> block_features(const Model& model, std::span<const Image> images, const ChannelStats& mean,
                                          const ChannelStats& stddev) {
  const Index depth = model.encoder.depth;
  const Index n = model.encoder.num_tokens();
  const auto total = static_cast<Index>(images.size());
  std::vector<Tensor<float>> out(static_cast<std::size_t>(depth), Tensor<float>({total, model.encoder.embed_dim}));
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const auto part = images.subspan(begin, std::min(kChunk, images.size() - begin));
    Tape<float> tape;
    const auto p = bind(tape, model.params, false);
    const auto x = embed_and_mask(p.encoder, input_tokens(model, part, mean, stddev), {}, model.encoder);
    const auto blocks = encoder_blocks(p.encoder, x, model.encoder);
    for (Index b = 0; b < depth; ++b)
      append_rows(out[static_cast<std::size_t>(b)], mean_pool(layernorm(blocks[static_cast<std::size_t>(b)]), n).value(),
                  static_cast<Index>(begin));
  }
  return out;
}

std::vector<int> LinearClassifier::predict(const Tensor<float>& features) const {
  Tensor<float> logits({features.rows(), w.cols()});
  logits.matrix() = features.matrix() * w.matrix();
  logits.matrix().rowwise() += b.data().transpose();
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Index r = 0; r < features.rows(); ++r) out[static_cast<std::size_t>(r)] = static_cast<int>(argmax_row(logits, r));
  return out;
}

LinearClassifier train_linear(const Tensor<float>& features, std::span<const int> labels, int num_classes,
                              const ProbeConfig& config) {
  if (features.rows() != static_cast<Index>(labels.size())) throw ShapeError("train_linear: one label per row required");
  if (labels.empty()) throw ConfigError("train_linear: empty training split");
  LinearClassifier clf{Tensor<float>::zeros({features.cols(), num_classes}), Tensor<float>::zeros({num_classes})};
  auto sw = AdamWState<float>::like(clf.w);
  auto sb = AdamWState<float>::like(clf.b);
  for (std::int64_t step = 0; step < config.steps; ++step) {
    Tape<float> tape;
    const auto x = tape.constant(features);
    const auto w = tape.leaf(clf.w);
    const auto b = tape.leaf(clf.b);
    const auto logits = add(matmul(x, w), broadcast_rows(b, features.rows()));
    const auto loss = class_nll(logits, labels);
    const auto g = tape.backward(loss);
    adamw_step(clf.w, g[w], sw, AdamWHyper{config.lr, 0.9, 0.999, 1e-8, config.weight_decay}, "probe.weight");
    adamw_step(clf.b, g[b], sb, AdamWHyper{config.lr, 0.9, 0.999, 1e-8, 0.0}, "probe.bias");
  }
  return clf;
}

ProbeResult linear_probe(const Model& model, const Dataset& train, const Dataset& test, int num_classes,
                         const ProbeConfig& config, std::uint64_t seed) {
  check_labels(train, num_classes);
  check_labels(test, num_classes);
  check_disjoint(train, test);
  if (model.encoder.depth < 1) throw ConfigError("linear_probe: encoder has no blocks");
  const auto& mean = train.manifest.mean;
  const auto& stddev = train.manifest.stddev;
  const auto f_train = block_features(model, train.images, mean, stddev);
  const auto f_test = block_features(model, test.images, mean, stddev);

  ProbeResult result;
  result.seed = seed;
  result.accuracy = -1.0;
  for (std::size_t b = 0; b < f_train.size(); ++b) {
    const auto& a = f_train[b].matrix();
    const Eigen::RowVectorXf mu = a.colwise().mean();
    const Eigen::RowVectorXf sd =
        ((a.rowwise() - mu).array().square().colwise().sum() / static_cast<float>(a.rows())).sqrt() + 1e-6f;
    auto standardize = [&](const Tensor<float>& f) {
      Tensor<float> out(f.shape());
      out.matrix() = ((f.matrix().rowwise() - mu).array().rowwise() / sd.array()).matrix();
      return out;
    };
    const auto clf = train_linear(standardize(f_train[b]), train.labels, num_classes, config);
    const auto acc = score(clf.predict(standardize(f_test[b])), test.labels, num_classes);
    result.block_accuracy.push_back(acc.overall);
    if (acc.overall > result.accuracy) {
      result.accuracy = acc.overall;
      result.per_class = acc.per_class;
      result.block = static_cast<Index>(b) + 1;
    }
  }
  return result;
}

std::vector<int> predict_classes(const Model& model, std::span<const Image> images, const ChannelStats& mean,
                                 const ChannelStats& stddev) {
  std::vector<int> out;
  out.reserve(images.size());
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const auto part = images.subspan(begin, std::min(kChunk, images.size() - begin));
    Tape<float> tape;
    const auto p = bind(tape, model.params, false);
    const auto x = embed_and_mask(p.encoder, input_tokens(model, part, mean, stddev), {}, model.encoder);
    const auto pooled = mean_pool(encoder_forward(p.encoder, x, model.encoder), model.encoder.num_tokens());
    const auto& logits = head_forward(p.head, pooled).value();
    for (Index r = 0; r < logits.rows(); ++r) out.push_back(static_cast<int>(argmax_row(logits, r)));
  }
  return out;
}

double evaluate_accuracy(const Model& model, const Dataset& split, const ChannelStats& mean, const ChannelStats& stddev) {
  if (split.size() == 0) throw ConfigError("evaluate_accuracy: empty split");
  const auto pred = predict_classes(model, split.images, mean, stddev);
  return score(pred, split.labels, static_cast<int>(model.head.output_dim)).overall;
}

FinetuneResult finetune(const Model& pretrained, const Dataset& train, const Dataset& test, int num_classes,
                        const FinetuneConfig& config, std::uint64_t seed) {
  check_labels(train, num_classes);
  check_labels(test, num_classes);
  check_disjoint(train, test);
  if (train.size() == 0) throw ConfigError("finetune: empty training split");
  if (config.epochs < 1 || config.batch_size < 1) throw ConfigError("finetune: epochs and batch_size must be >= 1");

  FinetuneResult result;
  result.seed = seed;
  Model& model = result.model;
  model = pretrained;
  model.head = HeadConfig{HeadKind::linear, num_classes};
  Rng head_rng = derive_rng(seed, {stream::finetune, 0});
  model.params.head = init_head(model.head, model.encoder.embed_dim, head_rng);

  const auto n = train.size();
  const auto b = static_cast<std::size_t>(config.batch_size);
  const std::size_t per_epoch = (n + b - 1) / b;
  ScheduleSpec schedule;
  schedule.kind = ScheduleKind::cosine;
  schedule.base_lr = config.base_lr;
  schedule.total_steps = config.epochs * static_cast<std::int64_t>(per_epoch);
  schedule.warmup_steps = std::llround(config.warmup_fraction * static_cast<double>(schedule.total_steps));
  schedule.validate();

  const auto multipliers = layer_multipliers(model.encoder.depth, config.layer_decay);
  std::vector<AdamWState<float>> optim;
  std::vector<double> mult;
  for (const auto& [name, t] : model.named()) {
    optim.push_back(AdamWState<float>::like(*t));
    mult.push_back(multipliers[static_cast<std::size_t>(layer_id(name, model.encoder.depth))]);
  }

  const auto& mean = train.manifest.mean;
  const auto& stddev = train.manifest.stddev;
  Rng shuffle = derive_rng(seed, {stream::finetune, 1});
  std::vector<std::size_t> order(n);
  for (std::int64_t step = 0; step < schedule.total_steps; ++step) {
    const std::size_t k = static_cast<std::size_t>(step) % per_epoch;
    if (k == 0) {
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    Rng rng = derive_rng(seed, {stream::finetune, 2, static_cast<std::uint64_t>(step)});
    std::vector<Image> inputs;
    std::vector<int> labels;
    for (std::size_t i = k * b; i < std::min(n, (k + 1) * b); ++i) {
      inputs.push_back(augment(train.images[order[i]], rng, model.encoder.image_size, mean, stddev).input);
      labels.push_back(train.labels[order[i]]);
    }

    Tape<float> tape;
    const auto p = bind(tape, model.params);
    const ForwardOptions opts{config.drop_path, &rng};
    const auto x = embed_and_mask(p.encoder, patchify_batch(inputs, model.encoder.patch_size), {}, model.encoder);
    const auto pooled = mean_pool(encoder_forward(p.encoder, x, model.encoder, opts), model.encoder.num_tokens());
    const auto loss = class_nll(head_forward(p.head, pooled), labels);
    if (!std::isfinite(loss.value().item())) throw NumericalError("finetune: non-finite loss at step " + std::to_string(step));
    const auto grads = tape.backward(loss);

    std::vector<const Var<float>*> vars;
    p.visit([&](const std::string&, const Var<float>& v) { vars.push_back(&v); });
    const double lr = lr_at(schedule, step);
    auto named = model.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto& [name, t] = named[i];
      const AdamWHyper hp{lr * mult[i], 0.9, 0.999, 1e-8, decays(name, *t) ? config.weight_decay : 0.0};
      adamw_step(*t, grads[*vars[i]], optim[i], hp, name);
    }
  }

  const auto acc = score(predict_classes(model, test.images, mean, stddev), test.labels, num_classes);
  result.accuracy = acc.overall;
  result.per_class = acc.per_class;
  return result;
}

std::string results_csv(std::span<const ResultRow> rows) {
  std::string out = "protocol,seed,block,accuracy\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%" PRIu64 ",%lld,%.6f\n", r.seed, static_cast<long long>(r.block), r.accuracy);
    out += r.protocol + buf;
  }
  return out;
}

}  // namespace mimlab
