#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mimlab/config.hpp"
#include "mimlab/image.hpp"
#include "mimlab/model.hpp"

namespace mimlab {

/// lr multiplier per layer id: decay^(D - i) with D = depth + 1, so the
/// embedding gets decay^D and the head 1.
std::vector<double> layer_multipliers(Index depth, double decay);

/// Top-1 fraction and per-class breakdown of predictions against labels.
struct Accuracy {
  double overall = 0.0;
  std::vector<double> per_class;
  std::vector<std::size_t> class_counts;
};

Accuracy score(std::span<const int> predictions, std::span<const int> labels, int num_classes);

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<double> per_class;
  std::uint64_t seed = 0;
  Index block = 0;                    // 1-based block whose output fed the classifier
  std::vector<double> block_accuracy;  // test accuracy for every block
};

struct FinetuneResult {
  double accuracy = 0.0;
  std::vector<double> per_class;
  std::uint64_t seed = 0;
  Model model;  // encoder plus class head
};

/// Throws ConfigError when any image of `eval` also appears in `train`.
void check_disjoint(const Dataset& train, const Dataset& eval);

/// Labels must lie in [0, num_classes).
void check_labels(const Dataset& data, int num_classes);

/// Mean-pooled, non-affine-normalized output of every block, one B x D
/// matrix per block, from plain views normalized with `mean`/`stddev`.
std::vector<Tensor<float>> block_features(const Model& model, std::span<const Image> images, const ChannelStats& mean,
                                          const ChannelStats& stddev);

/// Affine softmax classifier trained full-batch with AdamW.
struct LinearClassifier {
  Tensor<float> w;  // D x K
  Tensor<float> b;  // K
  std::vector<int> predict(const Tensor<float>& features) const;
};

LinearClassifier train_linear(const Tensor<float>& features, std::span<const int> labels, int num_classes,
                              const ProbeConfig& config);

/// Frozen encoder; classifier per block on standardized features; reports
/// the best block.
ProbeResult linear_probe(const Model& model, const Dataset& train, const Dataset& test, int num_classes,
                         const ProbeConfig& config, std::uint64_t seed);

/// Class predictions of an encoder with a classification head on
/// mean-pooled final features.
std::vector<int> predict_classes(const Model& model, std::span<const Image> images, const ChannelStats& mean,
                                 const ChannelStats& stddev);

/// Top-1 accuracy on a split; throws ConfigError when it is empty.
double evaluate_accuracy(const Model& model, const Dataset& split, const ChannelStats& mean, const ChannelStats& stddev);

/// Joint training of the encoder and a fresh linear head with layer-wise lr
/// decay, drop path and light augmentation.
FinetuneResult finetune(const Model& pretrained, const Dataset& train, const Dataset& test, int num_classes,
                        const FinetuneConfig& config, std::uint64_t seed);

struct ResultRow {
  std::string protocol;
  std::uint64_t seed;
  Index block;
  double accuracy;
};

/// `protocol,seed,block,accuracy` CSV.
std::string results_csv(std::span<const ResultRow> rows);

}  // namespace mimlab
