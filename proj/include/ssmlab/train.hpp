#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmlab/corpus.hpp"
#include "ssmlab/feature_blocks.hpp"

namespace ssmlab {

struct Confusion {
  Index tp = 0;
  Index fp = 0;
  Index tn = 0;
  Index fn = 0;
  Index total() const { return tp + fp + tn + fn; }
};

/// Percentages in [0, 100]. Precision/recall/F1 are computed per class and
/// averaged weighted by class support; a class absent from the data or an
/// empty denominator contributes zero. Weighted recall then equals accuracy
/// by construction, which matches how the reference results were averaged.
struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Confusion confusion;
};

/// Threshold: predicted positive iff sigmoid(z) >= 0.5, i.e. z >= 0.
Metrics compute_metrics(const Eigen::ArrayXd& logits, const Eigen::ArrayXd& labels);

/// n_neg / n_pos. Throws "degenerate class" when either count is zero.
double compute_pos_weight(Index n_pos, Index n_neg);

struct TrainConfig {
  FeatureBlockConfig model;
  double lr = 1e-3;
  Index batch_size = 64;
  Index epochs = 10;
  std::uint64_t seed = 0;
  double pos_weight = 0.0;  // <= 0 selects n_neg/n_pos from the training split
  SplitSpec split;          // split.seed is set from `seed` by the CLI
};

struct EpochLog {
  Index epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_f1 = 0.0;
};

/// Non-finite loss during training. Carries where it happened.
struct DivergenceError : std::runtime_error {
  DivergenceError(Index epoch_, Index batch_, const std::string& what_)
      : std::runtime_error("diverged at epoch " + std::to_string(epoch_) + ", batch " +
                           std::to_string(batch_) + ": " + what_),
        epoch(epoch_),
        batch(batch_) {}
  Index epoch;
  Index batch;
};

struct TrainedModel {
  ModelParams params;       // final-epoch parameters (the reported model)
  ModelParams best_params;  // highest validation F1 snapshot
  Index best_epoch = 0;
  Vocab vocab;
  TrainConfig config;
  double pos_weight = 1.0;  // the value actually used
  std::map<std::string, Metrics> metrics;  // "train", "val", "test"
  std::vector<EpochLog> epochs;
};

struct EncodedSplit {
  std::vector<std::vector<std::int32_t>> ids;
  Eigen::ArrayXd labels;
};

EncodedSplit encode_split(const Vocab& vocab, const Dataset& dataset, Index seq_len);

/// Eval-mode metrics over a split, processed in batches.
Metrics evaluate(const ModelParams& params, const EncodedSplit& split, Index batch_size);

/// Splits the dataset, builds the vocabulary from the training split only,
/// and runs exactly config.epochs epochs of Adam on the weighted BCE loss.
/// No early stopping; the final-epoch model is the reported one. Shuffling,
/// initialization and dropout draw from independent substreams of the seed.
TrainedModel train(const TrainConfig& config, const Dataset& dataset);

/// {split: {accuracy, precision, recall, f1, confusion}} with percentages
/// rounded to two decimals.
std::string metrics_to_json(const std::map<std::string, Metrics>& metrics);

/// epoch,train_loss,val_f1 rows.
std::string epoch_csv(const std::vector<EpochLog>& logs);

}  // namespace ssmlab
