#include "ssmlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ssmlab/adam.hpp"
#include "ssmlab/tape.hpp"

namespace ssmlab {

namespace {

double ratio_or_zero(Index num, Index den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(double precision, double recall) {
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

}  // namespace

Metrics compute_metrics(const Eigen::ArrayXd& logits, const Eigen::ArrayXd& labels) {
  if (logits.size() != labels.size()) {
    throw std::invalid_argument("compute_metrics: " + std::to_string(logits.size()) +
                                " logits vs " + std::to_string(labels.size()) + " labels");
  }
  Metrics m;
  for (Index i = 0; i < logits.size(); ++i) {
    const bool pred = logits[i] >= 0.0;  // sigmoid(z) >= 0.5
    const bool truth = labels[i] >= 0.5;
    if (pred && truth) ++m.confusion.tp;
    else if (pred && !truth) ++m.confusion.fp;
    else if (!pred && !truth) ++m.confusion.tn;
    else ++m.confusion.fn;
  }
  const Confusion& c = m.confusion;
  const Index n = c.total();
  if (n == 0) return m;
  const Index support_pos = c.tp + c.fn;
  const Index support_neg = c.tn + c.fp;

  const double prec_pos = ratio_or_zero(c.tp, c.tp + c.fp);
  const double rec_pos = ratio_or_zero(c.tp, support_pos);
  const double prec_neg = ratio_or_zero(c.tn, c.tn + c.fn);
  const double rec_neg = ratio_or_zero(c.tn, support_neg);

  const double wp = static_cast<double>(support_pos) / static_cast<double>(n);
  const double wn = static_cast<double>(support_neg) / static_cast<double>(n);
  m.accuracy = 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
  m.precision = 100.0 * (wp * prec_pos + wn * prec_neg);
  m.recall = 100.0 * (wp * rec_pos + wn * rec_neg);
  m.f1 = 100.0 * (wp * f1_of(prec_pos, rec_pos) + wn * f1_of(prec_neg, rec_neg));
  return m;
}

double compute_pos_weight(Index n_pos, Index n_neg) {
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("degenerate class: " + std::to_string(n_pos) + " positive / " +
                                std::to_string(n_neg) + " negative examples");
  }
  return static_cast<double>(n_neg) / static_cast<double>(n_pos);
}

EncodedSplit encode_split(const Vocab& vocab, const Dataset& dataset, Index seq_len) {
  EncodedSplit out;
  out.ids.reserve(static_cast<std::size_t>(dataset.size()));
  out.labels.resize(dataset.size());
  for (Index i = 0; i < dataset.size(); ++i) {
    const Example& e = dataset.examples[static_cast<std::size_t>(i)];
    out.ids.push_back(encode_padded(vocab, e.tokens, seq_len));
    out.labels[i] = static_cast<double>(e.label);
  }
  return out;
}

Metrics evaluate(const ModelParams& params, const EncodedSplit& split, Index batch_size) {
  const Index n = static_cast<Index>(split.ids.size());
  if (n == 0) throw std::invalid_argument("evaluate: empty split");
  Eigen::ArrayXd logits(n);
  for (Index start = 0; start < n; start += batch_size) {
    const Index stop = std::min(n, start + batch_size);
    std::vector<std::vector<std::int32_t>> batch(split.ids.begin() + start,
                                                 split.ids.begin() + stop);
    logits.segment(start, stop - start) = predict_logits(params, batch);
  }
  return compute_metrics(logits, split.labels);
}

TrainedModel train(const TrainConfig& config, const Dataset& dataset) {
  if (config.lr <= 0.0) throw std::invalid_argument("lr must be positive");
  if (config.batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (config.epochs < 1) throw std::invalid_argument("epochs must be at least 1");

  const SplitResult splits = split(dataset, config.split);
  if (splits.train.size() == 0) throw std::invalid_argument("training split is empty");

  TrainedModel model;
  model.config = config;
  std::vector<std::vector<std::string>> train_tokens;
  train_tokens.reserve(static_cast<std::size_t>(splits.train.size()));
  for (const Example& e : splits.train.examples) train_tokens.push_back(e.tokens);
  model.vocab = Vocab::build(train_tokens);

  const Index seq_len = config.model.seq_len;
  const EncodedSplit enc_train = encode_split(model.vocab, splits.train, seq_len);
  const EncodedSplit enc_val = encode_split(model.vocab, splits.val, seq_len);
  const EncodedSplit enc_test = encode_split(model.vocab, splits.test, seq_len);

  model.pos_weight = config.pos_weight > 0.0
                         ? config.pos_weight
                         : compute_pos_weight(splits.train.n_pos(), splits.train.n_neg());

  const Rng root(config.seed);
  model.params = build(config.model, model.vocab.size(), root.split("init"));
  model.best_params = model.params;

  std::vector<Tensor*> trainable = model.params.trainable();
  AdamState opt_state = AdamState::like(trainable);
  AdamConfig opt_cfg;
  opt_cfg.lr = config.lr;

  Rng dropout_rng = root.split("dropout");
  const Rng data_rng = root.split("data");

  const Index n_train = static_cast<Index>(enc_train.ids.size());
  std::vector<Index> order(static_cast<std::size_t>(n_train));
  for (Index i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;

  double best_val_f1 = -1.0;
  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = data_rng.split(static_cast<std::uint64_t>(epoch));
    for (Index i = n_train - 1; i > 0; --i) {
      const Index j = shuffle_rng.uniform_int(i + 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    double loss_sum = 0.0;
    Index batch_index = 0;
    for (Index start = 0; start < n_train; start += config.batch_size, ++batch_index) {
      const Index stop = std::min(n_train, start + config.batch_size);
      std::vector<std::vector<std::int32_t>> batch;
      Eigen::ArrayXd labels(stop - start);
      batch.reserve(static_cast<std::size_t>(stop - start));
      for (Index i = start; i < stop; ++i) {
        const Index src = order[static_cast<std::size_t>(i)];
        batch.push_back(enc_train.ids[static_cast<std::size_t>(src)]);
        labels[i - start] = enc_train.labels[src];
      }

      Tape tape;
      try {
        const ForwardResult fwd = forward(tape, model.params, batch, true, dropout_rng);
        const VarId loss = weighted_bce_with_logits(tape, fwd.logits, labels, model.pos_weight);
        const double loss_value = tape.value(loss)[0];
        if (!std::isfinite(loss_value)) throw std::runtime_error("non-finite loss");
        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(trainable.size());
        for (std::size_t t = 0; t < model.params.tensors.size(); ++t) {
          if (model.params.tensors[t].trainable) grads.push_back(tape.grad(fwd.leaves[t]));
        }
        adam_step(trainable, grads, opt_state, opt_cfg);
        loss_sum += loss_value * static_cast<double>(stop - start);
      } catch (const std::runtime_error& err) {
        // Numerical blow-ups surface as non-finite values somewhere in the
        // pass; anything else is a bug and is rethrown untouched.
        const std::string what = err.what();
        if (what.find("non-finite") != std::string::npos ||
            what.find("diverged") != std::string::npos) {
          throw DivergenceError(epoch, batch_index, what);
        }
        throw;
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(n_train);
    if (enc_val.ids.empty()) {
      log.val_f1 = 0.0;
    } else {
      const Metrics val = evaluate(model.params, enc_val, config.batch_size);
      log.val_f1 = val.f1;
      if (val.f1 > best_val_f1) {
        best_val_f1 = val.f1;
        model.best_params = model.params;
        model.best_epoch = epoch;
      }
    }
    model.epochs.push_back(log);
  }

  model.metrics["train"] = evaluate(model.params, enc_train, config.batch_size);
  if (!enc_val.ids.empty()) model.metrics["val"] = evaluate(model.params, enc_val, config.batch_size);
  if (!enc_test.ids.empty())
    model.metrics["test"] = evaluate(model.params, enc_test, config.batch_size);
  return model;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string metrics_to_json(const std::map<std::string, Metrics>& metrics) {
  // Hand-rolled so percentages stay fixed at two decimals.
  std::ostringstream os;
  os << "{\n";
  bool first = true;
  for (const auto& [name, m] : metrics) {
    if (!first) os << ",\n";
    first = false;
    os << "  \"" << name << "\": {\"accuracy\": " << pct(m.accuracy)
       << ", \"precision\": " << pct(m.precision) << ", \"recall\": " << pct(m.recall)
       << ", \"f1\": " << pct(m.f1) << ", \"confusion\": {\"tp\": " << m.confusion.tp
       << ", \"fp\": " << m.confusion.fp << ", \"tn\": " << m.confusion.tn
       << ", \"fn\": " << m.confusion.fn << "}}";
  }
  os << "\n}\n";
  return os.str();
}

std::string epoch_csv(const std::vector<EpochLog>& logs) {
  std::ostringstream os;
  os << "epoch,train_loss,val_f1\n";
  char buf[64];
  for (const EpochLog& log : logs) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.2f\n", static_cast<long long>(log.epoch),
                  log.train_loss, log.val_f1);
    os << buf;
  }
  return os.str();
}

}  // namespace ssmlab
