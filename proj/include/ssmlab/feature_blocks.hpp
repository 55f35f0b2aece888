#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "ssmlab/rng.hpp"
#include "ssmlab/s4d.hpp"
#include "ssmlab/tape.hpp"
#include "ssmlab/tensor.hpp"

namespace ssmlab {

/// One feature extractor in front of the shared head. The six variants:
///   conv1d     embed -> parallel conv per kernel size
///   dwsep      embed -> depthwise conv -> pointwise 1x1 conv
///   s4d        embed -> (1x1 adapter when embed_dim != hidden) -> state space
///   dwsep_s4d  embed -> depthwise conv -> state space -> pointwise 1x1 conv
///   conv_s4d   embed -> conv -> state space
///   smr_s4d    embed -> conv gate s, state-space input is s (*) embed
/// followed by ReLU, per-channel global max pooling, branch concatenation,
/// dropout, and an affine map to one logit.
struct FeatureBlockConfig {
  std::string arch = "conv1d";
  Index embed_dim = 64;
  Index hidden = 64;                   // H, channels entering the head
  std::vector<Index> kernel_sizes = {6};
  Index state_size = 16;               // N, modes per state-space channel
  double dropout_p = 0.5;
  Index seq_len = 256;
  double dt_min = 1e-3;
  double dt_max = 1e-1;
};

extern const std::vector<std::string> kArchNames;

struct NamedTensor {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct ModelParams {
  FeatureBlockConfig config;
  std::int32_t vocab_size = 0;
  std::vector<NamedTensor> tensors;

  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  std::vector<Tensor*> trainable();
};

/// Validates the config and allocates initialized parameters. Convolution and
/// affine weights are uniform within +/- 1/sqrt(fan_in); embeddings are
/// Gaussian with std 0.02; state-space parameters follow init_s4d. Each
/// tensor draws from a substream keyed by its name, so initialization is
/// order-independent and deterministic per seed.
ModelParams build(const FeatureBlockConfig& config, std::int32_t vocab_size, Rng rng);

struct ForwardResult {
  VarId logits;              // shape {B}
  VarId pooled;              // pre-dropout concatenated features, {B, C}
  std::vector<VarId> leaves; // tape leaf per params.tensors entry, same order
};

/// One forward pass over a batch of padded id sequences (each exactly
/// config.seq_len long). Dropout draws from `rng` only in train mode.
ForwardResult forward(Tape& tape, const ModelParams& params,
                      const std::vector<std::vector<std::int32_t>>& batch, bool train_mode,
                      Rng& rng);

/// Eval-mode logits without keeping the tape.
Eigen::ArrayXd predict_logits(const ModelParams& params,
                              const std::vector<std::vector<std::int32_t>>& batch);

/// Rebuilds the frozen+trained state-space parameterization from the tensor
/// list. Errors when the arch has no state-space stage.
DiagonalSsmParams s4d_from_params(const ModelParams& params);

/// The kernels the interpretability pipeline analyzes: the materialized
/// state-space impulse response (length seq_len) for s4d-bearing archs, or
/// the conv filters (input channels averaged, branches zero-padded to the
/// widest kernel) for pure conv archs. Rows are channels.
Eigen::ArrayXXd extract_kernels(const ModelParams& params);

}  // namespace ssmlab
