#pragma once

#include <functional>
#include <vector>

#include "ssmlab/rng.hpp"
#include "ssmlab/tensor.hpp"

namespace ssmlab {

struct VarId {
  Index idx = -1;
  bool valid() const { return idx >= 0; }
  friend bool operator==(VarId a, VarId b) { return a.idx == b.idx; }
};

/// Append-only record of a forward pass. Nodes are stored in execution order,
/// which is already a topological order, so backward() is a single reverse
/// sweep that visits each node once. One Tape per forward/backward pass,
/// confined to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, VarId self)>;

  VarId leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
    return VarId{static_cast<Index>(nodes_.size()) - 1};
  }

  VarId record(Tensor value, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, false, std::move(backward)});
    return VarId{static_cast<Index>(nodes_.size()) - 1};
  }

  const Tensor& value(VarId id) const { return node(id).value; }

  /// Gradient of the loss w.r.t. this node. Zero tensor if the node did not
  /// receive any gradient. Errors before backward() has run.
  const Tensor& grad(VarId id) const {
    if (!backward_done_) throw std::runtime_error("grad: backward has not run on this tape");
    const Node& n = node(id);
    if (!n.has_grad) {
      zero_cache_ = Tensor(n.value.shape());
      return zero_cache_;
    }
    return n.grad;
  }

  /// Accumulate a gradient contribution into a node (used by backward fns).
  void accumulate(VarId id, const Tensor& contribution) {
    Node& n = node(id);
    if (!n.has_grad) {
      n.grad = contribution;
      require_same_shape(n.value, n.grad, "accumulate");
      n.has_grad = true;
    } else {
      require_same_shape(n.grad, contribution, "accumulate");
      n.grad.array() += contribution.array();
    }
  }

  /// Reverse sweep from a scalar loss node.
  void backward(VarId loss) {
    if (backward_done_) throw std::runtime_error("backward: tape already consumed");
    const Node& l = node(loss);
    if (l.value.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_to_string(l.value.shape()));
    }
    backward_done_ = true;  // set first so backward fns may call grad()
    accumulate(loss, Tensor::full(l.value.shape(), 1.0));
    for (Index i = loss.idx; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.has_grad && n.backward) n.backward(*this, VarId{i});
    }
  }

  bool backward_done() const { return backward_done_; }
  Index size() const { return static_cast<Index>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    BackwardFn backward;
  };

  Node& node(VarId id) {
    if (!id.valid() || id.idx >= size()) throw std::out_of_range("invalid tape node id");
    return nodes_[static_cast<std::size_t>(id.idx)];
  }
  const Node& node(VarId id) const {
    if (!id.valid() || id.idx >= size()) throw std::out_of_range("invalid tape node id");
    return nodes_[static_cast<std::size_t>(id.idx)];
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  mutable Tensor zero_cache_;
};

// ---- differentiable primitives -------------------------------------------
// Shapes use (batch B, channels C, time L) for sequence tensors.

VarId add(Tape& tape, VarId a, VarId b);
VarId mul(Tape& tape, VarId a, VarId b);
VarId matmul(Tape& tape, VarId a, VarId b);  // (r x k) . (k x c)
VarId relu(Tape& tape, VarId x);
VarId exp_elem(Tape& tape, VarId x);
VarId log_elem(Tape& tape, VarId x);
VarId reshape(Tape& tape, VarId x, Shape shape);

/// Cross-correlation, centered, zero-padded to the input length:
/// y[o,t] = bias[o] + sum_{i,j} w[o,i,j] * x[i, t + j - floor((k-1)/2)].
/// x: B x Cin x L, w: Cout x Cin x k, bias: Cout.
VarId conv1d(Tape& tape, VarId x, VarId w, VarId bias);

/// Per-channel variant: x: B x C x L, w: C x k, bias: C.
VarId depthwise_conv1d(Tape& tape, VarId x, VarId w, VarId bias);

/// B x C x L -> B x C; the gradient routes entirely to the first maximal index.
VarId global_max_pool(Tape& tape, VarId x);

/// Concatenate along the channel axis. Rank 2 (B x Ci) or rank 3 (B x Ci x L).
VarId concat_channels(Tape& tape, const std::vector<VarId>& parts);

/// Inverted dropout: train-mode Bernoulli keep-mask scaled by 1/(1-p).
/// Eval mode (or p == 0) is the identity and consumes no randomness.
VarId dropout(Tape& tape, VarId x, double p, bool train_mode, Rng& rng);

/// x: B x C, w: C x M, bias: M -> B x M.
VarId affine(Tape& tape, VarId x, VarId w, VarId bias);

/// table: V x E, ids: B rows of L token ids -> B x E x L.
VarId embedding(Tape& tape, VarId table, const std::vector<std::vector<std::int32_t>>& ids);

VarId sum_all(Tape& tape, VarId x);
VarId mean_all(Tape& tape, VarId x);

/// Mean over the batch of
///   -[w * y * log sigmoid(z) + (1-y) * log(1 - sigmoid(z))]
/// in log-sum-exp form, stable for |z| up to ~700. logits: B or B x 1.
VarId weighted_bce_with_logits(Tape& tape, VarId logits, const Eigen::ArrayXd& labels,
                               double pos_weight);

}  // namespace ssmlab
