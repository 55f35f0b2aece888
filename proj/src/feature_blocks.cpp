#include "ssmlab/feature_blocks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace ssmlab {

const std::vector<std::string> kArchNames = {"conv1d",    "dwsep",    "s4d",
                                             "dwsep_s4d", "conv_s4d", "smr_s4d"};

namespace {

bool arch_has_s4d(const std::string& arch) {
  return arch == "s4d" || arch == "dwsep_s4d" || arch == "conv_s4d" || arch == "smr_s4d";
}

// Channel count of the sequence entering the state-space stage.
Index s4d_channels(const FeatureBlockConfig& c) {
  if (c.arch == "s4d" || c.arch == "conv_s4d") return c.hidden;
  return c.embed_dim;  // dwsep_s4d, smr_s4d run the state space at embed width
}

// Channel count entering the head's affine layer.
Index head_dim(const FeatureBlockConfig& c) {
  if (c.arch == "conv1d") return static_cast<Index>(c.kernel_sizes.size()) * c.hidden;
  if (c.arch == "smr_s4d") return c.embed_dim;
  return c.hidden;
}

void validate(const FeatureBlockConfig& c, std::int32_t vocab_size) {
  if (std::find(kArchNames.begin(), kArchNames.end(), c.arch) == kArchNames.end()) {
    throw std::invalid_argument("unknown arch \"" + c.arch + "\"");
  }
  if (vocab_size < 2) {
    throw std::invalid_argument("vocab size " + std::to_string(vocab_size) + " is below 2");
  }
  if (c.embed_dim < 1 || c.hidden < 1 || c.seq_len < 2) {
    throw std::invalid_argument("embed_dim, hidden and seq_len must be positive");
  }
  if (c.kernel_sizes.empty()) throw std::invalid_argument("kernel_sizes must not be empty");
  for (Index k : c.kernel_sizes) {
    if (k < 1 || k > c.seq_len) {
      throw std::invalid_argument("kernel size " + std::to_string(k) + " outside [1, " +
                                  std::to_string(c.seq_len) + "]");
    }
  }
  if (c.arch != "conv1d" && c.kernel_sizes.size() != 1) {
    throw std::invalid_argument("arch \"" + c.arch + "\" uses a single kernel size, got " +
                                std::to_string(c.kernel_sizes.size()));
  }
  if (arch_has_s4d(c.arch) && c.state_size < 1) {
    throw std::invalid_argument("state_size must be positive for arch \"" + c.arch + "\"");
  }
  if (c.dropout_p < 0.0 || c.dropout_p >= 1.0) {
    throw std::invalid_argument("dropout_p " + std::to_string(c.dropout_p) + " outside [0,1)");
  }
}

Tensor uniform_tensor(Shape shape, double bound, Rng rng) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

// Conv-style init: weights and bias uniform within +/- 1/sqrt(fan_in).
void add_conv(ModelParams& p, const std::string& name, Shape w_shape, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  const Index out = w_shape[0];
  p.tensors.push_back({name + ".weight", uniform_tensor(std::move(w_shape), bound,
                                                        rng.split(name + ".weight")), true});
  p.tensors.push_back({name + ".bias", uniform_tensor({out}, bound, rng.split(name + ".bias")), true});
}

Tensor from_eigen(const Eigen::ArrayXXd& a) {
  Tensor t({a.rows(), a.cols()});
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) t.at(i, j) = a(i, j);
  return t;
}

Tensor from_eigen_vec(const Eigen::ArrayXd& a) {
  Tensor t({a.size()});
  for (Index i = 0; i < a.size(); ++i) t[i] = a[i];
  return t;
}

void add_s4d(ModelParams& p, Index channels, const FeatureBlockConfig& c, Rng& rng) {
  const DiagonalSsmParams s = init_s4d(channels, c.state_size, c.dt_min, c.dt_max, rng.split("s4d"));
  p.tensors.push_back({"s4d.eig_re", from_eigen(s.eigenvalues.real()), false});
  p.tensors.push_back({"s4d.eig_im", from_eigen(s.eigenvalues.imag()), false});
  p.tensors.push_back({"s4d.in_re", from_eigen(s.input_proj.real()), false});
  p.tensors.push_back({"s4d.in_im", from_eigen(s.input_proj.imag()), false});
  p.tensors.push_back({"s4d.out_re", from_eigen(s.output_proj.real()), true});
  p.tensors.push_back({"s4d.out_im", from_eigen(s.output_proj.imag()), true});
  p.tensors.push_back({"s4d.log_dt", from_eigen_vec(s.log_timescale), true});
  p.tensors.push_back({"s4d.skip", from_eigen_vec(s.skip_gain), true});
}

Eigen::ArrayXXcd complex_pair(const Tensor& re, const Tensor& im) {
  const Index rows = re.dim(0), cols = re.dim(1);
  Eigen::ArrayXXcd out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = {re.at(i, j), im.at(i, j)};
  return out;
}

}  // namespace

Tensor* ModelParams::find(const std::string& name) {
  for (NamedTensor& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

const Tensor* ModelParams::find(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

std::vector<Tensor*> ModelParams::trainable() {
  std::vector<Tensor*> out;
  for (NamedTensor& t : tensors)
    if (t.trainable) out.push_back(&t.value);
  return out;
}

ModelParams build(const FeatureBlockConfig& config, std::int32_t vocab_size, Rng rng) {
  validate(config, vocab_size);
  ModelParams p;
  p.config = config;
  p.vocab_size = vocab_size;

  Tensor table({static_cast<Index>(vocab_size), config.embed_dim});
  Rng emb = rng.split("embedding");
  for (Index i = 0; i < table.size(); ++i) table[i] = 0.02 * emb.gaussian();
  p.tensors.push_back({"embedding", std::move(table), true});

  const Index e = config.embed_dim, h = config.hidden;
  if (config.arch == "conv1d") {
    for (std::size_t i = 0; i < config.kernel_sizes.size(); ++i) {
      const Index k = config.kernel_sizes[i];
      add_conv(p, "conv" + std::to_string(i), {h, e, k}, e * k, rng);
    }
  } else if (config.arch == "dwsep") {
    const Index k = config.kernel_sizes[0];
    add_conv(p, "dw", {e, k}, k, rng);
    add_conv(p, "pw", {h, e, 1}, e, rng);
  } else if (config.arch == "s4d") {
    if (e != h) add_conv(p, "adapter", {h, e, 1}, e, rng);
    add_s4d(p, h, config, rng);
  } else if (config.arch == "dwsep_s4d") {
    const Index k = config.kernel_sizes[0];
    add_conv(p, "dw", {e, k}, k, rng);
    add_s4d(p, e, config, rng);
    add_conv(p, "pw", {h, e, 1}, e, rng);
  } else if (config.arch == "conv_s4d") {
    const Index k = config.kernel_sizes[0];
    add_conv(p, "conv0", {h, e, k}, e * k, rng);
    add_s4d(p, h, config, rng);
  } else {  // smr_s4d
    const Index k = config.kernel_sizes[0];
    add_conv(p, "conv0", {e, e, k}, e * k, rng);
    add_s4d(p, e, config, rng);
  }

  const Index c = head_dim(config);
  const double bound = 1.0 / std::sqrt(static_cast<double>(c));
  p.tensors.push_back({"head.weight", uniform_tensor({c, 1}, bound, rng.split("head.weight")), true});
  p.tensors.push_back({"head.bias", uniform_tensor({1}, bound, rng.split("head.bias")), true});
  return p;
}

// dw.weight is stored {C, k}; the depthwise op takes it directly.
ForwardResult forward(Tape& tape, const ModelParams& params,
                      const std::vector<std::vector<std::int32_t>>& batch, bool train_mode,
                      Rng& rng) {
  const FeatureBlockConfig& c = params.config;
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  for (const auto& row : batch) {
    if (static_cast<Index>(row.size()) != c.seq_len) {
      throw std::invalid_argument("forward: sequence length " + std::to_string(row.size()) +
                                  " does not match configured length " +
                                  std::to_string(c.seq_len) + " (pad or truncate first)");
    }
  }

  ForwardResult r;
  std::unordered_map<std::string, VarId> leaf;
  for (const NamedTensor& t : params.tensors) {
    const VarId id = tape.leaf(t.value);
    r.leaves.push_back(id);
    leaf.emplace(t.name, id);
  }

  const VarId embed = embedding(tape, leaf.at("embedding"), batch);

  auto s4d_stage = [&](VarId u) {
    const Eigen::ArrayXXcd eig =
        complex_pair(tape.value(leaf.at("s4d.eig_re")), tape.value(leaf.at("s4d.eig_im")));
    const Eigen::ArrayXXcd in_proj =
        complex_pair(tape.value(leaf.at("s4d.in_re")), tape.value(leaf.at("s4d.in_im")));
    const VarId kernel = s4d_kernel(tape, leaf.at("s4d.out_re"), leaf.at("s4d.out_im"),
                                    leaf.at("s4d.log_dt"), eig, in_proj, c.seq_len);
    return s4d_convolve(tape, u, kernel, leaf.at("s4d.skip"));
  };

  std::vector<VarId> branches;
  if (c.arch == "conv1d") {
    for (std::size_t i = 0; i < c.kernel_sizes.size(); ++i) {
      const std::string base = "conv" + std::to_string(i);
      branches.push_back(conv1d(tape, embed, leaf.at(base + ".weight"), leaf.at(base + ".bias")));
    }
  } else if (c.arch == "dwsep") {
    const VarId dw = depthwise_conv1d(tape, embed, leaf.at("dw.weight"), leaf.at("dw.bias"));
    branches.push_back(conv1d(tape, dw, leaf.at("pw.weight"), leaf.at("pw.bias")));
  } else if (c.arch == "s4d") {
    VarId u = embed;
    if (c.embed_dim != c.hidden) {
      u = conv1d(tape, u, leaf.at("adapter.weight"), leaf.at("adapter.bias"));
    }
    branches.push_back(s4d_stage(u));
  } else if (c.arch == "dwsep_s4d") {
    const VarId dw = depthwise_conv1d(tape, embed, leaf.at("dw.weight"), leaf.at("dw.bias"));
    const VarId ssm = s4d_stage(dw);
    branches.push_back(conv1d(tape, ssm, leaf.at("pw.weight"), leaf.at("pw.bias")));
  } else if (c.arch == "conv_s4d") {
    const VarId conv = conv1d(tape, embed, leaf.at("conv0.weight"), leaf.at("conv0.bias"));
    branches.push_back(s4d_stage(conv));
  } else {  // smr_s4d: conv gate modulates the embeddings elementwise
    const VarId gate = conv1d(tape, embed, leaf.at("conv0.weight"), leaf.at("conv0.bias"));
    branches.push_back(s4d_stage(mul(tape, gate, embed)));
  }

  std::vector<VarId> pooled;
  pooled.reserve(branches.size());
  for (VarId b : branches) pooled.push_back(global_max_pool(tape, relu(tape, b)));
  r.pooled = concat_channels(tape, pooled);

  const VarId dropped = dropout(tape, r.pooled, c.dropout_p, train_mode, rng);
  const VarId out = affine(tape, dropped, leaf.at("head.weight"), leaf.at("head.bias"));
  r.logits = reshape(tape, out, {static_cast<Index>(batch.size())});
  return r;
}

Eigen::ArrayXd predict_logits(const ModelParams& params,
                              const std::vector<std::vector<std::int32_t>>& batch) {
  Tape tape;
  Rng unused(0);
  const ForwardResult r = forward(tape, params, batch, false, unused);
  const Tensor& v = tape.value(r.logits);
  Eigen::ArrayXd out(v.size());
  for (Index i = 0; i < v.size(); ++i) out[i] = v[i];
  return out;
}

DiagonalSsmParams s4d_from_params(const ModelParams& params) {
  if (!arch_has_s4d(params.config.arch)) {
    throw std::invalid_argument("arch \"" + params.config.arch + "\" has no state-space stage");
  }
  const Tensor* out_re = params.find("s4d.out_re");
  DiagonalSsmParams s;
  s.channels = out_re->dim(0);
  s.state_size = out_re->dim(1);
  s.eigenvalues = complex_pair(*params.find("s4d.eig_re"), *params.find("s4d.eig_im"));
  s.input_proj = complex_pair(*params.find("s4d.in_re"), *params.find("s4d.in_im"));
  s.output_proj = complex_pair(*out_re, *params.find("s4d.out_im"));
  const Tensor& log_dt = *params.find("s4d.log_dt");
  const Tensor& skip = *params.find("s4d.skip");
  s.log_timescale.resize(s.channels);
  s.skip_gain.resize(s.channels);
  for (Index h = 0; h < s.channels; ++h) {
    s.log_timescale[h] = log_dt[h];
    s.skip_gain[h] = skip[h];
  }
  return s;
}

Eigen::ArrayXXd extract_kernels(const ModelParams& params) {
  const FeatureBlockConfig& c = params.config;
  if (arch_has_s4d(c.arch)) {
    return materialize_kernel(s4d_from_params(params), c.seq_len).values;
  }
  if (c.arch == "dwsep") {
    const Tensor& w = *params.find("dw.weight");  // {E, k}
    Eigen::ArrayXXd out(w.dim(0), w.dim(1));
    for (Index i = 0; i < w.dim(0); ++i)
      for (Index j = 0; j < w.dim(1); ++j) out(i, j) = w.at(i, j);
    return out;
  }
  // conv1d: one row per (branch, output channel), input channels averaged,
  // zero-padded on the right to the widest kernel.
  const Index width = *std::max_element(c.kernel_sizes.begin(), c.kernel_sizes.end());
  Eigen::ArrayXXd out =
      Eigen::ArrayXXd::Zero(static_cast<Index>(c.kernel_sizes.size()) * c.hidden, width);
  for (std::size_t i = 0; i < c.kernel_sizes.size(); ++i) {
    const Tensor& w = *params.find("conv" + std::to_string(i) + ".weight");  // {H, E, k}
    for (Index o = 0; o < c.hidden; ++o) {
      for (Index j = 0; j < w.dim(2); ++j) {
        double acc = 0.0;
        for (Index in = 0; in < w.dim(1); ++in) acc += w.at(o, in, j);
        out(static_cast<Index>(i) * c.hidden + o, j) = acc / static_cast<double>(w.dim(1));
      }
    }
  }
  return out;
}

}  // namespace ssmlab
