#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ssmlab/adam.hpp"
#include "ssmlab/feature_blocks.hpp"
#include "ssmlab/rng.hpp"

using namespace ssmlab;

namespace {

FeatureBlockConfig small_config(const std::string& arch) {
  FeatureBlockConfig c;
  c.arch = arch;
  c.embed_dim = 8;
  c.hidden = 8;
  c.kernel_sizes = {5};
  c.state_size = 4;
  c.dropout_p = 0.5;
  c.seq_len = 32;
  return c;
}

std::vector<std::vector<std::int32_t>> random_batch(Index batch, Index len, std::int32_t vocab,
                                                    Rng& rng) {
  std::vector<std::vector<std::int32_t>> out(static_cast<std::size_t>(batch));
  for (auto& row : out) {
    row.resize(static_cast<std::size_t>(len));
    for (auto& id : row) id = static_cast<std::int32_t>(rng.uniform_int(vocab));
  }
  return out;
}

}  // namespace

TEST_CASE("build allocates per-arch parameters") {
  FeatureBlockConfig multi = small_config("conv1d");
  multi.kernel_sizes = {3, 4, 5};
  const ModelParams p = build(multi, 20, Rng(1));
  CHECK(p.find("conv0.weight") != nullptr);
  CHECK(p.find("conv1.weight") != nullptr);
  CHECK(p.find("conv2.weight") != nullptr);
  CHECK(p.find("conv1.weight")->shape() == Shape{8, 8, 4});
  CHECK(p.find("head.weight")->shape() == Shape{24, 1});  // 3 branches * H

  const ModelParams s = build(small_config("s4d"), 20, Rng(1));
  CHECK(s.find("conv0.weight") == nullptr);
  CHECK(s.find("dw.weight") == nullptr);
  CHECK(s.find("s4d.out_re") != nullptr);
  CHECK(s.find("s4d.out_re")->shape() == Shape{8, 4});
  CHECK(s.find("adapter.weight") == nullptr);  // embed_dim == hidden

  FeatureBlockConfig wide = small_config("s4d");
  wide.hidden = 12;
  const ModelParams w = build(wide, 20, Rng(1));
  CHECK(w.find("adapter.weight") != nullptr);
  CHECK(w.find("adapter.weight")->shape() == Shape{12, 8, 1});

  FeatureBlockConfig bad = small_config("conv1d");
  bad.arch = "transformer";
  CHECK_THROWS_WITH_AS(build(bad, 20, Rng(1)), doctest::Contains("unknown arch"),
                       std::invalid_argument);
  CHECK_THROWS_AS(build(small_config("conv1d"), 1, Rng(1)), std::invalid_argument);

  FeatureBlockConfig two_ks = small_config("smr_s4d");
  two_ks.kernel_sizes = {3, 5};
  CHECK_THROWS_AS(build(two_ks, 20, Rng(1)), std::invalid_argument);
}

TEST_CASE("same seed builds identical parameters") {
  for (const std::string& arch : kArchNames) {
    const ModelParams a = build(small_config(arch), 20, Rng(7));
    const ModelParams b = build(small_config(arch), 20, Rng(7));
    REQUIRE(a.tensors.size() == b.tensors.size());
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
      CHECK(a.tensors[i].name == b.tensors[i].name);
      CHECK((a.tensors[i].value.array() == b.tensors[i].value.array()).all());
    }
  }
}

TEST_CASE("every arch maps a batch to one logit per example") {
  Rng data(3);
  const auto batch = random_batch(2, 32, 20, data);
  for (const std::string& arch : kArchNames) {
    CAPTURE(arch);
    const ModelParams p = build(small_config(arch), 20, Rng(5));
    const Eigen::ArrayXd logits = predict_logits(p, batch);
    REQUIRE(logits.size() == 2);
    CHECK(std::isfinite(logits[0]));
    CHECK(std::isfinite(logits[1]));
  }
}

TEST_CASE("forward rejects unpadded input") {
  const ModelParams p = build(small_config("conv1d"), 20, Rng(5));
  Tape tape;
  Rng rng(1);
  std::vector<std::vector<std::int32_t>> ragged = {{1, 2, 3}};
  CHECK_THROWS_WITH_AS(forward(tape, p, ragged, false, rng), doctest::Contains("pad"),
                       std::invalid_argument);
}

TEST_CASE("eval forward is deterministic and per-example independent") {
  Rng data(11);
  const auto batch = random_batch(4, 32, 20, data);
  for (const std::string& arch : kArchNames) {
    CAPTURE(arch);
    const ModelParams p = build(small_config(arch), 20, Rng(2));
    const Eigen::ArrayXd a = predict_logits(p, batch);
    const Eigen::ArrayXd b = predict_logits(p, batch);
    CHECK((a == b).all());

    // Permuting the batch permutes the logits identically.
    std::vector<std::vector<std::int32_t>> perm = {batch[2], batch[0], batch[3], batch[1]};
    const Eigen::ArrayXd pl = predict_logits(p, perm);
    CHECK(pl[0] == a[2]);
    CHECK(pl[1] == a[0]);
    CHECK(pl[2] == a[3]);
    CHECK(pl[3] == a[1]);
  }
}

TEST_CASE("unit conv gate makes the modulated input equal the embeddings") {
  FeatureBlockConfig c = small_config("smr_s4d");
  c.dropout_p = 0.0;
  ModelParams p = build(c, 20, Rng(9));
  p.find("conv0.weight")->array().setZero();
  p.find("conv0.bias")->array().setOnes();  // gate s == 1 everywhere

  Rng data(4);
  const auto batch = random_batch(3, 32, 20, data);
  const Eigen::ArrayXd logits = predict_logits(p, batch);

  // By hand: embed -> s4d_forward -> relu -> max pool -> affine.
  const Tensor& table = *p.find("embedding");
  Tensor u({3, c.embed_dim, c.seq_len});
  for (Index b = 0; b < 3; ++b)
    for (Index t = 0; t < c.seq_len; ++t)
      for (Index e = 0; e < c.embed_dim; ++e)
        u.at(b, e, t) = table.at(batch[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)], e);
  const Tensor y = s4d_forward(s4d_from_params(p), u);
  const Tensor& hw = *p.find("head.weight");
  for (Index b = 0; b < 3; ++b) {
    double logit = (*p.find("head.bias"))[0];
    for (Index e = 0; e < c.embed_dim; ++e) {
      double best = 0.0;
      for (Index t = 0; t < c.seq_len; ++t) best = std::max(best, std::max(0.0, y.at(b, e, t)));
      logit += best * hw.at(e, 0);
    }
    CHECK(logits[b] == doctest::Approx(logit).epsilon(1e-10));
  }
}

TEST_CASE("zero conv gate annihilates the state-space path") {
  FeatureBlockConfig c = small_config("smr_s4d");
  c.dropout_p = 0.0;
  ModelParams p = build(c, 20, Rng(9));
  p.find("conv0.weight")->array().setZero();
  p.find("conv0.bias")->array().setZero();
  Rng data(4);
  const auto batch = random_batch(3, 32, 20, data);
  const Eigen::ArrayXd logits = predict_logits(p, batch);
  const double bias = (*p.find("head.bias"))[0];
  for (Index b = 0; b < 3; ++b) CHECK(logits[b] == doctest::Approx(bias).epsilon(1e-12));
}

TEST_CASE("identity conv kernel and one-hot head read out an embedding channel max") {
  FeatureBlockConfig c = small_config("conv1d");
  c.kernel_sizes = {1};
  c.dropout_p = 0.0;
  ModelParams p = build(c, 20, Rng(13));
  Tensor& w = *p.find("conv0.weight");  // {8, 8, 1}
  w.array().setZero();
  for (Index o = 0; o < 8; ++o) w.at(o, o, 0) = 1.0;
  p.find("conv0.bias")->array().setZero();
  Tensor& head = *p.find("head.weight");
  head.array().setZero();
  const Index j = 3;
  head.at(j, 0) = 1.0;
  (*p.find("head.bias"))[0] = 0.0;

  Rng data(6);
  const auto batch = random_batch(2, 32, 20, data);
  const Eigen::ArrayXd logits = predict_logits(p, batch);
  const Tensor& table = *p.find("embedding");
  for (Index b = 0; b < 2; ++b) {
    double best = 0.0;  // relu floor
    for (Index t = 0; t < 32; ++t) {
      best = std::max(best, table.at(batch[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)], j));
    }
    CHECK(logits[b] == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("gradient reaches every trainable tensor in every arch") {
  Rng data(21);
  const auto batch = random_batch(4, 32, 20, data);
  Eigen::ArrayXd labels(4);
  labels << 1, 0, 1, 0;
  for (const std::string& arch : kArchNames) {
    CAPTURE(arch);
    FeatureBlockConfig c = small_config(arch);
    c.dropout_p = 0.0;  // keep all head columns live for this check
    const ModelParams p = build(c, 20, Rng(31));
    Tape tape;
    Rng drop(1);
    const ForwardResult r = forward(tape, p, batch, true, drop);
    tape.backward(weighted_bce_with_logits(tape, r.logits, labels, 1.0));
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      if (!p.tensors[i].trainable) continue;
      CAPTURE(p.tensors[i].name);
      CHECK(tape.grad(r.leaves[i]).array().abs().maxCoeff() > 0.0);
    }
  }
}

TEST_CASE("extracted kernel shapes per arch") {
  FeatureBlockConfig conv = small_config("conv1d");
  conv.kernel_sizes = {6};
  const ModelParams pc = build(conv, 20, Rng(3));
  const Eigen::ArrayXXd kc = extract_kernels(pc);
  CHECK(kc.rows() == 8);
  CHECK(kc.cols() == 6);

  const ModelParams ps = build(small_config("s4d"), 20, Rng(3));
  const Eigen::ArrayXXd ks = extract_kernels(ps);
  CHECK(ks.rows() == 8);
  CHECK(ks.cols() == 32);  // seq_len

  const ModelParams pd = build(small_config("dwsep"), 20, Rng(3));
  const Eigen::ArrayXXd kd = extract_kernels(pd);
  CHECK(kd.rows() == 8);
  CHECK(kd.cols() == 5);

  CHECK_THROWS_AS(s4d_from_params(pc), std::invalid_argument);
}

TEST_CASE("one optimizer step changes the extracted kernels") {
  Rng data(8);
  const auto batch = random_batch(4, 32, 20, data);
  Eigen::ArrayXd labels(4);
  labels << 1, 1, 0, 0;
  for (const std::string& arch : {std::string("conv1d"), std::string("s4d")}) {
    CAPTURE(arch);
    FeatureBlockConfig c = small_config(arch);
    c.dropout_p = 0.0;
    ModelParams p = build(c, 20, Rng(40));
    const Eigen::ArrayXXd before = extract_kernels(p);

    Tape tape;
    Rng drop(1);
    const ForwardResult r = forward(tape, p, batch, true, drop);
    tape.backward(weighted_bce_with_logits(tape, r.logits, labels, 1.0));
    std::vector<Tensor*> trainable;
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      if (!p.tensors[i].trainable) continue;
      trainable.push_back(&p.tensors[i].value);
      grads.push_back(tape.grad(r.leaves[i]));
    }
    AdamState st = AdamState::like(trainable);
    AdamConfig cfg;
    cfg.lr = 1e-2;
    adam_step(trainable, grads, st, cfg);

    const Eigen::ArrayXXd after = extract_kernels(p);
    CHECK((after - before).abs().maxCoeff() > 0.0);
  }
}
