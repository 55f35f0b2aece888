#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "oracles.hpp"
#include "ssmlab/adam.hpp"
#include "ssmlab/fft.hpp"
#include "ssmlab/rng.hpp"
#include "ssmlab/tape.hpp"
#include "ssmlab/tensor.hpp"

using namespace ssmlab;

TEST_CASE("tensor basics and shape errors") {
  Tensor t = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
  CHECK(t.at(0, 2) == 3);
  CHECK(t.at(1, 0) == 4);
  CHECK(t.size() == 6);
  CHECK_THROWS_WITH_AS(Tensor({2, 3}, Tensor::Storage::Zero(5)), doctest::Contains("length 5"),
                       std::invalid_argument);
  Tensor a({2, 2}), b({4});
  CHECK_THROWS_WITH_AS(require_same_shape(a, b, "add"), doctest::Contains("[2,2]"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(require_same_shape(a, b, "add"), doctest::Contains("[4]"),
                       std::invalid_argument);
}

TEST_CASE("rng determinism and substreams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng base(7);
  Rng init = base.split("init");
  Rng data = base.split("data");
  CHECK(init.next_u64() != data.next_u64());

  // Consuming from one substream does not perturb a sibling.
  Rng parent(7);
  Rng d1 = parent.split("data");
  parent.split("init").next_u64();
  parent.split("dropout").next_u64();
  Rng d2 = Rng(7).split("data");
  for (int i = 0; i < 8; ++i) CHECK(d1.next_u64() == d2.next_u64());

  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    const auto k = u.uniform_int(17);
    CHECK(k >= 0);
    CHECK(k < 17);
  }
}

TEST_CASE("fft of unit impulse is flat") {
  const Spectrum s = fft_real(Eigen::Vector4d(1, 0, 0, 0));
  REQUIRE(s.bins.size() == 3);
  CHECK(s.padded_length == 4);
  for (Index m = 0; m < 3; ++m) {
    CHECK(s.bins[m].real() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.bins[m].imag() == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("fft of constant concentrates at DC") {
  const Spectrum s = fft_real(Eigen::Vector4d(1, 1, 1, 1));
  CHECK(s.bins[0].real() == doctest::Approx(4.0));
  CHECK(std::abs(s.bins[1]) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(s.bins[2]) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fft matches naive DFT on random length-16 vector") {
  Rng rng(11);
  Eigen::VectorXd x(16);
  for (Index i = 0; i < 16; ++i) x[i] = rng.gaussian();
  const Spectrum s = fft_real(x);
  const Eigen::VectorXcd ref = oracles::naive_dft(x);
  for (Index m = 0; m <= 8; ++m) CHECK(std::abs(s.bins[m] - ref[m]) < 1e-10);
}

TEST_CASE("ifft round trips") {
  const Eigen::Vector4d x(3, 1, 4, 1);
  const Eigen::VectorXd back = ifft_real(fft_real(x), 4);
  for (Index i = 0; i < 4; ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-12));

  Spectrum flat;
  flat.bins = Eigen::Vector3cd(1, 1, 1);
  flat.padded_length = 4;
  flat.signal_length = 4;
  const Eigen::VectorXd impulse = ifft_real(flat, 4);
  CHECK(impulse[0] == doctest::Approx(1.0));
  for (Index i = 1; i < 4; ++i) CHECK(impulse[i] == doctest::Approx(0.0).epsilon(1e-12));

  Rng rng(5);
  Eigen::VectorXd r(32);
  for (Index i = 0; i < 32; ++i) r[i] = rng.gaussian();
  const Eigen::VectorXd rb = ifft_real(fft_real(r), 32);
  CHECK((rb - r).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("fft round trip property over lengths 1..128") {
  Rng rng(99);
  for (Index len = 1; len <= 128; ++len) {
    Eigen::VectorXd x(len);
    for (Index i = 0; i < len; ++i) x[i] = rng.uniform(-2.0, 2.0);
    const Eigen::VectorXd back = ifft_real(fft_real(x), len);
    REQUIRE((back - x).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("Parseval over the padded spectrum") {
  Rng rng(123);
  for (int rep = 0; rep < 10; ++rep) {
    const Index len = 5 + rng.uniform_int(60);
    Eigen::VectorXd x(len);
    for (Index i = 0; i < len; ++i) x[i] = rng.gaussian();
    const Spectrum s = fft_real(x);
    double full_energy = std::norm(s.bins[0]) + std::norm(s.bins[s.bins.size() - 1]);
    for (Index m = 1; m + 1 < s.bins.size(); ++m) full_energy += 2.0 * std::norm(s.bins[m]);
    const double time_energy = x.squaredNorm();
    CHECK(std::abs(time_energy - full_energy / static_cast<double>(s.padded_length)) <=
          1e-8 * std::max(1.0, time_energy));
  }
}

TEST_CASE("fft error contracts") {
  CHECK_THROWS_WITH_AS(fft_real(Eigen::VectorXd(0)), "empty-signal", std::invalid_argument);
  Spectrum s = fft_real(Eigen::Vector4d(1, 2, 3, 4));
  CHECK_THROWS_AS(ifft_real(s, 9), std::invalid_argument);  // needs 8 bins worth of padding
  s.bins.conservativeResize(2);
  CHECK_THROWS_AS(ifft_real(s, 4), std::invalid_argument);
}

TEST_CASE("relu forward") {
  Tape tape;
  VarId x = tape.leaf(Tensor::vector({-1, 0, 2}));
  VarId y = relu(tape, x);
  CHECK(tape.value(y)[0] == 0);
  CHECK(tape.value(y)[1] == 0);
  CHECK(tape.value(y)[2] == 2);
}

TEST_CASE("conv1d matches declared centered alignment") {
  Tape tape;
  VarId x = tape.leaf(Tensor({1, 1, 4}, Tensor::Storage::LinSpaced(4, 1, 4)));
  VarId w = tape.leaf(Tensor::from({1, 0, 0}, {1, 1, 3}));
  VarId b = tape.leaf(Tensor::zeros({1}));
  VarId y = conv1d(tape, x, w, b);
  // offset = 1, so y[t] = x[t-1]
  const Tensor& v = tape.value(y);
  CHECK(v.at(0, 0, 0) == 0);
  CHECK(v.at(0, 0, 1) == 1);
  CHECK(v.at(0, 0, 2) == 2);
  CHECK(v.at(0, 0, 3) == 3);
}

TEST_CASE("conv1d matches direct oracle on random data") {
  Rng rng(17);
  Tensor x = oracles::random_tensor({2, 3, 12}, rng);
  Tensor w = oracles::random_tensor({4, 3, 5}, rng);
  Tensor bias = oracles::random_tensor({4}, rng);
  Tape tape;
  VarId y = conv1d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(bias));
  const Tensor& v = tape.value(y);
  for (Index b = 0; b < 2; ++b) {
    for (Index o = 0; o < 4; ++o) {
      Eigen::VectorXd expect = Eigen::VectorXd::Constant(12, bias[o]);
      for (Index i = 0; i < 3; ++i) {
        Eigen::VectorXd xi(12), wi(5);
        for (Index t = 0; t < 12; ++t) xi[t] = x.at(b, i, t);
        for (Index j = 0; j < 5; ++j) wi[j] = w.at(o, i, j);
        expect += oracles::direct_centered_conv(wi, xi);
      }
      for (Index t = 0; t < 12; ++t) CHECK(v.at(b, o, t) == doctest::Approx(expect[t]).epsilon(1e-12));
    }
  }
}

TEST_CASE("global max pool values and gradient routing") {
  Tape tape;
  VarId x = tape.leaf(Tensor::from({1, 5, 2, 7, 0, 3}, {1, 2, 3}));
  VarId p = global_max_pool(tape, x);
  CHECK(tape.value(p).at(0, 0) == 5);
  CHECK(tape.value(p).at(0, 1) == 7);
  VarId loss = sum_all(tape, p);
  tape.backward(loss);
  const Tensor& g = tape.grad(x);
  CHECK(g.at(0, 0, 1) == 1);  // argmax positions
  CHECK(g.at(0, 1, 0) == 1);
  CHECK(g.array().sum() == 2);

  // Ties route to the first maximal index.
  Tape t2;
  VarId x2 = t2.leaf(Tensor::from({3, 3, 3}, {1, 1, 3}));
  VarId p2 = global_max_pool(t2, x2);
  t2.backward(sum_all(t2, p2));
  CHECK(t2.grad(x2).at(0, 0, 0) == 1);
  CHECK(t2.grad(x2).at(0, 0, 1) == 0);
}

TEST_CASE("product rule") {
  Tape tape;
  VarId x = tape.leaf(Tensor::scalar(2));
  VarId y = tape.leaf(Tensor::scalar(3));
  VarId z = mul(tape, x, y);
  tape.backward(sum_all(tape, z));
  CHECK(tape.grad(x)[0] == 3);
  CHECK(tape.grad(y)[0] == 2);
}

TEST_CASE("backward requires a scalar and a single pass") {
  Tape tape;
  VarId x = tape.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
  CHECK_THROWS_AS(tape.grad(x), std::runtime_error);  // before backward
  VarId s = sum_all(tape, x);
  tape.backward(s);
  CHECK(tape.grad(x)[0] == 1);
  CHECK_THROWS_AS(tape.backward(s), std::runtime_error);  // tape consumed
}

TEST_CASE("gradient of mean of relu(Wx) matches finite differences") {
  Rng rng(23);
  std::vector<Tensor> params;
  params.push_back(oracles::random_tensor({4, 4}, rng));  // W
  params.push_back(oracles::random_tensor({4, 1}, rng));  // x
  auto f = [](const std::vector<Tensor>& p) {
    Tape tape;
    VarId w = tape.leaf(p[0]);
    VarId x = tape.leaf(p[1]);
    VarId y = mean_all(tape, relu(tape, matmul(tape, w, x)));
    return tape.value(y)[0];
  };
  Tape tape;
  VarId w = tape.leaf(params[0]);
  VarId x = tape.leaf(params[1]);
  tape.backward(mean_all(tape, relu(tape, matmul(tape, w, x))));
  for (std::size_t which = 0; which < 2; ++which) {
    const Tensor& g = which == 0 ? tape.grad(w) : tape.grad(x);
    for (Index i = 0; i < g.size(); ++i) {
      const double fd = oracles::central_diff(f, params, which, i);
      CHECK(oracles::grads_close(g[i], fd));
    }
  }
}

namespace {

// Builds a scalar loss from named-leaf tensors so the same wiring can be
// evaluated (for finite differences) or differentiated (for the check).
struct PrimitiveCase {
  const char* name;
  std::vector<Tensor> params;
  std::function<VarId(Tape&, const std::vector<VarId>&)> wire;
};

std::vector<PrimitiveCase> primitive_cases(Rng& rng) {
  std::vector<PrimitiveCase> cases;
  cases.push_back({"add",
                   {oracles::random_tensor({3, 4}, rng), oracles::random_tensor({3, 4}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) { return mean_all(t, add(t, v[0], v[1])); }});
  cases.push_back({"mul",
                   {oracles::random_tensor({3, 4}, rng), oracles::random_tensor({3, 4}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) { return mean_all(t, mul(t, v[0], v[1])); }});
  cases.push_back({"matmul",
                   {oracles::random_tensor({3, 4}, rng), oracles::random_tensor({4, 2}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) {
                     return mean_all(t, matmul(t, v[0], v[1]));
                   }});
  // Keep relu inputs away from the kink so finite differences are valid.
  Tensor relu_in = oracles::random_tensor({3, 5}, rng);
  for (Index i = 0; i < relu_in.size(); ++i) {
    if (std::abs(relu_in[i]) < 0.05) relu_in[i] += 0.2;
  }
  cases.push_back({"relu",
                   {relu_in},
                   [](Tape& t, const std::vector<VarId>& v) { return mean_all(t, relu(t, v[0])); }});
  cases.push_back({"exp",
                   {oracles::random_tensor({2, 3}, rng, 0.5)},
                   [](Tape& t, const std::vector<VarId>& v) { return mean_all(t, exp_elem(t, v[0])); }});
  Tensor log_in = oracles::random_tensor({2, 3}, rng, 0.5);
  log_in.array() = log_in.array().abs() + 0.5;
  cases.push_back({"log",
                   {log_in},
                   [](Tape& t, const std::vector<VarId>& v) { return mean_all(t, log_elem(t, v[0])); }});
  cases.push_back({"conv1d",
                   {oracles::random_tensor({2, 3, 10}, rng), oracles::random_tensor({4, 3, 3}, rng),
                    oracles::random_tensor({4}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) {
                     return mean_all(t, conv1d(t, v[0], v[1], v[2]));
                   }});
  cases.push_back({"depthwise_conv1d",
                   {oracles::random_tensor({2, 3, 10}, rng), oracles::random_tensor({3, 3}, rng),
                    oracles::random_tensor({3}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) {
                     return mean_all(t, depthwise_conv1d(t, v[0], v[1], v[2]));
                   }});
  cases.push_back({"global_max_pool",
                   {oracles::random_tensor({2, 3, 8}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) {
                     return mean_all(t, global_max_pool(t, v[0]));
                   }});
  cases.push_back({"concat",
                   {oracles::random_tensor({2, 3}, rng), oracles::random_tensor({2, 4}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) {
                     return mean_all(t, concat_channels(t, {v[0], v[1]}));
                   }});
  cases.push_back({"affine",
                   {oracles::random_tensor({3, 4}, rng), oracles::random_tensor({4, 2}, rng),
                    oracles::random_tensor({2}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) {
                     return mean_all(t, affine(t, v[0], v[1], v[2]));
                   }});
  cases.push_back({"dropout",
                   {oracles::random_tensor({4, 6}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) {
                     Rng mask_rng(777);  // frozen mask, same for every evaluation
                     return mean_all(t, dropout(t, v[0], 0.4, true, mask_rng));
                   }});
  cases.push_back({"embedding",
                   {oracles::random_tensor({5, 3}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) {
                     const std::vector<std::vector<std::int32_t>> ids = {{0, 2, 4, 2}, {1, 1, 3, 0}};
                     return mean_all(t, embedding(t, v[0], ids));
                   }});
  cases.push_back({"weighted_bce",
                   {oracles::random_tensor({4}, rng)},
                   [](Tape& t, const std::vector<VarId>& v) {
                     Eigen::ArrayXd labels(4);
                     labels << 1, 0, 1, 0;
                     return weighted_bce_with_logits(t, v[0], labels, 3.5);
                   }});
  return cases;
}

}  // namespace

TEST_CASE("every primitive passes finite-difference checks at random points") {
  Rng rng(31);
  for (auto& pc : primitive_cases(rng)) {
    CAPTURE(pc.name);
    auto f = [&pc](const std::vector<Tensor>& p) {
      Tape tape;
      std::vector<VarId> leaves;
      leaves.reserve(p.size());
      for (const Tensor& t : p) leaves.push_back(tape.leaf(t));
      return tape.value(pc.wire(tape, leaves))[0];
    };
    Tape tape;
    std::vector<VarId> leaves;
    for (const Tensor& t : pc.params) leaves.push_back(tape.leaf(t));
    tape.backward(pc.wire(tape, leaves));

    Rng pick(91);
    for (std::size_t which = 0; which < pc.params.size(); ++which) {
      const Tensor& g = tape.grad(leaves[which]);
      for (int rep = 0; rep < 10; ++rep) {
        const Index i = pick.uniform_int(g.size());
        const double fd = oracles::central_diff(f, pc.params, which, i);
        CAPTURE(which);
        CAPTURE(i);
        CHECK(oracles::grads_close(g[i], fd));
      }
    }
  }
}

TEST_CASE("dropout eval is identity, train mean preserves input") {
  Rng rng(3);
  Tensor x = oracles::random_tensor({2, 5}, rng);
  Tape tape;
  VarId xi = tape.leaf(x);
  Rng unused(1);
  VarId y = dropout(tape, xi, 0.5, false, unused);
  CHECK(y == xi);  // identity node, not a copy

  // Train mode: E[mask scaled] = 1 within 2% over 1e4 masks.
  const double p = 0.3;
  Rng mask_rng(1234);
  double acc = 0.0;
  const int reps = 10000;
  for (int r = 0; r < reps; ++r) {
    Tape t2;
    VarId x2 = t2.leaf(Tensor::scalar(1.0));
    acc += t2.value(dropout(t2, x2, p, true, mask_rng))[0];
  }
  CHECK(std::abs(acc / reps - 1.0) < 0.02);
}

TEST_CASE("ops are deterministic per seed") {
  auto run = [] {
    Rng rng(55);
    Tensor x = oracles::random_tensor({2, 3, 8}, rng);
    Tensor w = oracles::random_tensor({2, 3, 3}, rng);
    Tensor b = oracles::random_tensor({2}, rng);
    Tape tape;
    Rng drop(9);
    VarId y = dropout(tape, conv1d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(b)), 0.25, true, drop);
    return tape.value(y);
  };
  const Tensor a = run();
  const Tensor b = run();
  REQUIRE(a.size() == b.size());
  for (Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("shape mismatches name both shapes") {
  Tape tape;
  VarId a = tape.leaf(Tensor::zeros({2, 3}));
  VarId b = tape.leaf(Tensor::zeros({3, 3}));
  CHECK_THROWS_WITH_AS(add(tape, a, b), doctest::Contains("[2,3]"), std::invalid_argument);
  VarId x = tape.leaf(Tensor::zeros({1, 2, 8}));
  VarId w = tape.leaf(Tensor::zeros({4, 3, 3}));
  VarId bias = tape.leaf(Tensor::zeros({4}));
  CHECK_THROWS_WITH_AS(conv1d(tape, x, w, bias), doctest::Contains("[4,3,3]"),
                       std::invalid_argument);
}

TEST_CASE("adam closed forms") {
  // Zero gradient with fresh state: no movement at all.
  Tensor p = Tensor::scalar(1.5);
  AdamState st = AdamState::like({&p});
  adam_step({&p}, {Tensor::scalar(0.0)}, st, {});
  CHECK(p[0] == 1.5);
  CHECK(st.step == 1);

  // Single scalar, g = 1, t = 1: bias-corrected step is -lr.
  Tensor q = Tensor::scalar(0.0);
  AdamState st2 = AdamState::like({&q});
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step({&q}, {Tensor::scalar(1.0)}, st2, cfg);
  CHECK(q[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam drives x^2 toward zero") {
  Tensor x = Tensor::scalar(1.0);
  AdamState st = AdamState::like({&x});
  AdamConfig cfg;
  cfg.lr = 0.1;
  for (int t = 0; t < 100; ++t) {
    adam_step({&x}, {Tensor::scalar(2.0 * x[0])}, st, cfg);
  }
  CHECK(std::abs(x[0]) < 0.05);
}

TEST_CASE("adam rejects non-finite gradients") {
  Tensor p = Tensor::scalar(1.0);
  AdamState st = AdamState::like({&p});
  CHECK_THROWS_WITH_AS(
      adam_step({&p}, {Tensor::scalar(std::numeric_limits<double>::quiet_NaN())}, st, {}),
      "diverged", std::runtime_error);
}
