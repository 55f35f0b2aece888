#include "ssmlab/s4d.hpp"

#include <cmath>
#include <complex>
#include <memory>
#include <stdexcept>
#include <vector>

#include "ssmlab/fft.hpp"

namespace ssmlab {

namespace {

constexpr double kZohGuard = 1e-8;  // |a*dt| below this uses the first-order limit

using Cplx = std::complex<double>;

Eigen::ArrayXd timescale_of(const Eigen::ArrayXd& log_timescale) {
  return log_timescale.exp();
}

}  // namespace

DiagonalSsmParams init_s4d(Index channels, Index state_size, double dt_min, double dt_max,
                           Rng rng) {
  if (channels < 1 || state_size < 1) {
    throw std::invalid_argument("init_s4d: channels and state_size must be >= 1");
  }
  if (!(dt_min > 0.0) || !(dt_min < dt_max) || !(dt_max <= 1.0)) {
    throw std::invalid_argument("init_s4d: need 0 < dt_min < dt_max <= 1, got [" +
                                std::to_string(dt_min) + ", " + std::to_string(dt_max) + "]");
  }
  DiagonalSsmParams p;
  p.channels = channels;
  p.state_size = state_size;
  p.eigenvalues.resize(channels, state_size);
  p.input_proj = Eigen::ArrayXXcd::Constant(channels, state_size, Cplx(1.0, 0.0));
  p.output_proj.resize(channels, state_size);
  p.log_timescale.resize(channels);
  p.skip_gain = Eigen::ArrayXd::Ones(channels);

  Rng c_rng = rng.split("output_proj");
  Rng dt_rng = rng.split("log_timescale");
  const double sigma = 1.0 / std::sqrt(2.0 * static_cast<double>(state_size));
  for (Index h = 0; h < channels; ++h) {
    for (Index n = 0; n < state_size; ++n) {
      p.eigenvalues(h, n) = Cplx(-0.5, M_PI * static_cast<double>(n));
      p.output_proj(h, n) = Cplx(sigma * c_rng.gaussian(), sigma * c_rng.gaussian());
    }
    p.log_timescale[h] = dt_rng.uniform(std::log(dt_min), std::log(dt_max));
  }
  return p;
}

Discretized discretize_zoh(const Eigen::ArrayXXcd& eigenvalues, const Eigen::ArrayXXcd& input_proj,
                           const Eigen::ArrayXd& timescale) {
  if (eigenvalues.rows() != input_proj.rows() || eigenvalues.cols() != input_proj.cols() ||
      eigenvalues.rows() != timescale.size()) {
    throw std::invalid_argument("discretize_zoh: parameter extents disagree");
  }
  if ((timescale <= 0.0).any()) {
    throw std::invalid_argument("discretize_zoh: timescale must be positive");
  }
  Discretized d;
  d.a_bar.resize(eigenvalues.rows(), eigenvalues.cols());
  d.b_bar.resize(eigenvalues.rows(), eigenvalues.cols());
  for (Index h = 0; h < eigenvalues.rows(); ++h) {
    const double dt = timescale[h];
    for (Index n = 0; n < eigenvalues.cols(); ++n) {
      const Cplx a = eigenvalues(h, n);
      const Cplx b = input_proj(h, n);
      const Cplx a_bar = std::exp(dt * a);
      d.a_bar(h, n) = a_bar;
      if (std::abs(a * dt) < kZohGuard) {
        d.b_bar(h, n) = dt * b;  // limit of (e^{dt a}-1)/a as dt*a -> 0
      } else {
        d.b_bar(h, n) = ((a_bar - 1.0) / a) * b;
      }
    }
  }
  return d;
}

Kernel materialize_kernel(const DiagonalSsmParams& params, Index length) {
  if (length < 1) throw std::invalid_argument("materialize_kernel: length must be >= 1");
  const Discretized d =
      discretize_zoh(params.eigenvalues, params.input_proj, timescale_of(params.log_timescale));
  Kernel k;
  k.channels = params.channels;
  k.length = length;
  k.values = Eigen::ArrayXXd::Zero(params.channels, length);
  for (Index h = 0; h < params.channels; ++h) {
    for (Index n = 0; n < params.state_size; ++n) {
      const Cplx a_bar = d.a_bar(h, n);
      Cplx term = params.output_proj(h, n) * d.b_bar(h, n);  // c * b_bar * a_bar^0
      for (Index l = 0; l < length; ++l) {
        k.values(h, l) += 2.0 * term.real();
        term *= a_bar;
      }
    }
  }
  if (!k.values.isFinite().all()) throw std::runtime_error("materialize_kernel: non-finite kernel");
  return k;
}

Eigen::ArrayXXd causal_convolve_rows(const Eigen::ArrayXXd& kernel, const Eigen::ArrayXXd& rows) {
  if (kernel.rows() != rows.rows()) {
    throw std::invalid_argument("causal_convolve_rows: row count mismatch");
  }
  const Index n = rows.rows();
  const Index len = rows.cols();
  const Index conv_len = len + kernel.cols();  // zero-pad past the linear-convolution tail
  Eigen::ArrayXXd out(n, len);
  Eigen::VectorXd buf = Eigen::VectorXd::Zero(conv_len);
  for (Index r = 0; r < n; ++r) {
    buf.setZero();
    buf.head(kernel.cols()) = kernel.row(r).matrix().transpose();
    const Spectrum kf = fft_real(buf);
    buf.setZero();
    buf.head(len) = rows.row(r).matrix().transpose();
    Spectrum uf = fft_real(buf);
    uf.bins.array() *= kf.bins.array();
    out.row(r) = ifft_real(uf, len).transpose();
  }
  return out;
}

Tensor s4d_forward(const DiagonalSsmParams& params, const Tensor& input) {
  require_rank(input, 3, "s4d_forward");
  if (input.dim(1) != params.channels) {
    throw std::invalid_argument("s4d_forward: input has " + std::to_string(input.dim(1)) +
                                " channels, params have " + std::to_string(params.channels));
  }
  const Index batch = input.dim(0), ch = input.dim(1), len = input.dim(2);
  const Kernel k = materialize_kernel(params, len);
  Tensor out({batch, ch, len});
  Eigen::ArrayXXd rows(ch, len);
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < ch; ++h) {
      rows.row(h) = Eigen::Map<const Eigen::ArrayXd>(input.data() + (b * ch + h) * len, len);
    }
    const Eigen::ArrayXXd y = causal_convolve_rows(k.values, rows);
    for (Index h = 0; h < ch; ++h) {
      Eigen::Map<Eigen::ArrayXd>(out.data() + (b * ch + h) * len, len) =
          y.row(h) + params.skip_gain[h] * rows.row(h);
    }
  }
  return out;
}

VarId s4d_kernel(Tape& tape, VarId c_re, VarId c_im, VarId log_timescale,
                 const Eigen::ArrayXXcd& eigenvalues, const Eigen::ArrayXXcd& input_proj,
                 Index length) {
  const Tensor& vre = tape.value(c_re);
  const Tensor& vim = tape.value(c_im);
  const Tensor& vdt = tape.value(log_timescale);
  const Index ch = eigenvalues.rows(), modes = eigenvalues.cols();
  if (vre.rank() != 2 || vre.dim(0) != ch || vre.dim(1) != modes || !vre.same_shape(vim)) {
    throw std::invalid_argument("s4d_kernel: output_proj shape " + shape_to_string(vre.shape()) +
                                " does not match " + std::to_string(ch) + "x" +
                                std::to_string(modes) + " modes");
  }
  if (vdt.size() != ch) {
    throw std::invalid_argument("s4d_kernel: log_timescale shape " + shape_to_string(vdt.shape()) +
                                " does not match " + std::to_string(ch) + " channels");
  }
  if (length < 1) throw std::invalid_argument("s4d_kernel: length must be >= 1");

  Eigen::ArrayXd dt(ch);
  for (Index h = 0; h < ch; ++h) {
    dt[h] = std::exp(vdt[h]);
    // exp under/overflow means log_timescale has left the representable range
    if (!std::isfinite(dt[h]) || dt[h] <= 0.0) {
      throw std::runtime_error("s4d_kernel: timescale diverged in channel " + std::to_string(h));
    }
  }
  const Discretized d = discretize_zoh(eigenvalues, input_proj, dt);

  Tensor out({ch, length});
  for (Index h = 0; h < ch; ++h) {
    for (Index n = 0; n < modes; ++n) {
      const Cplx c(vre.at(h, n), vim.at(h, n));
      const Cplx a_bar = d.a_bar(h, n);
      Cplx term = c * d.b_bar(h, n);
      for (Index l = 0; l < length; ++l) {
        out.at(h, l) += 2.0 * term.real();
        term *= a_bar;
      }
    }
  }
  require_finite(out, "s4d_kernel");

  Eigen::ArrayXXcd eig = eigenvalues;
  Eigen::ArrayXXcd in_proj = input_proj;
  return tape.record(std::move(out), [c_re, c_im, log_timescale, eig = std::move(eig),
                                      in_proj = std::move(in_proj), ch, modes,
                                      length](Tape& t, VarId self) {
    const Tensor& gk = t.grad(self);  // H x L
    const Tensor& vre = t.value(c_re);
    const Tensor& vim = t.value(c_im);
    const Tensor& vdt = t.value(log_timescale);
    Eigen::ArrayXd dt(ch);
    for (Index h = 0; h < ch; ++h) dt[h] = std::exp(vdt[h]);
    const Discretized d = discretize_zoh(eig, in_proj, dt);

    Tensor dre({ch, modes}), dim({ch, modes}), ddt({ch});
    for (Index h = 0; h < ch; ++h) {
      double dlog_acc = 0.0;
      for (Index n = 0; n < modes; ++n) {
        const Cplx a = eig(h, n);
        const Cplx b = in_proj(h, n);
        const Cplx a_bar = d.a_bar(h, n);
        const Cplx b_bar = d.b_bar(h, n);
        const Cplx c(vre.at(h, n), vim.at(h, n));
        const bool guard = std::abs(a * dt[h]) < kZohGuard;
        Cplx pow(1.0, 0.0);  // a_bar^l
        double acc_re = 0.0, acc_im = 0.0;
        for (Index l = 0; l < length; ++l) {
          const double g = gk.at(h, l);
          const Cplx big = b_bar * pow;  // b_bar * a_bar^l
          acc_re += g * 2.0 * big.real();
          acc_im += g * -2.0 * big.imag();
          // d(b_bar * a_bar^l)/d dt
          const Cplx dd = guard ? b * pow + dt[h] * b * static_cast<double>(l) * a * pow
                                : b * a_bar * pow + b_bar * static_cast<double>(l) * a * pow;
          dlog_acc += g * 2.0 * (c * dd).real();
          pow *= a_bar;
        }
        dre.at(h, n) = acc_re;
        dim.at(h, n) = acc_im;
      }
      ddt[h] = dlog_acc * dt[h];  // chain through timescale = exp(log_timescale)
    }
    t.accumulate(c_re, dre);
    t.accumulate(c_im, dim);
    t.accumulate(log_timescale, ddt);
  });
}

VarId s4d_convolve(Tape& tape, VarId input, VarId kernel, VarId skip) {
  const Tensor& vu = tape.value(input);
  const Tensor& vk = tape.value(kernel);
  const Tensor& vs = tape.value(skip);
  require_rank(vu, 3, "s4d_convolve input");
  require_rank(vk, 2, "s4d_convolve kernel");
  if (vu.dim(1) != vk.dim(0) || vs.size() != vk.dim(0)) {
    throw std::invalid_argument("s4d_convolve: channel mismatch input " +
                                shape_to_string(vu.shape()) + " vs kernel " +
                                shape_to_string(vk.shape()));
  }
  if (vu.dim(2) != vk.dim(1)) {
    throw std::invalid_argument("s4d_convolve: length mismatch input " +
                                shape_to_string(vu.shape()) + " vs kernel " +
                                shape_to_string(vk.shape()));
  }
  const Index batch = vu.dim(0), ch = vu.dim(1), len = vu.dim(2);
  const Index conv_len = 2 * len;

  // Kernel spectra once per channel; input spectra saved for backward.
  std::vector<Spectrum> kf(static_cast<std::size_t>(ch));
  Eigen::VectorXd buf = Eigen::VectorXd::Zero(conv_len);
  for (Index h = 0; h < ch; ++h) {
    buf.setZero();
    buf.head(len) = Eigen::Map<const Eigen::VectorXd>(vk.data() + h * len, len);
    kf[static_cast<std::size_t>(h)] = fft_real(buf);
  }
  auto uf = std::make_shared<std::vector<Spectrum>>(static_cast<std::size_t>(batch * ch));
  Tensor out({batch, ch, len});
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < ch; ++h) {
      buf.setZero();
      buf.head(len) = Eigen::Map<const Eigen::VectorXd>(vu.data() + (b * ch + h) * len, len);
      Spectrum& u_spec = (*uf)[static_cast<std::size_t>(b * ch + h)];
      u_spec = fft_real(buf);
      Spectrum prod = u_spec;
      prod.bins.array() *= kf[static_cast<std::size_t>(h)].bins.array();
      const Eigen::VectorXd y = ifft_real(prod, len);
      double* o = out.data() + (b * ch + h) * len;
      const double* u_row = vu.data() + (b * ch + h) * len;
      const double s = vs[h];
      for (Index t = 0; t < len; ++t) o[t] = y[t] + s * u_row[t];
    }
  }

  return tape.record(std::move(out), [input, kernel, skip, kf = std::move(kf), uf, batch, ch, len,
                                      conv_len](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    const Tensor& vu = t.value(input);
    const Tensor& vs = t.value(skip);
    Tensor du(vu.shape()), dk(t.value(kernel).shape()), ds(vs.shape());
    Eigen::VectorXd buf = Eigen::VectorXd::Zero(conv_len);
    const Index bins = kf.front().bins.size();
    Eigen::VectorXcd acc(bins);
    std::vector<Spectrum> gf(static_cast<std::size_t>(batch));
    for (Index h = 0; h < ch; ++h) {
      acc.setZero();
      const double s = vs[h];
      double ds_acc = 0.0;
      for (Index b = 0; b < batch; ++b) {
        const double* g_row = g.data() + (b * ch + h) * len;
        const double* u_row = vu.data() + (b * ch + h) * len;
        buf.setZero();
        buf.head(len) = Eigen::Map<const Eigen::VectorXd>(g_row, len);
        Spectrum& gspec = gf[static_cast<std::size_t>(b)];
        gspec = fft_real(buf);
        const Spectrum& uspec = (*uf)[static_cast<std::size_t>(b * ch + h)];
        // dK accumulates sum_b corr(g, u) in the frequency domain.
        acc.array() += gspec.bins.array() * uspec.bins.conjugate().array();
        for (Index tt = 0; tt < len; ++tt) ds_acc += g_row[tt] * u_row[tt];
      }
      Spectrum dk_spec{acc, kf.front().padded_length, conv_len};
      const Eigen::VectorXd dk_row = ifft_real(dk_spec, len);
      for (Index l = 0; l < len; ++l) dk.at(h, l) = dk_row[l];
      ds[h] = ds_acc;
      // dU = corr(g, K) + skip * g per example.
      for (Index b = 0; b < batch; ++b) {
        Spectrum du_spec = gf[static_cast<std::size_t>(b)];
        du_spec.bins.array() *= kf[static_cast<std::size_t>(h)].bins.conjugate().array();
        const Eigen::VectorXd du_row = ifft_real(du_spec, len);
        double* d = du.data() + (b * ch + h) * len;
        const double* g_row = g.data() + (b * ch + h) * len;
        for (Index tt = 0; tt < len; ++tt) d[tt] = du_row[tt] + s * g_row[tt];
      }
    }
    t.accumulate(input, du);
    t.accumulate(kernel, dk);
    t.accumulate(skip, ds);
  });
}

}  // namespace ssmlab
