#pragma once

#include <Eigen/Dense>

#include "ssmlab/rng.hpp"
#include "ssmlab/tape.hpp"
#include "ssmlab/tensor.hpp"

namespace ssmlab {

/// Diagonal state-space parameterization, one independent SISO system per
/// channel. Only the upper-half-plane modes are stored; realness of the
/// kernel comes from the 2*Re(.) in materialization. The eigenvalues are
/// frozen after initialization; output_proj, log_timescale and skip_gain
/// train.
struct DiagonalSsmParams {
  Index channels = 0;    // H
  Index state_size = 0;  // N per channel
  Eigen::ArrayXXcd eigenvalues;   // H x N, Re < 0, frozen
  Eigen::ArrayXXcd input_proj;    // H x N, fixed at 1+0i
  Eigen::ArrayXXcd output_proj;   // H x N, trainable
  Eigen::ArrayXd log_timescale;   // H, trainable; timescale = exp(log_timescale) in (0, 1]
  Eigen::ArrayXd skip_gain;       // H, trainable
};

/// Materialized impulse response, one row per channel.
struct Kernel {
  Index channels = 0;
  Index length = 0;
  Eigen::ArrayXXd values;  // H x L
};

/// Linear initialization: eigenvalue n is -1/2 + i*pi*n, input_proj = 1,
/// output_proj complex Gaussian with per-component std 1/sqrt(2N),
/// log_timescale uniform in [log dt_min, log dt_max], skip_gain = 1.
DiagonalSsmParams init_s4d(Index channels, Index state_size, double dt_min, double dt_max, Rng rng);

struct Discretized {
  Eigen::ArrayXXcd a_bar;  // exp(dt * a), |a_bar| < 1 when Re(a) < 0
  Eigen::ArrayXXcd b_bar;  // ((a_bar - 1) / a) * b, or dt * b near a = 0
};

/// Zero-order-hold discretization, elementwise over channels and modes.
Discretized discretize_zoh(const Eigen::ArrayXXcd& eigenvalues, const Eigen::ArrayXXcd& input_proj,
                           const Eigen::ArrayXd& timescale);

/// K_h[l] = 2 * Re( sum_n output_proj[h,n] * b_bar[h,n] * a_bar[h,n]^l ).
Kernel materialize_kernel(const DiagonalSsmParams& params, Index length);

/// y_h = (K_h * u_h) + skip_h * u_h, causal linear convolution via FFT on
/// length-2L padding. u: B x H x L. Pure; used for inference and tests.
Tensor s4d_forward(const DiagonalSsmParams& params, const Tensor& input);

/// Causal convolution of each kernel row with each input row, truncated to
/// the input length. kernel: H x L', input rows length L; output length L.
Eigen::ArrayXXd causal_convolve_rows(const Eigen::ArrayXXd& kernel, const Eigen::ArrayXXd& rows);

// ---- tape ops for the training path ---------------------------------------

/// Kernel materialization as a differentiable node. c_re/c_im: H x N,
/// log_timescale: H. The frozen eigenvalues/input_proj enter as constants.
VarId s4d_kernel(Tape& tape, VarId c_re, VarId c_im, VarId log_timescale,
                 const Eigen::ArrayXXcd& eigenvalues, const Eigen::ArrayXXcd& input_proj,
                 Index length);

/// FFT-path causal convolution plus skip: u: B x H x L, kernel: H x L,
/// skip: H. Gradients flow to all three inputs.
VarId s4d_convolve(Tape& tape, VarId input, VarId kernel, VarId skip);

}  // namespace ssmlab
