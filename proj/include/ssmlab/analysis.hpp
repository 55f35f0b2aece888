#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "ssmlab/tensor.hpp"

namespace ssmlab {

/// Time-domain profile of one kernel row: extrema and abrupt first-difference
/// steps.
struct TimeProfile {
  Index length = 0;
  double max_pos_amplitude = 0.0;
  Index max_pos_position = 0;
  double max_neg_amplitude = 0.0;
  Index max_neg_position = 0;
  // (index l, K[l+1] - K[l]) where |diff| exceeds mean + k*std of all |diff|.
  std::vector<std::pair<Index, double>> sharp_transitions;
};

/// One-sided normalized power spectrum of one kernel row.
struct SpectrumProfile {
  Eigen::ArrayXd frequencies;  // m / padded_length, in cycles/sample, [0, 0.5]
  Eigen::ArrayXd psd;          // sums to 1
  double dominant_frequency = 0.0;
  double dominant_power = 0.0;
  Index dominant_bin = 0;
  std::vector<std::pair<double, double>> secondary_peaks;  // (freq, power), power desc
  std::vector<Index> secondary_bins;
  double entropy = 0.0;  // nats
};

struct ChannelProfile {
  TimeProfile time;
  SpectrumProfile spectrum;
};

/// Filter-class decision thresholds. Kept as data so reports can state what
/// rule produced a label.
struct FilterRule {
  double low_cut = 0.05;           // cycles/sample
  double high_cut = 0.35;          // cycles/sample
  double mass_fraction = 0.5;      // cumulative-power share required beyond a cut
  double broadband_entropy = 0.85; // fraction of ln(bins)
};

struct AnalysisConfig {
  double sharpness_k = 2.0;         // transitions beyond mean + k*std of |diff|
  double secondary_threshold = 0.30;  // fraction of dominant power
  FilterRule filter;
};

/// Full analysis of a multi-channel kernel stack (rows = channels).
struct KernelReport {
  std::string arch;
  std::string checkpoint;
  Index channels = 0;
  Index length = 0;
  std::vector<ChannelProfile> per_channel;
  // (a) profile of the energy-weighted mean kernel, weights w_h ~ ||K_h||^2.
  ChannelProfile weighted_mean;
  // (b) mean of per-channel PSDs, renormalized; the headline label and the
  // reported dominant frequency/entropy come from this aggregate.
  SpectrumProfile mean_psd;
  std::string filter_class;
  AnalysisConfig config;
};

TimeProfile time_profile(const Eigen::VectorXd& kernel, double sharpness_k = 2.0);

/// P(f_m) = |K^(f_m)|^2 / sum |K^|^2 over the one-sided spectrum of the
/// kernel zero-padded to the next power of two. Throws on all-zero input.
SpectrumProfile spectrum(const Eigen::VectorXd& kernel, double secondary_threshold = 0.30);

/// H = -sum P log P, natural log, 0 log 0 = 0. Throws if |sum P - 1| > 1e-6.
double spectral_entropy(const Eigen::ArrayXd& psd);

/// dominant = argmax (lowest index on ties); secondary = strict local maxima
/// excluding DC and the dominant bin, with power >= threshold * dominant.
std::pair<Index, std::vector<Index>> dominant_and_secondary(const Eigen::ArrayXd& psd,
                                                            double threshold = 0.30);

std::string classify_filter(const SpectrumProfile& profile, const FilterRule& rule = {});

/// Energy-weighted mean of the rows, weights w_h ~ ||K_h||^2. Throws on an
/// all-zero row.
Eigen::VectorXd weighted_mean_kernel(const Eigen::ArrayXXd& kernels);

/// Analyze a kernel stack: per-channel profiles plus both aggregates.
KernelReport analyze_kernels(const Eigen::ArrayXXd& kernels, const AnalysisConfig& config = {});

// ---- report serialization --------------------------------------------------

std::string report_to_json(const KernelReport& report);

/// index,value,is_pos_peak,is_neg_peak,is_sharp_transition for the
/// energy-weighted mean kernel.
std::string time_response_csv(const Eigen::VectorXd& kernel, const TimeProfile& profile);

/// freq,psd,is_dominant,is_secondary for the mean-PSD aggregate.
std::string spectrum_csv(const SpectrumProfile& profile);

}  // namespace ssmlab
