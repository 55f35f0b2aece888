#include "ssmlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ssmlab/fft.hpp"

namespace ssmlab {

namespace {

// Fixed-width round-trip formatting keeps report files byte-stable.
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TimeProfile time_profile(const Eigen::VectorXd& kernel, double sharpness_k) {
  const Index len = kernel.size();
  if (len < 2) {
    throw std::invalid_argument("time_profile: kernel length " + std::to_string(len) +
                                " is too short (need >= 2)");
  }
  TimeProfile p;
  p.length = len;
  p.max_pos_amplitude = kernel.maxCoeff(&p.max_pos_position);
  p.max_neg_amplitude = kernel.minCoeff(&p.max_neg_position);

  Eigen::VectorXd diffs = kernel.tail(len - 1) - kernel.head(len - 1);
  const Eigen::VectorXd mags = diffs.cwiseAbs();
  const double mean = mags.mean();
  const double var = (mags.array() - mean).square().mean();
  const double threshold = mean + sharpness_k * std::sqrt(var);
  for (Index l = 0; l < diffs.size(); ++l) {
    if (mags[l] > threshold) p.sharp_transitions.emplace_back(l, diffs[l]);
  }
  return p;
}

double spectral_entropy(const Eigen::ArrayXd& psd) {
  const double total = psd.sum();
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("spectral_entropy: PSD sums to " + fmt(total) +
                                ", expected 1 within 1e-6");
  }
  double h = 0.0;
  for (Index m = 0; m < psd.size(); ++m) {
    if (psd[m] > 0.0) h -= psd[m] * std::log(psd[m]);
  }
  return h;
}

std::pair<Index, std::vector<Index>> dominant_and_secondary(const Eigen::ArrayXd& psd,
                                                            double threshold) {
  Index dominant = 0;
  for (Index m = 1; m < psd.size(); ++m) {
    if (psd[m] > psd[dominant]) dominant = m;  // lowest index wins ties
  }
  std::vector<Index> secondary;
  const double gate = threshold * psd[dominant];
  for (Index m = 1; m + 1 < psd.size(); ++m) {
    if (m == dominant) continue;
    if (psd[m] > psd[m - 1] && psd[m] > psd[m + 1] && psd[m] >= gate) secondary.push_back(m);
  }
  std::stable_sort(secondary.begin(), secondary.end(),
                   [&psd](Index a, Index b) { return psd[a] > psd[b]; });
  return {dominant, std::move(secondary)};
}

SpectrumProfile spectrum(const Eigen::VectorXd& kernel, double secondary_threshold) {
  if (kernel.size() < 2) {
    throw std::invalid_argument("spectrum: kernel length " + std::to_string(kernel.size()) +
                                " is too short (need >= 2)");
  }
  const Spectrum spec = fft_real(kernel);
  SpectrumProfile p;
  const Index bins = spec.bins.size();
  p.frequencies.resize(bins);
  p.psd.resize(bins);
  for (Index m = 0; m < bins; ++m) {
    p.frequencies[m] = spec.frequency(m);
    p.psd[m] = std::norm(spec.bins[m]);
  }
  const double energy = p.psd.sum();
  if (energy <= 0.0) throw std::invalid_argument("zero-energy kernel");
  p.psd /= energy;
  p.entropy = spectral_entropy(p.psd);
  auto [dom, sec] = dominant_and_secondary(p.psd, secondary_threshold);
  p.dominant_bin = dom;
  p.dominant_frequency = p.frequencies[dom];
  p.dominant_power = p.psd[dom];
  p.secondary_bins = std::move(sec);
  for (Index m : p.secondary_bins) p.secondary_peaks.emplace_back(p.frequencies[m], p.psd[m]);
  return p;
}

std::string classify_filter(const SpectrumProfile& profile, const FilterRule& rule) {
  const Index bins = profile.psd.size();
  double low_mass = 0.0, high_mass = 0.0;
  for (Index m = 0; m < bins; ++m) {
    if (profile.frequencies[m] < rule.low_cut) low_mass += profile.psd[m];
    if (profile.frequencies[m] > rule.high_cut) high_mass += profile.psd[m];
  }
  if (profile.dominant_frequency < rule.low_cut && low_mass >= rule.mass_fraction)
    return "low-pass";
  if (profile.dominant_frequency > rule.high_cut && high_mass >= rule.mass_fraction)
    return "high-pass";
  if (profile.entropy >= rule.broadband_entropy * std::log(static_cast<double>(bins)))
    return "broadband";
  return "band-pass";
}

Eigen::VectorXd weighted_mean_kernel(const Eigen::ArrayXXd& kernels) {
  const Index channels = kernels.rows(), len = kernels.cols();
  Eigen::ArrayXd weights(channels);
  for (Index h = 0; h < channels; ++h) {
    const double energy = kernels.row(h).matrix().squaredNorm();
    if (energy == 0.0) {
      throw std::invalid_argument("zero-energy kernel in channel " + std::to_string(h));
    }
    weights[h] = energy;
  }
  weights /= weights.sum();

  Eigen::VectorXd mean_kernel = Eigen::VectorXd::Zero(len);
  for (Index h = 0; h < channels; ++h) {
    mean_kernel += weights[h] * kernels.row(h).matrix().transpose();
  }
  return mean_kernel;
}

KernelReport analyze_kernels(const Eigen::ArrayXXd& kernels, const AnalysisConfig& config) {
  const Index channels = kernels.rows(), len = kernels.cols();
  if (channels < 1 || len < 2) {
    throw std::invalid_argument("analyze_kernels: need at least one channel of length >= 2, got " +
                                std::to_string(channels) + " x " + std::to_string(len));
  }
  KernelReport report;
  report.channels = channels;
  report.length = len;
  report.config = config;

  const Eigen::VectorXd mean_kernel = weighted_mean_kernel(kernels);
  for (Index h = 0; h < channels; ++h) {
    const Eigen::VectorXd row = kernels.row(h).matrix().transpose();
    ChannelProfile cp;
    cp.time = time_profile(row, config.sharpness_k);
    cp.spectrum = spectrum(row, config.secondary_threshold);
    report.per_channel.push_back(std::move(cp));
  }
  report.weighted_mean.time = time_profile(mean_kernel, config.sharpness_k);
  report.weighted_mean.spectrum = spectrum(mean_kernel, config.secondary_threshold);

  // Mean of the per-channel PSDs, renormalized. Each per-channel PSD sums to
  // one already; renormalization guards the floating-point residue.
  const Index bins = report.per_channel.front().spectrum.psd.size();
  SpectrumProfile mean_psd;
  mean_psd.frequencies = report.per_channel.front().spectrum.frequencies;
  mean_psd.psd = Eigen::ArrayXd::Zero(bins);
  for (const ChannelProfile& cp : report.per_channel) mean_psd.psd += cp.spectrum.psd;
  mean_psd.psd /= mean_psd.psd.sum();
  mean_psd.entropy = spectral_entropy(mean_psd.psd);
  auto [dom, sec] = dominant_and_secondary(mean_psd.psd, config.secondary_threshold);
  mean_psd.dominant_bin = dom;
  mean_psd.dominant_frequency = mean_psd.frequencies[dom];
  mean_psd.dominant_power = mean_psd.psd[dom];
  mean_psd.secondary_bins = std::move(sec);
  for (Index m : mean_psd.secondary_bins) {
    mean_psd.secondary_peaks.emplace_back(mean_psd.frequencies[m], mean_psd.psd[m]);
  }
  report.mean_psd = std::move(mean_psd);

  report.filter_class = classify_filter(report.mean_psd, config.filter);
  return report;
}

namespace {

using nlohmann::json;

json time_to_json(const TimeProfile& t) {
  json j;
  j["length"] = t.length;
  j["max_pos"] = {{"value", t.max_pos_amplitude}, {"index", t.max_pos_position}};
  j["max_neg"] = {{"value", t.max_neg_amplitude}, {"index", t.max_neg_position}};
  json trans = json::array();
  for (const auto& [idx, diff] : t.sharp_transitions) {
    trans.push_back({{"index", idx}, {"diff", diff}});
  }
  j["sharp_transitions"] = std::move(trans);
  return j;
}

json spectrum_to_json(const SpectrumProfile& s, bool include_psd) {
  json j;
  j["entropy"] = s.entropy;
  j["dominant"] = {{"frequency", s.dominant_frequency},
                   {"power", s.dominant_power},
                   {"bin", s.dominant_bin}};
  json sec = json::array();
  for (const auto& [freq, power] : s.secondary_peaks) {
    sec.push_back({{"frequency", freq}, {"power", power}});
  }
  j["secondary"] = std::move(sec);
  if (include_psd) {
    j["psd"] = std::vector<double>(s.psd.data(), s.psd.data() + s.psd.size());
  }
  return j;
}

}  // namespace

std::string report_to_json(const KernelReport& report) {
  json j;
  j["arch"] = report.arch;
  j["checkpoint"] = report.checkpoint;
  j["channels"] = report.channels;
  j["length"] = report.length;
  j["filter_class"] = report.filter_class;
  j["config"] = {{"sharpness_k", report.config.sharpness_k},
                 {"secondary_threshold", report.config.secondary_threshold},
                 {"filter",
                  {{"low_cut", report.config.filter.low_cut},
                   {"high_cut", report.config.filter.high_cut},
                   {"mass_fraction", report.config.filter.mass_fraction},
                   {"broadband_entropy", report.config.filter.broadband_entropy}}}};
  const Eigen::ArrayXd& f = report.mean_psd.frequencies;
  j["frequencies"] = std::vector<double>(f.data(), f.data() + f.size());
  j["aggregate"] = {
      {"weighted_mean_kernel",
       {{"time", time_to_json(report.weighted_mean.time)},
        {"spectrum", spectrum_to_json(report.weighted_mean.spectrum, true)}}},
      {"mean_psd", spectrum_to_json(report.mean_psd, true)}};
  json channels = json::array();
  for (const ChannelProfile& cp : report.per_channel) {
    channels.push_back(
        {{"time", time_to_json(cp.time)}, {"spectrum", spectrum_to_json(cp.spectrum, true)}});
  }
  j["per_channel"] = std::move(channels);
  return j.dump(2) + "\n";
}

std::string time_response_csv(const Eigen::VectorXd& kernel, const TimeProfile& profile) {
  std::ostringstream os;
  os << "index,value,is_pos_peak,is_neg_peak,is_sharp_transition\n";
  std::vector<char> sharp(static_cast<std::size_t>(kernel.size()), 0);
  for (const auto& [idx, diff] : profile.sharp_transitions) {
    sharp[static_cast<std::size_t>(idx)] = 1;
  }
  for (Index l = 0; l < kernel.size(); ++l) {
    os << l << ',' << fmt(kernel[l]) << ',' << (l == profile.max_pos_position ? 1 : 0) << ','
       << (l == profile.max_neg_position ? 1 : 0) << ','
       << static_cast<int>(sharp[static_cast<std::size_t>(l)]) << '\n';
  }
  return os.str();
}

std::string spectrum_csv(const SpectrumProfile& profile) {
  std::ostringstream os;
  os << "freq,psd,is_dominant,is_secondary\n";
  std::vector<char> secondary(static_cast<std::size_t>(profile.psd.size()), 0);
  for (Index m : profile.secondary_bins) secondary[static_cast<std::size_t>(m)] = 1;
  for (Index m = 0; m < profile.psd.size(); ++m) {
    os << fmt(profile.frequencies[m]) << ',' << fmt(profile.psd[m]) << ','
       << (m == profile.dominant_bin ? 1 : 0) << ','
       << static_cast<int>(secondary[static_cast<std::size_t>(m)]) << '\n';
  }
  return os.str();
}

}  // namespace ssmlab
