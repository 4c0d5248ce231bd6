#include "ecg/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

namespace ecg::dsp {

namespace {

constexpr double kPi = std::numbers::pi;

struct Zpk {
  std::vector<std::complex<double>> zeros;
  std::vector<std::complex<double>> poles;
  double gain = 1.0;
};

Zpk cheby1_prototype(int order, double ripple_db) {
  const double eps = std::sqrt(std::pow(10.0, 0.1 * ripple_db) - 1.0);
  const double mu = std::asinh(1.0 / eps) / order;
  Zpk zpk;
  std::complex<double> prod = 1.0;
  for (int k = 1; k <= order; ++k) {
    const double theta = kPi * (2 * k - 1) / (2.0 * order);
    const std::complex<double> p(-std::sinh(mu) * std::sin(theta),
                                 std::cosh(mu) * std::cos(theta));
    zpk.poles.push_back(p);
    prod *= -p;
  }
  zpk.gain = prod.real();
  if (order % 2 == 0) zpk.gain /= std::sqrt(1.0 + eps * eps);
  return zpk;
}

Zpk butter_prototype(int order) {
  Zpk zpk;
  for (int k = 1; k <= order; ++k) {
    const double theta = kPi * (2 * k + order - 1) / (2.0 * order);
    zpk.poles.push_back(std::polar(1.0, theta));
  }
  zpk.gain = 1.0;
  return zpk;
}

Zpk lp2hp(const Zpk& lp, double wo) {
  Zpk out;
  const std::size_t degree = lp.poles.size() - lp.zeros.size();
  std::complex<double> num = 1.0, den = 1.0;
  for (const auto& z : lp.zeros) {
    out.zeros.push_back(wo / z);
    num *= -z;
  }
  for (const auto& p : lp.poles) {
    out.poles.push_back(wo / p);
    den *= -p;
  }
  out.zeros.insert(out.zeros.end(), degree, 0.0);
  out.gain = lp.gain * (num / den).real();
  return out;
}

Zpk lp2bp(const Zpk& lp, double wo, double bw) {
  Zpk out;
  const std::size_t degree = lp.poles.size() - lp.zeros.size();
  auto transform = [&](const std::complex<double>& r) {
    const std::complex<double> s = r * (bw / 2.0);
    const std::complex<double> d = std::sqrt(s * s - wo * wo);
    return std::make_pair(s + d, s - d);
  };
  for (const auto& z : lp.zeros) {
    auto [z1, z2] = transform(z);
    out.zeros.push_back(z1);
    out.zeros.push_back(z2);
  }
  for (const auto& p : lp.poles) {
    auto [p1, p2] = transform(p);
    out.poles.push_back(p1);
    out.poles.push_back(p2);
  }
  out.zeros.insert(out.zeros.end(), degree, 0.0);
  out.gain = lp.gain * std::pow(bw, static_cast<double>(degree));
  return out;
}

Zpk bilinear(const Zpk& analog, double fs) {
  const double fs2 = 2.0 * fs;
  Zpk out;
  std::complex<double> num = 1.0, den = 1.0;
  for (const auto& z : analog.zeros) {
    out.zeros.push_back((fs2 + z) / (fs2 - z));
    num *= (fs2 - z);
  }
  for (const auto& p : analog.poles) {
    out.poles.push_back((fs2 + p) / (fs2 - p));
    den *= (fs2 - p);
  }
  const std::size_t degree = analog.poles.size() - analog.zeros.size();
  out.zeros.insert(out.zeros.end(), degree, -1.0);
  out.gain = analog.gain * (num / den).real();
  return out;
}

// Groups a digital zpk whose poles come in conjugate pairs (or real pairs)
// into biquad sections; zeros are paired the same way.
BiquadCascade zpk_to_cascade(Zpk zpk) {
  auto pair_up = [](std::vector<std::complex<double>> roots) {
    // sort by imag magnitude then real part so conjugates end up adjacent
    std::sort(roots.begin(), roots.end(), [](const auto& a, const auto& b) {
      if (std::abs(a.imag()) != std::abs(b.imag()))
        return std::abs(a.imag()) < std::abs(b.imag());
      if (a.real() != b.real()) return a.real() < b.real();
      return a.imag() < b.imag();
    });
    return roots;
  };
  auto zeros = pair_up(zpk.zeros);
  auto poles = pair_up(zpk.poles);
  if (zeros.size() != poles.size() || poles.size() % 2 != 0)
    throw InvalidBand("zpk cannot be grouped into biquads");

  BiquadCascade cascade;
  for (std::size_t i = 0; i < poles.size(); i += 2) {
    BiquadSection s;
    const auto &p1 = poles[i], &p2 = poles[i + 1];
    s.a1 = -(p1 + p2).real();
    s.a2 = (p1 * p2).real();
    const auto &z1 = zeros[i], &z2 = zeros[i + 1];
    s.b0 = 1.0;
    s.b1 = -(z1 + z2).real();
    s.b2 = (z1 * z2).real();
    cascade.sections.push_back(s);
  }
  cascade.overall_gain = zpk.gain;
  return cascade;
}

}  // namespace

bool BiquadCascade::stable() const {
  for (const auto& s : sections)
    if (!(std::abs(s.a2) < 1.0 && std::abs(s.a1) < 1.0 + s.a2)) return false;
  return true;
}

std::complex<double> BiquadCascade::response(double freq_hz, double fs) const {
  const std::complex<double> zinv = std::polar(1.0, -2.0 * kPi * freq_hz / fs);
  std::complex<double> h = overall_gain;
  for (const auto& s : sections) {
    h *= (s.b0 + s.b1 * zinv + s.b2 * zinv * zinv) /
         (1.0 + s.a1 * zinv + s.a2 * zinv * zinv);
  }
  return h;
}

std::vector<double> BiquadCascade::apply(const std::vector<double>& x) const {
  std::vector<double> y = x;
  for (const auto& s : sections) {
    double w1 = 0.0, w2 = 0.0;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + w1;
      w1 = s.b1 * in - s.a1 * out + w2;
      w2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  if (overall_gain != 1.0)
    for (double& v : y) v *= overall_gain;
  return y;
}

std::vector<double> BiquadCascade::apply_zero_phase(const std::vector<double>& x) const {
  if (x.empty()) return {};
  const long n = static_cast<long>(x.size());
  const long pad = std::min<long>(n - 1, 3 * (2 * static_cast<long>(sections.size()) + 1));

  // odd extension around both endpoints
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (long i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (long i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  auto fwd = apply(ext);
  std::reverse(fwd.begin(), fwd.end());
  auto bwd = apply(fwd);
  std::reverse(bwd.begin(), bwd.end());

  return std::vector<double>(bwd.begin() + pad, bwd.begin() + pad + n);
}

BiquadCascade design_butter_highpass(int order, double cutoff_hz, double fs) {
  if (order < 1 || cutoff_hz <= 0.0 || cutoff_hz >= fs / 2.0)
    throw InvalidBand("high-pass cutoff must satisfy 0 < fc < fs/2");
  const double warped = 2.0 * fs * std::tan(kPi * cutoff_hz / fs);
  Zpk zpk = butter_prototype(order);
  zpk = lp2hp(zpk, warped);
  zpk = bilinear(zpk, fs);
  auto cascade = zpk_to_cascade(std::move(zpk));
  if (!cascade.stable()) throw InvalidBand("designed high-pass is unstable");
  return cascade;
}

BiquadCascade design_cheby1_bandpass(int order, double ripple_db, double low_hz,
                                     double high_hz, double fs) {
  if (!(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0))
    throw InvalidBand("band edges must satisfy 0 < low < high < fs/2");
  if (order < 1 || ripple_db <= 0.0) throw InvalidBand("order >= 1 and ripple > 0 required");
  const double wl = 2.0 * fs * std::tan(kPi * low_hz / fs);
  const double wh = 2.0 * fs * std::tan(kPi * high_hz / fs);
  Zpk zpk = cheby1_prototype(order, ripple_db);
  zpk = lp2bp(zpk, std::sqrt(wl * wh), wh - wl);
  zpk = bilinear(zpk, fs);
  auto cascade = zpk_to_cascade(std::move(zpk));
  if (!cascade.stable()) throw InvalidBand("designed band-pass is unstable");
  return cascade;
}

std::vector<double> highpass_baseline(const std::vector<double>& x, double fs) {
  if (x.empty()) throw EmptySignal("highpass_baseline: empty input");
  if (fs <= 1.0) throw InvalidBand("sampling rate must exceed 1 Hz");
  static thread_local double cached_fs = 0.0;
  static thread_local BiquadCascade cached;
  if (cached_fs != fs) {
    cached = design_butter_highpass(2, 0.5, fs);
    cached_fs = fs;
  }
  return cached.apply_zero_phase(x);
}

std::vector<double> moving_average_detrend(const std::vector<double>& x, double window_s,
                                           double fs) {
  long w = static_cast<long>(std::ceil(window_s * fs));
  if (w < 3) throw WindowTooShort("moving-average window must span at least 3 samples");
  if (w % 2 == 0) ++w;
  const long half = w / 2;
  const long n = static_cast<long>(x.size());

  std::vector<double> prefix(n + 1, 0.0);
  for (long i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];

  std::vector<double> y(n);
  for (long i = 0; i < n; ++i) {
    const long lo = std::max<long>(0, i - half);
    const long hi = std::min<long>(n - 1, i + half);
    const double mean = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
    y[i] = x[i] - mean;
  }
  return y;
}

std::vector<double> shannon_energy(const std::vector<double>& x) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  std::vector<double> e(x.size(), 0.0);
  if (peak == 0.0) return e;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = x[i] / peak;
    const double u2 = u * u;
    e[i] = u2 > 0.0 ? -u2 * std::log(u2) : 0.0;
  }
  return e;
}

namespace {

std::vector<double> centered_moving_average(const std::vector<double>& x, long w) {
  if (w % 2 == 0) ++w;
  const long half = w / 2;
  const long n = static_cast<long>(x.size());
  std::vector<double> prefix(n + 1, 0.0);
  for (long i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  std::vector<double> y(n);
  for (long i = 0; i < n; ++i) {
    const long lo = std::max<long>(0, i - half);
    const long hi = std::min<long>(n - 1, i + half);
    y[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
  }
  return y;
}

// Centered rolling maximum via monotonic deque, O(n).
std::vector<double> rolling_max(const std::vector<double>& x, long half) {
  const long n = static_cast<long>(x.size());
  std::vector<double> out(n);
  std::deque<long> dq;
  long right = -1;
  for (long i = 0; i < n; ++i) {
    const long hi = std::min<long>(n - 1, i + half);
    while (right < hi) {
      ++right;
      while (!dq.empty() && x[dq.back()] <= x[right]) dq.pop_back();
      dq.push_back(right);
    }
    while (!dq.empty() && dq.front() < i - half) dq.pop_front();
    out[i] = x[dq.front()];
  }
  return out;
}

}  // namespace

std::vector<long> detect_r_peaks(const std::vector<double>& x, double fs,
                                 const RPeakConfig& cfg) {
  if (x.size() < 3) return {};

  static thread_local double bp_fs = 0.0;
  static thread_local RPeakConfig bp_cfg;
  static thread_local BiquadCascade bp;
  if (bp_fs != fs || bp_cfg.band_low_hz != cfg.band_low_hz ||
      bp_cfg.band_high_hz != cfg.band_high_hz || bp_cfg.ripple_db != cfg.ripple_db ||
      bp_cfg.band_order != cfg.band_order) {
    bp = design_cheby1_bandpass(cfg.band_order, cfg.ripple_db, cfg.band_low_hz,
                                cfg.band_high_hz, fs);
    bp_fs = fs;
    bp_cfg = cfg;
  }

  const auto banded = bp.apply_zero_phase(x);
  const auto energy = shannon_energy(banded);
  const auto envelope =
      centered_moving_average(energy, std::max<long>(3, std::lround(cfg.smooth_s * fs)));
  const auto local_max =
      rolling_max(envelope, std::max<long>(1, std::lround(cfg.rolling_max_s * fs / 2.0)));

  const long refractory = std::lround(cfg.refractory_s * fs);
  const long n = static_cast<long>(envelope.size());
  constexpr double kFloor = 1e-12;

  // adaptive-threshold local maxima with refractory, keeping the larger
  // envelope value on conflicts
  std::vector<long> picks;
  for (long i = 1; i + 1 < n; ++i) {
    const double e = envelope[i];
    if (e < envelope[i - 1] || e <= envelope[i + 1]) continue;
    if (e <= kFloor || e <= cfg.threshold_frac * local_max[i]) continue;
    if (!picks.empty() && i - picks.back() < refractory) {
      if (e > envelope[picks.back()]) picks.back() = i;
    } else {
      picks.push_back(i);
    }
  }

  // refine to the strongest |band-passed| sample nearby
  const long refine = std::lround(cfg.refine_s * fs);
  std::vector<long> refined;
  for (long p : picks) {
    const long lo = std::max<long>(0, p - refine);
    const long hi = std::min<long>(n - 1, p + refine);
    long best = p;
    for (long j = lo; j <= hi; ++j)
      if (std::abs(banded[j]) > std::abs(banded[best])) best = j;
    if (!refined.empty() && best - refined.back() < refractory) {
      if (envelope[p] > envelope[refined.back()]) refined.back() = best;
    } else {
      refined.push_back(best);
    }
  }
  return refined;
}

std::vector<Heartbeat> segment_heartbeats(const std::vector<double>& x,
                                          const std::vector<long>& r_indices,
                                          const std::vector<char>& symbols, double fs,
                                          int patient_id) {
  if (r_indices.size() != symbols.size())
    throw std::invalid_argument("segment_heartbeats: one symbol per R index required");
  std::vector<Heartbeat> beats;
  if (r_indices.size() < 3) return beats;

  const long n = static_cast<long>(x.size());
  for (std::size_t i = 1; i + 1 < r_indices.size(); ++i) {
    const double rr_prev = (r_indices[i] - r_indices[i - 1]) / fs;
    const double rr_next = (r_indices[i + 1] - r_indices[i]) / fs;
    if (rr_prev <= 0.0 || rr_next <= 0.0) continue;
    const long len = std::lround(1.2 * 0.5 * (rr_prev + rr_next) * fs);
    if (len < 1) continue;
    const long start = r_indices[i] - len / 2;
    if (start < 0 || start + len > n) continue;  // window crosses the boundary

    Heartbeat hb;
    hb.samples.assign(x.begin() + start, x.begin() + start + len);
    hb.r_index = r_indices[i] - start;
    hb.annotation_symbol = symbols[i];
    if (auto cls = map_aami(symbols[i])) hb.aami_class = *cls;
    hb.patient_id = patient_id;
    hb.rr_prev = rr_prev;
    hb.rr_next = rr_next;
    beats.push_back(std::move(hb));
  }
  return beats;
}

}  // namespace ecg::dsp
