#pragma once

#include <complex>
#include <vector>

#include "ecg/aami.hpp"
#include "ecg/errors.hpp"

namespace ecg::dsp {

struct BiquadSection {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;  // feedforward
  double a1 = 0.0, a2 = 0.0;            // feedback (a0 normalized to 1)
};

struct BiquadCascade {
  std::vector<BiquadSection> sections;
  double overall_gain = 1.0;

  // Poles strictly inside the unit circle for every section.
  bool stable() const;

  // H(e^{j 2 pi f / fs}) of the full cascade.
  std::complex<double> response(double freq_hz, double fs) const;

  // Causal application, zero initial state (direct form II transposed).
  std::vector<double> apply(const std::vector<double>& x) const;

  // Forward-backward application with odd extension at the edges. Zero phase,
  // magnitude response squared.
  std::vector<double> apply_zero_phase(const std::vector<double>& x) const;
};

// Butterworth high-pass: analog prototype -> lp2hp -> bilinear with
// pre-warped cutoff.
BiquadCascade design_butter_highpass(int order, double cutoff_hz, double fs);

// Chebyshev type I band-pass. `order` is the low-pass prototype order, so the
// digital filter has 2*order poles. Analog prototype -> lp2bp -> bilinear
// with pre-warped band edges. Throws InvalidBand unless 0 < low < high < fs/2.
BiquadCascade design_cheby1_bandpass(int order, double ripple_db, double low_hz,
                                     double high_hz, double fs);

// Baseline removal: 2nd-order Butterworth high-pass at 0.5 Hz applied
// forward-backward so R positions do not shift. Throws EmptySignal.
std::vector<double> highpass_baseline(const std::vector<double>& x, double fs);

// Subtracts a centered moving average (window forced odd, shrunken one-sided
// windows at the edges). Throws WindowTooShort when window_s * fs < 3.
std::vector<double> moving_average_detrend(const std::vector<double>& x, double window_s,
                                           double fs);

// e[n] = -u^2 ln(u^2) of the max-|x|-normalized input, with 0 ln 0 = 0.
// Output is elementwise >= 0 and invariant to sign flips of x.
std::vector<double> shannon_energy(const std::vector<double>& x);

struct RPeakConfig {
  double ripple_db = 1.0;
  double band_low_hz = 6.0;
  double band_high_hz = 18.0;
  int band_order = 4;
  double smooth_s = 0.15;        // envelope moving average
  double threshold_frac = 0.3;   // of the rolling max
  double rolling_max_s = 2.0;    // rolling-max window
  double refractory_s = 0.2;     // physiologic ceiling ~300 bpm
  double refine_s = 0.05;        // refine to max |band-passed| within +-refine_s
};

// Shannon-energy R-peak detector over a high-passed, detrended signal.
// Band-pass -> Shannon energy -> smooth -> adaptive-threshold local maxima
// with refractory -> refine on the band-passed signal. Output indices are
// strictly increasing with gaps >= refractory. Flat input yields no peaks.
std::vector<long> detect_r_peaks(const std::vector<double>& x, double fs,
                                 const RPeakConfig& cfg = {});

struct Heartbeat {
  std::vector<double> samples;  // mV
  long r_index = 0;             // R offset within samples
  char annotation_symbol = '\0';
  AamiClass aami_class = AamiClass::Q;
  int patient_id = -1;
  double rr_prev = 0.0;  // seconds
  double rr_next = 0.0;  // seconds
};

// Cuts one window per interior annotated beat: length round(1.2 * mean RR *
// fs), centered on R. First/last beats and windows crossing the record
// boundary are dropped. symbols[i] labels r_indices[i]; only beat symbols
// should be passed in.
std::vector<Heartbeat> segment_heartbeats(const std::vector<double>& x,
                                          const std::vector<long>& r_indices,
                                          const std::vector<char>& symbols, double fs,
                                          int patient_id);

}  // namespace ecg::dsp
