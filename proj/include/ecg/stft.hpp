#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "ecg/errors.hpp"

namespace ecg::stft {

struct StftConfig {
  int window_len = 512;  // power of two; fft_len == window_len
  int hop = 8;
  double db_floor = -80.0;
  // Beats shorter than min_signal_len are zero-padded (centered) before the
  // transform so the time axis carries several frames.
  int min_signal_len = 1024;
};

// Periodic Hann: w[k] = 0.5 (1 - cos(2 pi k / n)).
std::vector<double> hann_window(int n);

// In-place radix-2 FFT; size must be a power of two. Reentrant.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse = false);

struct Spectrogram {
  int n_frames = 0;
  int n_bins = 0;  // window_len / 2 + 1
  std::vector<std::complex<double>> values;  // row-major, frames x bins

  std::complex<double>& at(int frame, int bin) { return values[frame * n_bins + bin]; }
  const std::complex<double>& at(int frame, int bin) const {
    return values[frame * n_bins + bin];
  }
};

// Windowed DFT of x, zero-padded by window_len/2 at both ends so every sample
// is covered; frame t, bin k = sum_n x[n] w[n - t*hop] e^{-2 pi i k n / N}
// over the padded signal. Only non-negative-frequency bins are kept.
Spectrogram stft(const std::vector<double>& x, const StftConfig& cfg);

struct SpectrogramImage {
  int height = 224;
  int width = 224;
  std::vector<double> pixels;  // row-major, row 0 = frequency bin 0, in [0,1]
  bool degenerate = false;     // all-zero source spectrum
  double db_floor = -80.0;
  double db_ceiling = 0.0;

  double& at(int row, int col) { return pixels[row * width + col]; }
  double at(int row, int col) const { return pixels[row * width + col]; }
};

// Magnitude -> dB re max, clipped at db_floor, mapped onto [0,1], then
// bilinear-resized (frequency x time) to 224 x 224. An all-zero spectrum
// yields an all-zero image with the degenerate flag set.
SpectrogramImage to_image(const Spectrogram& spec, double db_floor = -80.0);

// Full beat -> image path: center-pads the beat with zeros up to
// cfg.min_signal_len (beats are shorter than one analysis window), then
// stft + to_image.
SpectrogramImage beat_to_image(const std::vector<double>& samples, const StftConfig& cfg);

enum class AugmentKind { Rotate, FlipH, FlipV, GaussNoise };

struct AugmentOp {
  AugmentKind kind = AugmentKind::Rotate;
  double angle_deg = 0.0;  // Rotate, within +-15
  double sigma = 0.0;      // GaussNoise, >= 0
};

// Deterministic augmentation under a fixed seed. Rotation is about the image
// center with bilinear interpolation and zero fill; noise is seeded zero-mean
// Gaussian, clipped back to [0,1]. Shape is preserved.
SpectrogramImage augment(const SpectrogramImage& img, const AugmentOp& op, std::uint64_t seed);

// Binary PGM (P5, maxval 255), frequency bin 0 at the bottom row.
void write_pgm(const SpectrogramImage& img, const std::filesystem::path& path);

// Cache raster: 16-byte header (magic "SPG1", u32 height, u32 width,
// u32 reserved) followed by little-endian float32 pixels, row-major.
void write_spg1(const SpectrogramImage& img, std::ostream& out);
SpectrogramImage read_spg1(std::istream& in);

}  // namespace ecg::stft
