#include "ecg/stft.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <ostream>

#include "ecg/rng.hpp"

namespace ecg::stft {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int k = 0; k < n; ++k) w[k] = 0.5 * (1.0 - std::cos(kTwoPi * k / n));
  return w;
}

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n < 2) return;
  if (!std::has_single_bit(n)) throw std::invalid_argument("fft size must be a power of two");

  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w = 1.0;
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& v : a) v /= static_cast<double>(n);
}

Spectrogram stft(const std::vector<double>& x, const StftConfig& cfg) {
  if (x.empty()) throw EmptySignal("stft: empty input");
  if (cfg.hop < 1 || cfg.hop > cfg.window_len)
    throw std::invalid_argument("stft: hop must satisfy 0 < hop <= window_len");
  if (!std::has_single_bit(static_cast<unsigned>(cfg.window_len)))
    throw std::invalid_argument("stft: window_len must be a power of two");

  const int W = cfg.window_len;
  const int half = W / 2;
  const long n = static_cast<long>(x.size());

  std::vector<double> padded(n + 2L * half, 0.0);
  std::copy(x.begin(), x.end(), padded.begin() + half);

  const auto window = hann_window(W);
  const long padded_len = static_cast<long>(padded.size());
  const int n_frames = static_cast<int>((padded_len - W) / cfg.hop) + 1;
  const int n_bins = half + 1;

  Spectrogram spec;
  spec.n_frames = n_frames;
  spec.n_bins = n_bins;
  spec.values.resize(static_cast<std::size_t>(n_frames) * n_bins);

  std::vector<std::complex<double>> frame(W);
  for (int t = 0; t < n_frames; ++t) {
    const long off = static_cast<long>(t) * cfg.hop;
    for (int m = 0; m < W; ++m) frame[m] = padded[off + m] * window[m];
    fft_inplace(frame);
    // the transform references the global time origin: compensate for the
    // frame offset so bin k carries e^{-2 pi i k n / N} at absolute n
    for (int k = 0; k < n_bins; ++k) {
      const double phase = -kTwoPi * static_cast<double>(k) *
                           static_cast<double>(off % W) / static_cast<double>(W);
      spec.at(t, k) = frame[k] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
  }
  return spec;
}

namespace {

// Bilinear sample of a rows x cols grid at fractional (r, c), clamped.
double bilinear_at(const std::vector<double>& grid, int rows, int cols, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(rows - 1));
  c = std::clamp(c, 0.0, static_cast<double>(cols - 1));
  const int r0 = static_cast<int>(r);
  const int c0 = static_cast<int>(c);
  const int r1 = std::min(r0 + 1, rows - 1);
  const int c1 = std::min(c0 + 1, cols - 1);
  const double fr = r - r0;
  const double fc = c - c0;
  const double top = grid[r0 * cols + c0] * (1.0 - fc) + grid[r0 * cols + c1] * fc;
  const double bot = grid[r1 * cols + c0] * (1.0 - fc) + grid[r1 * cols + c1] * fc;
  return top * (1.0 - fr) + bot * fr;
}

}  // namespace

SpectrogramImage to_image(const Spectrogram& spec, double db_floor) {
  if (spec.values.empty()) throw DegenerateSpectrum("to_image: empty spectrogram");
  if (db_floor >= 0.0) throw std::invalid_argument("db_floor must be negative");

  SpectrogramImage img;
  img.db_floor = db_floor;
  img.pixels.assign(static_cast<std::size_t>(img.height) * img.width, 0.0);

  double max_mag = 0.0;
  for (const auto& v : spec.values) max_mag = std::max(max_mag, std::abs(v));
  if (max_mag == 0.0) {
    img.degenerate = true;
    return img;
  }

  // scaled grid in [0,1]: rows = frequency bins, cols = frames
  const int rows = spec.n_bins;
  const int cols = spec.n_frames;
  std::vector<double> grid(static_cast<std::size_t>(rows) * cols);
  for (int b = 0; b < rows; ++b) {
    for (int t = 0; t < cols; ++t) {
      const double mag = std::abs(spec.at(t, b));
      double db = mag > 0.0 ? 20.0 * std::log10(mag / max_mag) : db_floor;
      db = std::max(db, db_floor);
      grid[b * cols + t] = 1.0 - db / db_floor;
    }
  }

  const double rscale = rows > 1 ? static_cast<double>(rows - 1) / (img.height - 1) : 0.0;
  const double cscale = cols > 1 ? static_cast<double>(cols - 1) / (img.width - 1) : 0.0;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      img.at(r, c) = bilinear_at(grid, rows, cols, r * rscale, c * cscale);
  return img;
}

SpectrogramImage beat_to_image(const std::vector<double>& samples, const StftConfig& cfg) {
  if (static_cast<int>(samples.size()) >= cfg.min_signal_len)
    return to_image(stft(samples, cfg), cfg.db_floor);
  std::vector<double> padded(cfg.min_signal_len, 0.0);
  const std::size_t off = (padded.size() - samples.size()) / 2;
  std::copy(samples.begin(), samples.end(), padded.begin() + off);
  return to_image(stft(padded, cfg), cfg.db_floor);
}

SpectrogramImage augment(const SpectrogramImage& img, const AugmentOp& op, std::uint64_t seed) {
  if (op.kind == AugmentKind::Rotate && std::abs(op.angle_deg) > 15.0)
    throw std::invalid_argument("rotation angle must stay within +-15 degrees");
  if (op.kind == AugmentKind::GaussNoise && op.sigma < 0.0)
    throw std::invalid_argument("noise sigma must be >= 0");
  SpectrogramImage out = img;
  const int h = img.height;
  const int w = img.width;

  switch (op.kind) {
    case AugmentKind::FlipH:
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = img.at(r, w - 1 - c);
      break;
    case AugmentKind::FlipV:
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = img.at(h - 1 - r, c);
      break;
    case AugmentKind::Rotate: {
      const double theta = op.angle_deg * std::numbers::pi / 180.0;
      const double cs = std::cos(theta);
      const double sn = std::sin(theta);
      const double cr = (h - 1) / 2.0;
      const double cc = (w - 1) / 2.0;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          // inverse map: rotate destination by -theta about the center
          const double dr = r - cr;
          const double dc = c - cc;
          const double sr = cr + cs * dr + sn * dc;
          const double sc = cc - sn * dr + cs * dc;
          if (sr < 0.0 || sr > h - 1 || sc < 0.0 || sc > w - 1) {
            out.at(r, c) = 0.0;
          } else {
            out.at(r, c) = bilinear_at(img.pixels, h, w, sr, sc);
          }
        }
      }
      break;
    }
    case AugmentKind::GaussNoise: {
      Rng rng(seed);
      for (auto& p : out.pixels) p = std::clamp(p + rng.normal(0.0, op.sigma), 0.0, 1.0);
      break;
    }
  }
  return out;
}

void write_pgm(const SpectrogramImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  // frequency bin 0 belongs at the bottom row of the rendered image
  for (int r = img.height - 1; r >= 0; --r) {
    for (int c = 0; c < img.width; ++c) {
      const double v = std::clamp(img.at(r, c), 0.0, 1.0);
      out.put(static_cast<char>(std::lround(v * 255.0)));
    }
  }
  if (!out) throw IoFailure("short write to " + path.string());
}

void write_spg1(const SpectrogramImage& img, std::ostream& out) {
  const char magic[4] = {'S', 'P', 'G', '1'};
  const std::uint32_t h = static_cast<std::uint32_t>(img.height);
  const std::uint32_t w = static_cast<std::uint32_t>(img.width);
  const std::uint32_t reserved = 0;
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&reserved), 4);
  std::vector<float> row(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) row[i] = static_cast<float>(img.pixels[i]);
  out.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  if (!out) throw IoFailure("short SPG1 write");
}

SpectrogramImage read_spg1(std::istream& in) {
  char magic[4];
  std::uint32_t h = 0, w = 0, reserved = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&reserved), 4);
  if (!in || std::memcmp(magic, "SPG1", 4) != 0) throw BadMagic("not an SPG1 raster");
  SpectrogramImage img;
  img.height = static_cast<int>(h);
  img.width = static_cast<int>(w);
  std::vector<float> raw(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!in) throw BadMagic("truncated SPG1 raster");
  img.pixels.assign(raw.begin(), raw.end());
  return img;
}

}  // namespace ecg::stft
