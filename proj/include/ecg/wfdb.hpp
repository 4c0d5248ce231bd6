#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecg/errors.hpp"

namespace ecg::wfdb {

struct SignalSpec {
  std::string file_name;
  int storage_format = 0;
  double adc_gain = 200.0;  // adu per mV
  int adc_resolution = 0;
  int adc_zero = 0;
  int baseline = 0;  // adu value of 0 mV; equals adc_zero unless stated
  int initial_value = 0;
  std::string lead_name;
};

struct RecordHeader {
  std::string record_name;
  int n_signals = 0;
  double sampling_rate = 0.0;
  long n_samples = 0;
  std::vector<SignalSpec> signals;
};

struct AnnotationEvent {
  long sample_index = 0;
  char symbol = '\0';
  int code = 0;  // raw MIT annotation type code
  int channel = 0;
  bool known_symbol = true;
};

struct EcgRecord {
  RecordHeader header;
  std::vector<std::vector<int>> signals;  // per channel, ADC units
  std::vector<AnnotationEvent> annotations;
  int patient_id = -1;  // record number; the corpus identifies patients by it
};

// Parses the text of a single-segment .hea file. Comment lines (leading '#')
// are ignored. Throws MalformedHeader on missing/unparsable fields and
// UnsupportedFormat when any signal is stored in a format other than 212.
RecordHeader parse_header(std::string_view text);

// Decodes format-212 packed samples (two 12-bit two's-complement samples per
// 3 bytes) into per-channel sequences. Channels are interleaved
// sample-by-sample in the packed stream. Throws TruncatedSignal when the
// buffer is shorter than the packing requires.
std::vector<std::vector<int>> read_signal_212(std::span<const std::uint8_t> bytes,
                                              int n_signals, long n_samples);

// Parses a MIT annotation (.atr) stream into cumulative-time events.
// SKIP/NUM/SUB/CHN/AUX pseudo-annotations are consumed but not emitted.
// Stops at the 0x0000 end marker. Unknown type codes are kept with
// known_symbol=false.
std::vector<AnnotationEvent> read_annotations(std::span<const std::uint8_t> bytes);

// Symbol for a MIT annotation type code, or '\0' when the code is not in the
// documented table.
char annotation_symbol(int code);

// ADC units to millivolts, (adc - zero) / gain. gain must be > 0.
inline double adc_to_mv(int adc, double gain, int zero) {
  return (static_cast<double>(adc) - static_cast<double>(zero)) / gain;
}

// Reads <dir>/<name>.hea/.dat/.atr into one record. patient_id is the numeric
// record name. Throws MissingData listing any absent file.
EcgRecord load_record(const std::filesystem::path& dir, const std::string& name);

// Channel converted to mV using that signal's gain and baseline.
std::vector<double> channel_mv(const EcgRecord& rec, int channel);

// Annotation type codes of the documented MIT-BIH symbol set.
inline constexpr int kRhythmCode = 28;  // '+'

}  // namespace ecg::wfdb
