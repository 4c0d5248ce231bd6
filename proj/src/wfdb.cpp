#include "ecg/wfdb.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace ecg::wfdb {

namespace {

// MIT annotation type codes -> display symbols (ecgcodes table). Index is the
// 6-bit type code; '\0' marks undefined codes.
constexpr char kCodeSymbols[50] = {
    '\0',           // 0 NOTQRS
    'N', 'L', 'R', 'a', 'V', 'F', 'J', 'A', 'S', 'E',  // 1..10
    'j', '/', 'Q', '~', '\0', '|', '\0', 's', 'T',     // 11..19
    '*', 'D', '"', '=', 'p', 'B', '^', 't', '+', 'u',  // 20..29
    '?', '!', '[', ']', 'e', 'n', '@', 'x', 'f', '(',  // 30..39
    ')', 'r',                                          // 40..41
};

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

long parse_long(const std::string& tok, const char* what) {
  long v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw MalformedHeader(std::string("unparsable ") + what + ": '" + tok + "'");
  return v;
}

// Leading integer of a token that may carry x/:/+ suffixes (format field).
int parse_int_prefix(const std::string& tok, const char* what) {
  int v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p == tok.data())
    throw MalformedHeader(std::string("unparsable ") + what + ": '" + tok + "'");
  return v;
}

double parse_double_prefix(const std::string& tok, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos == 0) throw std::invalid_argument(what);
    return v;
  } catch (const std::exception&) {
    throw MalformedHeader(std::string("unparsable ") + what + ": '" + tok + "'");
  }
}

int sign_extend_12(int v) { return (v & 0x800) ? v - 0x1000 : v; }

}  // namespace

char annotation_symbol(int code) {
  if (code < 0 || code >= 50) return '\0';
  return kCodeSymbols[code];
}

RecordHeader parse_header(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    bool blank = line.find_first_not_of(" \t") == std::string_view::npos;
    if (!blank && line[line.find_first_not_of(" \t")] != '#') lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  if (lines.empty()) throw MalformedHeader("empty header");

  const auto rec_tokens = tokenize(lines[0]);
  if (rec_tokens.size() < 4)
    throw MalformedHeader("record line needs name, signal count, sampling rate, sample count");

  RecordHeader hdr;
  hdr.record_name = rec_tokens[0];
  if (hdr.record_name.find('/') != std::string::npos)
    throw MalformedHeader("multi-segment records are not supported");
  hdr.n_signals = static_cast<int>(parse_long(rec_tokens[1], "signal count"));
  if (hdr.n_signals < 1) throw MalformedHeader("signal count must be >= 1");
  // sampling rate may carry a counter frequency suffix: "360/360(0)"
  hdr.sampling_rate = parse_double_prefix(rec_tokens[2], "sampling rate");
  if (hdr.sampling_rate <= 0.0) throw MalformedHeader("sampling rate must be > 0");
  hdr.n_samples = parse_long(rec_tokens[3], "sample count");
  if (hdr.n_samples < 0) throw MalformedHeader("negative sample count");

  if (lines.size() < static_cast<std::size_t>(1 + hdr.n_signals))
    throw MalformedHeader("fewer signal lines than declared signals");

  for (int s = 0; s < hdr.n_signals; ++s) {
    const auto tok = tokenize(lines[1 + s]);
    if (tok.size() < 2) throw MalformedHeader("signal line needs file name and format");
    SignalSpec spec;
    bool baseline_set = false;
    spec.file_name = tok[0];
    spec.storage_format = parse_int_prefix(tok[1], "storage format");
    if (spec.storage_format != 212)
      throw UnsupportedFormat("storage format " + std::to_string(spec.storage_format) +
                              " (only 212 is supported)");
    if (tok.size() > 2) {
      // gain token: "200", "200/mV", "200(1024)/mV"
      std::string g = tok[2];
      std::string baseline_str;
      if (auto lp = g.find('('); lp != std::string::npos) {
        auto rp = g.find(')', lp);
        if (rp == std::string::npos) throw MalformedHeader("unterminated baseline in gain field");
        baseline_str = g.substr(lp + 1, rp - lp - 1);
        g = g.substr(0, lp) + g.substr(rp + 1);
      }
      if (auto sl = g.find('/'); sl != std::string::npos) g = g.substr(0, sl);
      spec.adc_gain = parse_double_prefix(g.empty() ? "0" : g, "adc gain");
      if (spec.adc_gain == 0.0) spec.adc_gain = 200.0;  // WFDB convention for gain 0
      if (spec.adc_gain < 0.0) throw MalformedHeader("adc gain must be > 0");
      if (!baseline_str.empty()) {
        spec.baseline = static_cast<int>(parse_long(baseline_str, "baseline"));
        baseline_set = true;
      }
    }
    if (tok.size() > 3) spec.adc_resolution = static_cast<int>(parse_long(tok[3], "adc resolution"));
    if (tok.size() > 4) spec.adc_zero = static_cast<int>(parse_long(tok[4], "adc zero"));
    if (tok.size() > 5) spec.initial_value = static_cast<int>(parse_long(tok[5], "initial value"));
    else spec.initial_value = spec.adc_zero;
    // tokens 6, 7 are checksum and block size; the rest is the description
    if (tok.size() > 8) {
      std::string desc = tok[8];
      for (std::size_t i = 9; i < tok.size(); ++i) desc += " " + tok[i];
      spec.lead_name = desc;
    }
    if (!baseline_set) spec.baseline = spec.adc_zero;
    hdr.signals.push_back(std::move(spec));
  }
  return hdr;
}

std::vector<std::vector<int>> read_signal_212(std::span<const std::uint8_t> bytes,
                                              int n_signals, long n_samples) {
  if (n_signals < 1 || n_samples < 0) throw MalformedHeader("bad signal geometry");
  const long total = n_samples * n_signals;
  const long groups = total / 2;
  const long need = groups * 3 + (total % 2) * 2;
  if (static_cast<long>(bytes.size()) < need)
    throw TruncatedSignal("need " + std::to_string(need) + " bytes for " + std::to_string(total) +
                          " samples, got " + std::to_string(bytes.size()));

  std::vector<std::vector<int>> channels(n_signals);
  for (auto& ch : channels) ch.reserve(n_samples);

  long emitted = 0;
  auto push = [&](int v) {
    channels[emitted % n_signals].push_back(v);
    ++emitted;
  };
  const std::uint8_t* p = bytes.data();
  for (long g = 0; g < groups; ++g, p += 3) {
    push(sign_extend_12(p[0] | ((p[1] & 0x0F) << 8)));
    push(sign_extend_12(p[2] | ((p[1] & 0xF0) << 4)));
  }
  if (total % 2) push(sign_extend_12(p[0] | ((p[1] & 0x0F) << 8)));
  return channels;
}

std::vector<AnnotationEvent> read_annotations(std::span<const std::uint8_t> bytes) {
  std::vector<AnnotationEvent> events;
  long time = 0;
  int channel = 0;
  std::size_t pos = 0;

  while (pos < bytes.size()) {
    if (pos + 2 > bytes.size())
      throw MalformedAnnotation("dangling byte at end of annotation stream");
    const unsigned word = bytes[pos] | (bytes[pos + 1] << 8);
    pos += 2;
    if (word == 0) break;  // end marker
    const int code = static_cast<int>(word >> 10);
    const long field = static_cast<long>(word & 0x3FF);

    switch (code) {
      case 59: {  // SKIP: 4-byte interval, high word first, words little-endian
        if (pos + 4 > bytes.size())
          throw MalformedAnnotation("SKIP code missing its 4-byte interval");
        const long hi = bytes[pos] | (bytes[pos + 1] << 8);
        const long lo = bytes[pos + 2] | (bytes[pos + 3] << 8);
        pos += 4;
        std::int32_t interval = static_cast<std::int32_t>((hi << 16) | lo);
        time += interval;
        break;
      }
      case 60:  // NUM
      case 61:  // SUB
        break;
      case 62:  // CHN
        channel = static_cast<int>(field);
        break;
      case 63: {  // AUX: `field` bytes of data, padded to even length
        const std::size_t skip = static_cast<std::size_t>(field + (field & 1));
        if (pos + skip > bytes.size())
          throw MalformedAnnotation("AUX data overruns annotation stream");
        pos += skip;
        break;
      }
      default: {
        time += field;
        AnnotationEvent ev;
        ev.sample_index = time;
        ev.code = code;
        ev.channel = channel;
        ev.symbol = annotation_symbol(code);
        ev.known_symbol = ev.symbol != '\0';
        if (!ev.known_symbol) ev.symbol = '"';  // preserved via `code`, flagged
        events.push_back(ev);
        break;
      }
    }
  }
  return events;
}

EcgRecord load_record(const std::filesystem::path& dir, const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path hea = dir / (name + ".hea");
  const fs::path dat_fallback = dir / (name + ".dat");
  const fs::path atr = dir / (name + ".atr");

  std::string missing;
  for (const auto& p : {hea, dat_fallback, atr})
    if (!fs::exists(p)) missing += (missing.empty() ? "" : ", ") + p.string();
  if (!missing.empty()) throw MissingData("missing record files: " + missing);

  const auto read_file = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MissingData("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  EcgRecord rec;
  rec.header = parse_header(read_file(hea));

  const fs::path dat = dir / rec.header.signals[0].file_name;
  const std::string raw = read_file(fs::exists(dat) ? dat : dat_fallback);
  rec.signals = read_signal_212(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()),
      rec.header.n_signals, rec.header.n_samples);

  const std::string araw = read_file(atr);
  rec.annotations = read_annotations(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(araw.data()), araw.size()));

  try {
    rec.patient_id = std::stoi(rec.header.record_name);
  } catch (const std::exception&) {
    rec.patient_id = -1;
  }
  return rec;
}

std::vector<double> channel_mv(const EcgRecord& rec, int channel) {
  if (channel < 0 || channel >= rec.header.n_signals)
    throw MalformedHeader("channel index out of range");
  const auto& spec = rec.header.signals[channel];
  const auto& adc = rec.signals[channel];
  std::vector<double> mv(adc.size());
  for (std::size_t i = 0; i < adc.size(); ++i)
    mv[i] = adc_to_mv(adc[i], spec.adc_gain, spec.baseline);
  return mv;
}

}  // namespace ecg::wfdb
