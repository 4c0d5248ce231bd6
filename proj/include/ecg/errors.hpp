#pragma once

#include <stdexcept>
#include <string>

namespace ecg {

// wfdb
struct MalformedHeader : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedFormat : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TruncatedSignal : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedAnnotation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// dsp
struct EmptySignal : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct WindowTooShort : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidBand : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// dataset
struct UnknownPatient : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyClass : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// model
struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GraphNotEvaluated : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagic : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyDataset : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// eval
struct EmptyMatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// stft
struct DegenerateSpectrum : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// pipeline
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingData : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RangeOutOfBounds : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ecg
