#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace ecg {

// AAMI EC57 heartbeat classes, in reporting order.
enum class AamiClass : int { N = 0, S = 1, V = 2, F = 3, Q = 4 };

inline constexpr int kNumAamiClasses = 5;
inline constexpr std::array<char, 5> kAamiNames = {'N', 'S', 'V', 'F', 'Q'};

inline char aami_name(AamiClass c) { return kAamiNames[static_cast<int>(c)]; }

// EC57 consolidation of MIT-BIH beat symbols. Non-beat symbols (rhythm
// changes, quality marks, unknown characters) map to nullopt.
inline std::optional<AamiClass> map_aami(char symbol) {
  switch (symbol) {
    case 'N':
    case 'L':
    case 'R':
    case 'e':
    case 'j':
      return AamiClass::N;
    case 'A':
    case 'a':
    case 'J':
    case 'S':
      return AamiClass::S;
    case 'V':
    case 'E':
      return AamiClass::V;
    case 'F':
      return AamiClass::F;
    case '/':
    case 'f':
    case 'Q':
      return AamiClass::Q;
    default:
      return std::nullopt;
  }
}

inline bool is_beat_symbol(char symbol) { return map_aami(symbol).has_value(); }

}  // namespace ecg
