#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ecg/aami.hpp"
#include "ecg/errors.hpp"
#include "ecg/stft.hpp"
#include "ecg/wfdb.hpp"

namespace ecg::dataset {

// Chazal inter-patient division of the 48-record corpus by record number.
inline constexpr std::array<int, 22> kDs1 = {101, 106, 108, 109, 112, 114, 115, 116,
                                             118, 119, 122, 124, 201, 203, 205, 207,
                                             208, 209, 215, 220, 223, 230};
inline constexpr std::array<int, 22> kDs2 = {100, 103, 105, 111, 113, 117, 121, 123,
                                             200, 202, 210, 212, 213, 214, 219, 221,
                                             222, 228, 231, 232, 233, 234};
// Paced records, excluded from the inter-patient paradigm.
inline constexpr std::array<int, 4> kExcludedRecords = {102, 104, 107, 217};

// All 48 record numbers, DS1 + DS2 + excluded.
std::vector<int> all_record_ids();

// One beat annotation. beat_index counts beat-symbol annotations within the
// record; synthetic entries reference a source beat plus an augmentation to
// materialize on its spectrogram.
struct BeatRef {
  int record = 0;
  int beat_index = 0;
  AamiClass cls = AamiClass::N;
  bool synthetic = false;
  stft::AugmentOp aug{};
  std::uint64_t aug_seed = 0;
};

enum class Paradigm { InterPatient, IntraPatient };

struct DatasetSplit {
  Paradigm paradigm = Paradigm::InterPatient;
  std::uint64_t seed = 0;
  std::vector<BeatRef> train;
  std::vector<BeatRef> test;
  std::set<int> train_patients;
  std::set<int> test_patients;
};

struct ClassCensus {
  std::array<long, kNumAamiClasses> counts{};
  long total = 0;

  long operator[](AamiClass c) const { return counts[static_cast<int>(c)]; }
};

ClassCensus census(const std::vector<BeatRef>& beats);

// Beat-symbol annotations of a record as BeatRefs (non-beat events dropped).
std::vector<BeatRef> beats_of_record(const wfdb::EcgRecord& rec);

// DS1 -> train, DS2 -> test; the four paced records contribute nothing.
// Throws UnknownPatient for a record number in none of the three lists.
DatasetSplit inter_patient_split(const std::vector<BeatRef>& beats);

// Seeded random partition of all beats. Stratified per class by default so
// every class lands within rounding of `fraction`; plain corpus-wide shuffle
// available for comparison.
DatasetSplit intra_patient_split(const std::vector<BeatRef>& beats, double fraction,
                                 std::uint64_t seed, bool stratified = true);

// Removes classes outside `keep` from both sides. Idempotent.
DatasetSplit filter_classes(const DatasetSplit& split,
                            const std::set<AamiClass>& keep = {AamiClass::N, AamiClass::S,
                                                               AamiClass::V, AamiClass::F});

enum class BalanceMode { Oversample, Undersample };

// Equalizes training-side class counts; the test side is never touched.
// Oversampling appends synthetic BeatRefs drawing seeded augmentation ops
// round-robin over the class's source beats; undersampling subsamples the
// majority classes. Throws EmptyClass when a present class has zero beats.
DatasetSplit balance_training(const DatasetSplit& split, BalanceMode mode, std::uint64_t seed);

// JSON manifest of a split (paradigm, seed, patient lists, per-beat entries).
std::string split_to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const std::string& json_text);

// CSV census block: one row per subset, columns subset,N,S,V,F,Q,total.
std::string census_csv(const std::vector<std::pair<std::string, ClassCensus>>& rows);

}  // namespace ecg::dataset
