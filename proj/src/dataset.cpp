#include "ecg/dataset.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "ecg/rng.hpp"

namespace ecg::dataset {

namespace {

bool contains(const auto& arr, int id) {
  return std::find(arr.begin(), arr.end(), id) != arr.end();
}

}  // namespace

std::vector<int> all_record_ids() {
  std::vector<int> ids;
  ids.insert(ids.end(), kDs1.begin(), kDs1.end());
  ids.insert(ids.end(), kDs2.begin(), kDs2.end());
  ids.insert(ids.end(), kExcludedRecords.begin(), kExcludedRecords.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

ClassCensus census(const std::vector<BeatRef>& beats) {
  ClassCensus c;
  for (const auto& b : beats) {
    ++c.counts[static_cast<int>(b.cls)];
    ++c.total;
  }
  return c;
}

std::vector<BeatRef> beats_of_record(const wfdb::EcgRecord& rec) {
  std::vector<BeatRef> beats;
  int beat_index = 0;
  for (const auto& ev : rec.annotations) {
    if (auto cls = map_aami(ev.symbol)) {
      BeatRef b;
      b.record = rec.patient_id;
      b.beat_index = beat_index++;
      b.cls = *cls;
      beats.push_back(b);
    }
  }
  return beats;
}

DatasetSplit inter_patient_split(const std::vector<BeatRef>& beats) {
  DatasetSplit split;
  split.paradigm = Paradigm::InterPatient;
  for (const auto& b : beats) {
    if (contains(kDs1, b.record)) {
      split.train.push_back(b);
      split.train_patients.insert(b.record);
    } else if (contains(kDs2, b.record)) {
      split.test.push_back(b);
      split.test_patients.insert(b.record);
    } else if (contains(kExcludedRecords, b.record)) {
      // paced records stay out of both sides
    } else {
      throw UnknownPatient("record " + std::to_string(b.record) +
                           " is in neither DS1, DS2, nor the excluded list");
    }
  }
  return split;
}

DatasetSplit intra_patient_split(const std::vector<BeatRef>& beats, double fraction,
                                 std::uint64_t seed, bool stratified) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("split fraction must lie in (0, 1)");

  DatasetSplit split;
  split.paradigm = Paradigm::IntraPatient;
  split.seed = seed;

  auto take = [&](std::vector<std::size_t> idx, Rng rng) {
    rng.shuffle(idx);
    const std::size_t n_train =
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? split.train : split.test).push_back(beats[idx[i]]);
  };

  if (stratified) {
    for (int c = 0; c < kNumAamiClasses; ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < beats.size(); ++i)
        if (static_cast<int>(beats[i].cls) == c) idx.push_back(i);
      if (idx.empty()) continue;
      take(std::move(idx), Rng(derive_seed(seed, static_cast<std::uint64_t>(c))));
    }
  } else {
    std::vector<std::size_t> order(beats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    take(std::move(order), Rng(seed));
  }

  for (const auto& b : split.train) split.train_patients.insert(b.record);
  for (const auto& b : split.test) split.test_patients.insert(b.record);
  return split;
}

DatasetSplit filter_classes(const DatasetSplit& split, const std::set<AamiClass>& keep) {
  DatasetSplit out = split;
  auto prune = [&](std::vector<BeatRef>& v) {
    std::erase_if(v, [&](const BeatRef& b) { return !keep.count(b.cls); });
  };
  prune(out.train);
  prune(out.test);
  return out;
}

DatasetSplit balance_training(const DatasetSplit& split, BalanceMode mode, std::uint64_t seed) {
  DatasetSplit out = split;
  const ClassCensus c = census(split.train);

  std::vector<int> present;
  for (int k = 0; k < kNumAamiClasses; ++k)
    if (c.counts[k] > 0) present.push_back(k);
  if (present.empty()) throw EmptyClass("training side is empty");

  if (mode == BalanceMode::Oversample) {
    long target = 0;
    for (int k : present) target = std::max(target, c.counts[k]);
    for (int k : present) {
      std::vector<const BeatRef*> source;
      for (const auto& b : split.train)
        if (static_cast<int>(b.cls) == k && !b.synthetic) source.push_back(&b);
      if (source.empty())
        throw EmptyClass(std::string("no source beats for class ") + kAamiNames[k]);
      Rng rng(derive_seed(seed, 0xb000ULL + static_cast<std::uint64_t>(k)));
      long need = target - c.counts[k];
      std::size_t cursor = 0;
      while (need-- > 0) {
        BeatRef synth = *source[cursor];
        cursor = (cursor + 1) % source.size();
        synth.synthetic = true;
        synth.aug_seed = rng.next_u64();
        switch (rng.uniform_u64(4)) {
          case 0:
            synth.aug = {stft::AugmentKind::Rotate, rng.uniform(-10.0, 10.0), 0.0};
            break;
          case 1:
            synth.aug = {stft::AugmentKind::FlipH, 0.0, 0.0};
            break;
          case 2:
            synth.aug = {stft::AugmentKind::FlipV, 0.0, 0.0};
            break;
          default:
            synth.aug = {stft::AugmentKind::GaussNoise, 0.0, 0.02};
            break;
        }
        out.train.push_back(synth);
      }
    }
  } else {
    long target = c.total;
    for (int k : present) target = std::min(target, c.counts[k]);
    std::vector<BeatRef> kept;
    for (int k : present) {
      std::vector<BeatRef> cls_beats;
      for (const auto& b : split.train)
        if (static_cast<int>(b.cls) == k) cls_beats.push_back(b);
      Rng rng(derive_seed(seed, 0xd000ULL + static_cast<std::uint64_t>(k)));
      rng.shuffle(cls_beats);
      cls_beats.resize(static_cast<std::size_t>(target));
      kept.insert(kept.end(), cls_beats.begin(), cls_beats.end());
    }
    out.train = std::move(kept);
  }
  return out;
}

namespace {

nlohmann::json beat_to_json(const BeatRef& b) {
  nlohmann::json j{{"record", b.record}, {"beat", b.beat_index},
                   {"class", std::string(1, aami_name(b.cls))}};
  if (b.synthetic) {
    const char* kind = nullptr;
    switch (b.aug.kind) {
      case stft::AugmentKind::Rotate: kind = "rotate"; break;
      case stft::AugmentKind::FlipH: kind = "flip_h"; break;
      case stft::AugmentKind::FlipV: kind = "flip_v"; break;
      case stft::AugmentKind::GaussNoise: kind = "gauss_noise"; break;
    }
    j["augment"] = {{"kind", kind}, {"angle_deg", b.aug.angle_deg},
                    {"sigma", b.aug.sigma}, {"seed", b.aug_seed}};
  }
  return j;
}

BeatRef beat_from_json(const nlohmann::json& j) {
  BeatRef b;
  b.record = j.at("record").get<int>();
  b.beat_index = j.at("beat").get<int>();
  const std::string cls = j.at("class").get<std::string>();
  bool found = false;
  for (int k = 0; k < kNumAamiClasses; ++k)
    if (cls.size() == 1 && cls[0] == kAamiNames[k]) {
      b.cls = static_cast<AamiClass>(k);
      found = true;
    }
  if (!found) throw ConfigError("unknown class label '" + cls + "' in split manifest");
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    b.synthetic = true;
    const std::string kind = a.at("kind").get<std::string>();
    if (kind == "rotate") b.aug.kind = stft::AugmentKind::Rotate;
    else if (kind == "flip_h") b.aug.kind = stft::AugmentKind::FlipH;
    else if (kind == "flip_v") b.aug.kind = stft::AugmentKind::FlipV;
    else if (kind == "gauss_noise") b.aug.kind = stft::AugmentKind::GaussNoise;
    else throw ConfigError("unknown augmentation kind '" + kind + "'");
    b.aug.angle_deg = a.at("angle_deg").get<double>();
    b.aug.sigma = a.at("sigma").get<double>();
    b.aug_seed = a.at("seed").get<std::uint64_t>();
  }
  return b;
}

}  // namespace

std::string split_to_json(const DatasetSplit& split) {
  nlohmann::json j;
  j["paradigm"] = split.paradigm == Paradigm::InterPatient ? "inter_patient" : "intra_patient";
  j["seed"] = split.seed;
  j["train_patients"] = split.train_patients;
  j["test_patients"] = split.test_patients;
  j["train"] = nlohmann::json::array();
  j["test"] = nlohmann::json::array();
  for (const auto& b : split.train) j["train"].push_back(beat_to_json(b));
  for (const auto& b : split.test) j["test"].push_back(beat_to_json(b));
  return j.dump(2);
}

DatasetSplit split_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  DatasetSplit split;
  const std::string paradigm = j.at("paradigm").get<std::string>();
  if (paradigm == "inter_patient") split.paradigm = Paradigm::InterPatient;
  else if (paradigm == "intra_patient") split.paradigm = Paradigm::IntraPatient;
  else throw ConfigError("unknown paradigm '" + paradigm + "' in split manifest");
  split.seed = j.at("seed").get<std::uint64_t>();
  for (int p : j.at("train_patients")) split.train_patients.insert(p);
  for (int p : j.at("test_patients")) split.test_patients.insert(p);
  for (const auto& e : j.at("train")) split.train.push_back(beat_from_json(e));
  for (const auto& e : j.at("test")) split.test.push_back(beat_from_json(e));
  return split;
}

std::string census_csv(const std::vector<std::pair<std::string, ClassCensus>>& rows) {
  std::ostringstream out;
  out << "subset,N,S,V,F,Q,total\n";
  for (const auto& [name, c] : rows) {
    out << name;
    for (int k = 0; k < kNumAamiClasses; ++k) out << ',' << c.counts[k];
    out << ',' << c.total << '\n';
  }
  return out.str();
}

}  // namespace ecg::dataset
