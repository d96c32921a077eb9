#include "speedmode/modes.hpp"

#include <algorithm>
#include <cctype>
#include <utility>

namespace speedmode {
namespace {

std::string normalize(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    if (c == '-' || c == ' ') c = '_';
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

struct Entry {
  std::string_view label;
  std::optional<Mode> mode;
};

// Geolife and MOBIS vocabularies. Entries mapped to nullopt are known
// modes that fall outside the five harmonized classes.
constexpr Entry kVocabulary[] = {
    {"bike", Mode::Bike},          {"bicycle", Mode::Bike},      {"bus", Mode::Bus},
    {"car", Mode::Car},            {"taxi", Mode::Car},          {"train", Mode::Train},
    {"subway", Mode::Train},       {"light_rail", Mode::Train},  {"lightrail", Mode::Train},
    {"regional_train", Mode::Train}, {"regionaltrain", Mode::Train}, {"tram", Mode::Train},
    {"walk", Mode::Walk},          {"airplane", std::nullopt},   {"boat", std::nullopt},
    {"ferry", std::nullopt},       {"motorcycle", std::nullopt}, {"run", std::nullopt},
    {"aerialway", std::nullopt},
};

const Entry* lookup(std::string_view raw) {
  const auto key = normalize(raw);
  for (const auto& e : kVocabulary) {
    if (e.label == key) return &e;
  }
  return nullptr;
}

}  // namespace

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::Bike: return "Bike";
    case Mode::Bus: return "Bus";
    case Mode::Car: return "Car";
    case Mode::Train: return "Train";
    case Mode::Walk: return "Walk";
  }
  return "?";
}

std::optional<Mode> mode_from_name(std::string_view name) {
  const auto key = normalize(name);
  for (auto m : kAllModes) {
    if (normalize(mode_name(m)) == key) return m;
  }
  return std::nullopt;
}

std::optional<Mode> mode_from_ordinal(long long ordinal) {
  if (ordinal < 0 || ordinal >= static_cast<long long>(kNumModes)) return std::nullopt;
  return static_cast<Mode>(ordinal);
}

std::optional<Mode> harmonize_label(std::string_view raw) {
  const auto* e = lookup(raw);
  return e ? e->mode : std::nullopt;
}

bool LabelAudit::is_known(std::string_view raw) { return lookup(raw) != nullptr; }

std::optional<Mode> LabelAudit::harmonize(std::string_view raw) {
  auto m = harmonize_label(raw);
  if (!m) ++dropped_[normalize(raw)];
  return m;
}

std::size_t LabelAudit::total_dropped() const {
  std::size_t n = 0;
  for (const auto& [_, c] : dropped_) n += c;
  return n;
}

}  // namespace speedmode
