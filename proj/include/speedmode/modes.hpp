#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace speedmode {

/// The five harmonized transportation modes. Ordinals are alphabetical and
/// fixed; they index logits, confusion-matrix rows and file encodings.
enum class Mode : int { Bike = 0, Bus = 1, Car = 2, Train = 3, Walk = 4 };

inline constexpr std::size_t kNumModes = 5;
inline constexpr std::array<Mode, kNumModes> kAllModes = {Mode::Bike, Mode::Bus, Mode::Car,
                                                          Mode::Train, Mode::Walk};

constexpr int ordinal(Mode m) { return static_cast<int>(m); }
std::string_view mode_name(Mode m);
/// Inverse of mode_name (case-insensitive). Unlike harmonize_label this
/// accepts only the five canonical names.
std::optional<Mode> mode_from_name(std::string_view name);
std::optional<Mode> mode_from_ordinal(long long ordinal);

/// Maps a raw dataset label (Geolife, MOBIS vocabularies) to a harmonized
/// mode. Returns nullopt for labels that are dropped, whether deliberately
/// (airplane, boat, ...) or because they are unknown. Never throws.
std::optional<Mode> harmonize_label(std::string_view raw);

/// Counts of dropped raw labels, keyed by the lower-cased raw label.
class LabelAudit {
 public:
  std::optional<Mode> harmonize(std::string_view raw);
  const std::map<std::string, std::size_t>& dropped() const { return dropped_; }
  std::size_t total_dropped() const;
  /// True when the raw label is not part of any known vocabulary.
  static bool is_known(std::string_view raw);

 private:
  std::map<std::string, std::size_t> dropped_;
};

}  // namespace speedmode
