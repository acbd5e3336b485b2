#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>

namespace cropsim {

/// Growth conditions attached to one image: day, treatment and per-species
/// simulated biomass (t/ha, spring wheat then faba bean).
struct ConditionSet {
  int t = 0;
  std::optional<int> c;
  std::optional<std::array<double, 2>> b;

  friend bool operator==(const ConditionSet&, const ConditionSet&) = default;
};

/// Which condition types a model consumes; fixes the embedding layout
/// [time, treatment, biomass] with absent types omitted.
struct ActiveConditions {
  bool time = true;
  bool treatment = false;
  bool biomass = false;

  int count() const { return int{time} + int{treatment} + int{biomass}; }
  std::string str() const {
    std::string s;
    if (time) s += "t";
    if (treatment) s += s.empty() ? "c" : ",c";
    if (biomass) s += s.empty() ? "b" : ",b";
    return s;
  }
  friend bool operator==(const ActiveConditions&, const ActiveConditions&) = default;
};

/// Parses "t", "t,c", "t,c,b", ... into ActiveConditions.
ActiveConditions parse_active_conditions(const std::string& spec);

class ConditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-species z-score statistics for biomass conditions (training split).
struct BiomassNormalizer {
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> stddev{1.0, 1.0};

  std::array<double, 2> apply(const std::array<double, 2>& b) const {
    return {(b[0] - mean[0]) / stddev[0], (b[1] - mean[1]) / stddev[1]};
  }
};

/// Validates a condition set against the active types and vocabulary size.
void validate_conditions(const ConditionSet& y, const ActiveConditions& active, int n_treatments);

}  // namespace cropsim
