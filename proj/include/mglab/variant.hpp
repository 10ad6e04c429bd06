#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mglab {

/// The five wiring configurations compared in the ablation.
enum class MethodVariant { BL, WO_SG, WO_M, WO_DG, PP };

inline constexpr std::array<MethodVariant, 5> kAllVariants = {MethodVariant::BL, MethodVariant::WO_SG,
                                                              MethodVariant::WO_M, MethodVariant::WO_DG,
                                                              MethodVariant::PP};

struct Wiring {
  bool static_module = true;
  bool moving_module = true;
  bool dynamic_module = true;
};

inline Wiring wiring(MethodVariant v) {
  switch (v) {
    case MethodVariant::BL: return {true, false, false};
    case MethodVariant::WO_SG: return {false, true, true};
    case MethodVariant::WO_M: return {true, false, true};
    case MethodVariant::WO_DG: return {true, true, false};
    case MethodVariant::PP: return {true, true, true};
  }
  throw std::logic_error("unknown variant");
}

inline std::string_view variant_name(MethodVariant v) {
  switch (v) {
    case MethodVariant::BL: return "BL";
    case MethodVariant::WO_SG: return "WO_SG";
    case MethodVariant::WO_M: return "WO_M";
    case MethodVariant::WO_DG: return "WO_DG";
    case MethodVariant::PP: return "PP";
  }
  return "?";
}

/// Accepts the canonical names plus the table spellings ("w/o SG").
inline MethodVariant parse_variant(std::string_view s) {
  std::string k;
  for (char c : s) {
    if (c == ' ' || c == '/' || c == '_' || c == '-') continue;
    k.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  if (k == "BL") return MethodVariant::BL;
  if (k == "WOSG") return MethodVariant::WO_SG;
  if (k == "WOM") return MethodVariant::WO_M;
  if (k == "WODG") return MethodVariant::WO_DG;
  if (k == "PP") return MethodVariant::PP;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "' (expected BL, WO_SG, WO_M, WO_DG or PP)");
}

}  // namespace mglab
