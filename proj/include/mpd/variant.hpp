#pragma once

#include <string>

#include "mpd/error.hpp"

namespace mpd {

enum class Variant {
  kMpd,         // diffusion; inner model emits ProDMP weights decoded into the sequence
  kBaseline,    // diffusion; inner model emits the sequence directly (skip/out preconditioned)
  kRegression,  // single-Gaussian behavior cloning: observations -> weights, mean-squared error
};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kMpd: return "mpd";
    case Variant::kBaseline: return "baseline";
    case Variant::kRegression: return "regression";
  }
  return "unknown";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "mpd") return Variant::kMpd;
  if (s == "baseline") return Variant::kBaseline;
  if (s == "regression" || s == "bc") return Variant::kRegression;
  throw ConfigError("unknown variant '" + s + "'");
}

inline bool emits_weights(Variant v) { return v != Variant::kBaseline; }
inline bool is_diffusion(Variant v) { return v != Variant::kRegression; }

}  // namespace mpd
