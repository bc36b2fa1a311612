#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "mpd/denoiser/adamw.hpp"
#include "mpd/denoiser/params.hpp"
#include "mpd/diffusion/sampling.hpp"
#include "mpd/error.hpp"
#include "mpd/prodmp/types.hpp"
#include "mpd/variant.hpp"

// JSON views of the configuration structs. Reading is an overlay: keys that
// are present replace the current value, absent keys keep it, unknown keys are
// rejected so that typos in config files do not pass silently.
namespace mpd {

using Json = nlohmann::json;

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool found = false;
    for (const char* k : known) found = found || it.key() == k;
    if (!found) throw ConfigError("unknown key '" + it.key() + "' in " + what);
  }
}

template <typename T>
void overlay(const Json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline Json to_json(const prodmp::ProDMPConfig& c) {
  return {{"dof", c.dof},           {"n_basis", c.n_basis},         {"alpha", c.alpha},
          {"duration", c.duration}, {"alpha_phase", c.alpha_phase}, {"grid_dt", c.grid_dt},
          {"basis_width", c.basis_width}};
}

inline void overlay_json(const Json& j, prodmp::ProDMPConfig& c) {
  detail::reject_unknown(j, {"dof", "n_basis", "alpha", "duration", "alpha_phase", "grid_dt", "basis_width"}, "prodmp");
  detail::overlay(j, "dof", c.dof);
  detail::overlay(j, "n_basis", c.n_basis);
  detail::overlay(j, "alpha", c.alpha);
  detail::overlay(j, "duration", c.duration);
  detail::overlay(j, "alpha_phase", c.alpha_phase);
  detail::overlay(j, "grid_dt", c.grid_dt);
  detail::overlay(j, "basis_width", c.basis_width);
}

inline const char* to_string(diffusion::LossWeighting w) {
  switch (w) {
    case diffusion::LossWeighting::kLiteral: return "literal";
    case diffusion::LossWeighting::kEdm: return "edm";
    default: return "balanced";
  }
}

inline Json to_json(const diffusion::NoiseConfig& c) {
  return {{"sigma_min", c.sigma_min},     {"sigma_max", c.sigma_max},     {"sigma_data", c.sigma_data},
          {"train_loc", c.train_loc},     {"train_scale", c.train_scale}, {"n_sample_steps", c.n_sample_steps},
          {"weighting", to_string(c.weighting)}};
}

inline void overlay_json(const Json& j, diffusion::NoiseConfig& c) {
  detail::reject_unknown(j, {"sigma_min", "sigma_max", "sigma_data", "train_loc", "train_scale", "n_sample_steps", "weighting"},
                         "noise");
  detail::overlay(j, "sigma_min", c.sigma_min);
  detail::overlay(j, "sigma_max", c.sigma_max);
  detail::overlay(j, "sigma_data", c.sigma_data);
  detail::overlay(j, "train_loc", c.train_loc);
  detail::overlay(j, "train_scale", c.train_scale);
  detail::overlay(j, "n_sample_steps", c.n_sample_steps);
  if (j.contains("weighting")) {
    const std::string w = j.at("weighting").get<std::string>();
    if (w == "literal") c.weighting = diffusion::LossWeighting::kLiteral;
    else if (w == "edm") c.weighting = diffusion::LossWeighting::kEdm;
    else if (w == "balanced") c.weighting = diffusion::LossWeighting::kBalanced;
    else throw ConfigError("weighting must be 'literal', 'edm' or 'balanced'");
  }
}

inline Json to_json(const denoiser::Architecture& a) {
  return {{"variant", to_string(a.variant)}, {"horizon", a.horizon}, {"dof", a.dof},
          {"history", a.history},            {"obs_dim", a.obs_dim}, {"n_basis", a.n_basis},
          {"hidden", a.hidden}};
}

inline void overlay_json(const Json& j, denoiser::Architecture& a) {
  detail::reject_unknown(j, {"variant", "horizon", "dof", "history", "obs_dim", "n_basis", "hidden"}, "architecture");
  if (j.contains("variant")) a.variant = variant_from_string(j.at("variant").get<std::string>());
  detail::overlay(j, "horizon", a.horizon);
  detail::overlay(j, "dof", a.dof);
  detail::overlay(j, "history", a.history);
  detail::overlay(j, "obs_dim", a.obs_dim);
  detail::overlay(j, "n_basis", a.n_basis);
  detail::overlay(j, "hidden", a.hidden);
}

inline Json to_json(const denoiser::AdamWConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2},
          {"epsilon", c.epsilon},             {"weight_decay", c.weight_decay}};
}

inline void overlay_json(const Json& j, denoiser::AdamWConfig& c) {
  detail::reject_unknown(j, {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay"}, "optimizer");
  detail::overlay(j, "learning_rate", c.learning_rate);
  detail::overlay(j, "beta1", c.beta1);
  detail::overlay(j, "beta2", c.beta2);
  detail::overlay(j, "epsilon", c.epsilon);
  detail::overlay(j, "weight_decay", c.weight_decay);
}

}  // namespace mpd
