#pragma once

#include <string>
#include <vector>

#include "mpd/denoiser/mlp.hpp"
#include "mpd/denoiser/normalization.hpp"
#include "mpd/error.hpp"
#include "mpd/random.hpp"
#include "mpd/variant.hpp"

namespace mpd::denoiser {

// Shapes of the inner model for one task.
struct Architecture {
  Variant variant = Variant::kMpd;
  int horizon = 12;  // n predicted steps
  int dof = 4;       // k
  int history = 3;   // m observation steps
  int obs_dim = 12;
  int n_basis = 3;
  std::vector<int> hidden{256, 256, 256};

  int sequence_size() const { return horizon * dof; }
  int weight_size() const { return dof * (n_basis + 1); }
  int input_dim() const {
    const int obs = history * obs_dim;
    return is_diffusion(variant) ? sequence_size() + obs + 1 : obs;
  }
  int output_dim() const { return emits_weights(variant) ? weight_size() : sequence_size(); }

  std::vector<int> layer_dims() const {
    std::vector<int> dims{input_dim()};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output_dim());
    return dims;
  }

  void validate() const {
    if (horizon < 1 || dof < 1 || history < 1 || obs_dim < 1 || n_basis < 1)
      throw ConfigError("architecture sizes must be >= 1");
    for (int h : hidden)
      if (h < 1) throw ConfigError("hidden layer sizes must be >= 1");
  }
};

// Trainable weights of the inner model plus the data normalization it was trained with.
struct DenoiserParams {
  Architecture arch;
  Mlp net;
  NormStats action_norm;
  NormStats obs_norm;

  void validate() const {
    arch.validate();
    if (net.dims() != arch.layer_dims()) throw DimensionError("network layout does not match architecture");
    if (action_norm.size() != arch.dof || obs_norm.size() != arch.obs_dim)
      throw DimensionError("normalization statistics do not match architecture");
    action_norm.validate();
    obs_norm.validate();
    if (!net.parameters().allFinite()) throw ContractError("network parameters are not finite");
  }
};

inline DenoiserParams init_params(Rng& rng, const Architecture& arch) {
  arch.validate();
  DenoiserParams p{arch, Mlp(arch.layer_dims()), NormStats::identity(arch.dof),
                   NormStats::identity(arch.obs_dim)};
  p.net.initialize(rng);
  return p;
}

}  // namespace mpd::denoiser
