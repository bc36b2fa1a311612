#pragma once

#include <memory>
#include <string>

#include "mpd/env/lattice.hpp"
#include "mpd/env/obstacle.hpp"
#include "mpd/error.hpp"

namespace mpd::env {

struct TaskDefaults {
  double success_threshold = 0.05;
  int max_steps = 60;  // low-rate steps per rollout
};

inline std::unique_ptr<Environment> make_environment(const std::string& task) {
  if (task == "lattice") return std::make_unique<LatticeEnv>();
  if (task == "obstacle") return std::make_unique<ObstacleEnv>();
  throw ConfigError("unknown task '" + task + "' (expected lattice or obstacle)");
}

inline TaskDefaults task_defaults(const std::string& task) {
  make_environment(task);  // validates the name
  return TaskDefaults{};
}

}  // namespace mpd::env
