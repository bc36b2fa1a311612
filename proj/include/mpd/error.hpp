#pragma once

#include <stdexcept>
#include <string>

namespace mpd {

// Root of every error raised by the library. Subclasses name the failure
// class so callers (the CLI in particular) can map them to diagnostics.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("configuration error: " + what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical error: " + what) {}
};

class RangeError : public Error {
 public:
  explicit RangeError(const std::string& what) : Error("range error: " + what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract error: " + what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error("training error: " + what) {}
};

class SamplingError : public Error {
 public:
  explicit SamplingError(const std::string& what) : Error("sampling error: " + what) {}
};

class SimulationError : public Error {
 public:
  explicit SimulationError(const std::string& what) : Error("simulation error: " + what) {}
};

class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& what) : Error("generation error: " + what) {}
};

class DatasetError : public Error {
 public:
  explicit DatasetError(const std::string& what) : Error("dataset error: " + what) {}
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpointError : public CheckpointError {
 public:
  explicit CorruptCheckpointError(const std::string& what)
      : CheckpointError("corrupt checkpoint: " + what) {}
};

class CheckpointVersionError : public CheckpointError {
 public:
  explicit CheckpointVersionError(const std::string& what)
      : CheckpointError("checkpoint version mismatch: " + what) {}
};

class DimensionError : public CheckpointError {
 public:
  explicit DimensionError(const std::string& what) : CheckpointError("dimension error: " + what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage error: " + what) {}
};

}  // namespace mpd
