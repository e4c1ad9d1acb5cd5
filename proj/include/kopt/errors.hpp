#pragma once

#include <stdexcept>
#include <string>

namespace kopt {

// Exit codes used by the CLI; library code throws, the CLI maps.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitGeneration = 3,
  kExitOptimization = 4,
  kExitEvaluation = 5,
  kExitSchema = 6,
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct OptimizationError : std::runtime_error {
  explicit OptimizationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Every frame / every sample was unusable for PnP.
struct EvaluationError : std::runtime_error {
  explicit EvaluationError(const std::string& msg) : std::runtime_error(msg) {}
};

// File does not match one of the JSONL schemas (detections, dataset, ...).
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PnpError : std::runtime_error {
  enum class Kind { too_few_points, degenerate, behind_camera };
  PnpError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  Kind kind;
};

}  // namespace kopt
