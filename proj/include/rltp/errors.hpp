#pragma once

#include <stdexcept>
#include <string>

namespace rltp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unparseable input (config text, log lines, artifact headers).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A structurally valid input that violates a documented invariant.
// Messages name the offending field.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Tensor/layer shape mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent wiring (e.g. no embedding table for a feature).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Artifact and runtime layouts disagree (feature layout, action grid).
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

// step() called on a finished episode.
class EpisodeCompleteError : public Error {
 public:
  using Error::Error;
};

// Non-finite value surfaced from a network evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage failed; message carries the stage name, the payload the
// manifest of whatever completed before the failure.
class PipelineError : public Error {
 public:
  PipelineError(const std::string& stage, const std::string& what,
                std::string partial_manifest = "")
      : Error("stage '" + stage + "': " + what),
        stage_(stage),
        partial_manifest_(std::move(partial_manifest)) {}
  const std::string& stage() const { return stage_; }
  // Serialized manifest covering the artifacts written so far.
  const std::string& partial_manifest() const { return partial_manifest_; }

 private:
  std::string stage_;
  std::string partial_manifest_;
};

}  // namespace rltp
