#pragma once

#include <stdexcept>
#include <string>

namespace scgs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SCGS_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

SCGS_DEFINE_ERROR(ConfigError);
SCGS_DEFINE_ERROR(ParseError);
SCGS_DEFINE_ERROR(IoError);
SCGS_DEFINE_ERROR(InputError);
SCGS_DEFINE_ERROR(SpecError);
SCGS_DEFINE_ERROR(CheckpointError);
SCGS_DEFINE_ERROR(TrainingError);
SCGS_DEFINE_ERROR(MergeError);
SCGS_DEFINE_ERROR(ReportError);
SCGS_DEFINE_ERROR(EvaluationError);
SCGS_DEFINE_ERROR(GenerationError);
SCGS_DEFINE_ERROR(ProtocolError);
SCGS_DEFINE_ERROR(DependencyError);

#undef SCGS_DEFINE_ERROR

/// Raised when a pipeline stage fails; carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace scgs
