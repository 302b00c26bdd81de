#pragma once

#include <stdexcept>
#include <string>

namespace spse {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can report a stable machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define SPSE_DEFINE_ERROR(Name, kind_label)                                   \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& message) : Error(kind_label, message) {} \
  };

SPSE_DEFINE_ERROR(ShapeError, "shape")
SPSE_DEFINE_ERROR(ProvenanceError, "provenance")
SPSE_DEFINE_ERROR(NumericError, "numeric")
SPSE_DEFINE_ERROR(ArgumentError, "argument")
SPSE_DEFINE_ERROR(VocabularyError, "vocabulary")
SPSE_DEFINE_ERROR(RangeError, "range")
SPSE_DEFINE_ERROR(DegenerateGuidanceError, "degenerate_guidance")
SPSE_DEFINE_ERROR(TrainingError, "training")
SPSE_DEFINE_ERROR(FormatError, "format")
SPSE_DEFINE_ERROR(ConfigError, "config")
SPSE_DEFINE_ERROR(IoError, "io")
SPSE_DEFINE_ERROR(MetricError, "metric")

#undef SPSE_DEFINE_ERROR

}  // namespace spse
