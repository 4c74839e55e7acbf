#pragma once

#include <stdexcept>
#include <string>

namespace klagg {

/// Canonical parameter or observation outside the family's domain/support.
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Intermediate exponential would overflow double precision.
struct OverflowGuard : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operation needs the synthetic truth but none was attached to the problem.
struct MissingTruth : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct WrongFamily : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A curvature/variance condition required by the requested bound fails.
struct ConditionViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Oracle solve left a residual too large to trust downstream excess values.
struct OracleNotConverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnboundedDomain : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PreconditionViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AuditFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedFamily : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyPacking : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DictionaryRangeViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad user-supplied configuration (CLI, JSON, CSV).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace klagg
