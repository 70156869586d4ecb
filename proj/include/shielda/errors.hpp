#pragma once

#include <stdexcept>
#include <string>

namespace shielda {

/// Root of the error hierarchy. Every failure raised by the engine derives
/// from this so callers can catch engine faults without swallowing
/// std::bad_alloc and friends.
class EngineError : public std::runtime_error {
 public:
  explicit EngineError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input document (bad JSON, missing required field, bad enum token).
class ParseError : public EngineError {
 public:
  explicit ParseError(const std::string& what) : EngineError(what) {}
};

/// Structurally valid input that violates a semantic constraint
/// (duplicate ids, wrong cardinality, unknown cross-reference).
class IntegrityError : public EngineError {
 public:
  explicit IntegrityError(const std::string& what) : EngineError(what) {}
};

/// A rule or mapping names an exception type absent from the taxonomy.
class UnknownTargetError : public IntegrityError {
 public:
  explicit UnknownTargetError(const std::string& what) : IntegrityError(what) {}
};

/// A handler triad names a value outside its dimension's domain.
class InvalidTriadError : public IntegrityError {
 public:
  InvalidTriadError(const std::string& dimension, const std::string& what)
      : IntegrityError(what), dimension_(dimension) {}

  /// Offending dimension: "local", "flow" or "recovery".
  const std::string& dimension() const { return dimension_; }

 private:
  std::string dimension_;
};

/// State recovery could not be applied (missing checkpoint, missing
/// side-effect record for compensation).
class StateRecoveryError : public EngineError {
 public:
  explicit StateRecoveryError(const std::string& what) : EngineError(what) {}
};

/// Skip was requested for a step whose successors hard-depend on its output.
class DependencyViolationError : public EngineError {
 public:
  explicit DependencyViolationError(const std::string& what) : EngineError(what) {}
};

/// Checkpoint id not present in the checkpoint store.
class UnknownCheckpointError : public EngineError {
 public:
  explicit UnknownCheckpointError(const std::string& what) : EngineError(what) {}
};

/// Event log file that cannot be decoded back into events.
class MalformedLogError : public EngineError {
 public:
  explicit MalformedLogError(const std::string& what) : EngineError(what) {}
};

/// Corrective directive synthesis was invoked without the inputs it needs.
class MissingGoalError : public EngineError {
 public:
  explicit MissingGoalError(const std::string& what) : EngineError(what) {}
};

/// Scenario definition is internally inconsistent.
class ScenarioConfigError : public EngineError {
 public:
  explicit ScenarioConfigError(const std::string& what) : EngineError(what) {}
};

/// Fault injection referenced a step the plan does not contain.
class UnknownStepError : public ScenarioConfigError {
 public:
  explicit UnknownStepError(const std::string& what) : ScenarioConfigError(what) {}
};

/// Filesystem failure while reading or writing engine artifacts.
class IoError : public EngineError {
 public:
  explicit IoError(const std::string& what) : EngineError(what) {}
};

}  // namespace shielda
