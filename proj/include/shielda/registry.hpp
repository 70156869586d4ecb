#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shielda/taxonomy.hpp"

namespace shielda {

/// The 40 local handling mechanisms, in catalogue order.
enum class LocalHandlingMechanism : std::uint8_t {
  ClarifyPrompt = 1,
  EchoValidation,
  ContextTagging,
  DefaultInterpretation,
  DisentangledPrompting,
  PromptRewriting,
  PromptSanitization,
  GraphValidation,
  KbTrustScoring,
  LogicReranking,
  RecursiveCheckpointing,
  AbortTaskChain,
  ConflictResolution,
  ConstraintPruning,
  ForwardChaining,
  PeerConfirmation,
  PlanRepair,
  PlanShortening,
  RoleBasedCheck,
  SubgoalReordering,
  AttributeFiltering,
  EscalateUiFailure,
  ExternalCallTimeout,
  Fallback,
  FallbackToAlternateApi,
  LowConfidenceFilter,
  MemorySlotIsolation,
  OracleVerification,
  OutputSanitization,
  OutputTruncation,
  ProtocolDowngrade,
  ResetMemory,
  ResponseNormalization,
  RetryWithBackoff,
  SamplingAdjustment,
  SchemaValidation,
  SemanticConstraintChecking,
  SwitchTool,
  TimeoutEscalation,
  EscalateToHuman,
};

inline constexpr std::size_t kMechanismCount = 40;

/// Canonical display name, e.g. "Retry with Backoff".
std::string to_string(LocalHandlingMechanism mechanism);

/// One-line description of what the mechanism does.
std::string_view mechanism_description(LocalHandlingMechanism mechanism);

/// Resolves a mechanism name. Accepts the canonical names plus a small,
/// documented set of catalogue variants ("Forward Checking", "Fallback
/// Template", "External Call Timeout Fallback", "Conflict Resolution
/// Prompt"). Throws InvalidTriadError("local", ...) for anything else.
LocalHandlingMechanism mechanism_from_name(std::string_view name);

enum class FlowControlDecision : std::uint8_t { Continue, Skip, Abort };
std::string to_string(FlowControlDecision flow);
FlowControlDecision flow_from_string(std::string_view token);

enum class StateRecoveryAction : std::uint8_t { NoOp, Rollback, Compensate };
std::string to_string(StateRecoveryAction recovery);
StateRecoveryAction recovery_from_string(std::string_view token);

/// A triadic handler: what to try locally, how the flow proceeds, and how
/// state is repaired.
struct HandlerPattern {
  std::string pattern_id;  ///< e.g. "P012"
  LocalHandlingMechanism local = LocalHandlingMechanism::EscalateToHuman;
  FlowControlDecision flow = FlowControlDecision::Abort;
  StateRecoveryAction recovery = StateRecoveryAction::NoOp;

  friend bool operator==(const HandlerPattern& a, const HandlerPattern& b) {
    return a.pattern_id == b.pattern_id && a.local == b.local && a.flow == b.flow &&
           a.recovery == b.recovery;
  }
};

nlohmann::json serialize(const HandlerPattern& pattern);

/// Validates a triad given by name and returns it as a HandlerPattern.
/// Throws InvalidTriadError naming the offending dimension.
HandlerPattern validate_pattern(std::string_view pattern_id, std::string_view local,
                                std::string_view flow, std::string_view recovery);
HandlerPattern validate_pattern(std::string_view local, std::string_view flow,
                                std::string_view recovery);

/// Pattern catalogue plus the exception-to-pattern mapping.
class PatternRegistry {
 public:
  const std::vector<HandlerPattern>& patterns() const { return patterns_; }
  const std::map<std::string, std::string>& mapping() const { return mapping_; }
  const std::string& default_pattern_id() const { return default_pattern_id_; }

  /// nullptr when the id is unknown.
  const HandlerPattern* pattern(std::string_view pattern_id) const;

  friend PatternRegistry load_registry(std::istream& in, const Taxonomy& taxonomy);

 private:
  std::vector<HandlerPattern> patterns_;  // data-file order
  std::map<std::string, std::string> mapping_;
  std::string default_pattern_id_;
};

/// Throws ParseError / IntegrityError / InvalidTriadError / UnknownTargetError.
/// Mapped exception ids must exist in the taxonomy; mapped and default
/// pattern ids must exist in the catalogue.
PatternRegistry load_registry(std::istream& in, const Taxonomy& taxonomy);
PatternRegistry load_registry_file(const std::string& path, const Taxonomy& taxonomy);

/// Total resolution: the mapped pattern when one exists, the registry
/// default otherwise (including for Unclassified and non-taxonomy ids).
const HandlerPattern& resolve(const PatternRegistry& registry, std::string_view exception_id);

/// Inverse of load_registry up to canonical mechanism naming.
nlohmann::json serialize(const PatternRegistry& registry);

}  // namespace shielda
