#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shielda/taxonomy.hpp"

namespace shielda {

/// Where a raw signal was observed.
enum class SignalOrigin : std::uint8_t {
  ToolCall,
  ModelOutput,
  AgentMessage,
  ExternalSystem,
  Internal,
};

std::string to_string(SignalOrigin origin);
SignalOrigin origin_from_string(std::string_view token);

/// An exception as it arrives from the runtime, before classification.
struct RawExceptionSignal {
  std::string message;  ///< non-empty
  std::optional<Phase> source_phase_hint;
  SignalOrigin origin = SignalOrigin::Internal;
  std::map<std::string, std::string> structured_fields;
  std::string thread_id;
  std::optional<std::string> step_ref;
};

nlohmann::json serialize(const RawExceptionSignal& signal);
RawExceptionSignal signal_from_json(const nlohmann::json& doc);

/// Reserved id marking a signal no rule matched. Never a taxonomy id.
inline constexpr const char* kUnclassifiedId = "unclassified";

/// Classification verdict. Unclassified is a first-class value, not an error.
struct Classification {
  std::string exception_id = kUnclassifiedId;
  Phase phase = Phase::Execution;
  std::optional<ArtifactKind> artifact;
  std::optional<std::string> matched_rule;
  std::vector<std::string> evidence;

  bool classified() const { return exception_id != kUnclassifiedId; }
};

nlohmann::json serialize(const Classification& classification);
Classification classification_from_json(const nlohmann::json& doc);

/// Match conditions of one rule; present conditions are conjunctive.
struct RulePredicate {
  std::optional<std::string> message_substring;
  std::optional<std::string> message_regex;
  std::map<std::string, std::string> fields;
  std::optional<SignalOrigin> origin;
};

struct ClassificationRule {
  std::string rule_id;
  int priority = 0;
  RulePredicate predicate;
  std::string target;  ///< taxonomy exception id
  std::string notes;

  std::size_t file_index = 0;
  std::shared_ptr<const std::regex> compiled_regex;
  Phase target_phase = Phase::Execution;
  ArtifactKind target_artifact = ArtifactKind::Goal;
};

/// Ordered, validated rule collection. Evaluation order is priority
/// descending with file order breaking ties; first match wins.
class RuleSet {
 public:
  const std::vector<ClassificationRule>& rules() const { return rules_; }

  /// Exception ids at least one rule targets.
  std::vector<std::string> covered_ids() const;

  friend RuleSet load_rules(std::istream& in, const Taxonomy& taxonomy);

 private:
  std::vector<ClassificationRule> rules_;  // already sorted for evaluation
};

/// Throws ParseError on malformed documents and UnknownTargetError when a
/// rule targets an id the taxonomy does not define.
RuleSet load_rules(std::istream& in, const Taxonomy& taxonomy);
RuleSet load_rules_file(const std::string& path, const Taxonomy& taxonomy);

/// Deterministic, total classification. A signal nothing matches comes back
/// Unclassified with the phase resolved from the hint (Execution without
/// one). For matched entries with phase Both the same hint rule applies.
Classification classify(const RuleSet& rules, const RawExceptionSignal& signal);

/// Restriction of classify used during escalation: when the evidence chain's
/// root event happened in the reasoning/planning phase, only rules whose
/// target lives in RP or RP/E are candidates.
Classification classify_restricted_to_phase(const RuleSet& rules,
                                            const RawExceptionSignal& signal,
                                            std::optional<Phase> required_phase);

}  // namespace shielda
