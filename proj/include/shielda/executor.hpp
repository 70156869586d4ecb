#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "shielda/agentops.hpp"
#include "shielda/classifier.hpp"
#include "shielda/registry.hpp"

namespace shielda {

/// Simulation time base. All delays are logical; nothing sleeps.
class LogicalClock {
 public:
  std::int64_t now() const { return now_; }
  void advance(std::int64_t ticks) { now_ += ticks; }

 private:
  std::int64_t now_ = 0;
};

/// Result of one local handling attempt.
struct LocalResult {
  enum class Code : std::uint8_t { Success, Failure, NeedsEscalation, NotImplemented };

  Code code = Code::Failure;
  std::string reason;

  static LocalResult success(std::string reason = "") {
    return {Code::Success, std::move(reason)};
  }
  static LocalResult failure(std::string reason) {
    return {Code::Failure, std::move(reason)};
  }
  static LocalResult needs_escalation(std::string reason = "") {
    return {Code::NeedsEscalation, std::move(reason)};
  }
  static LocalResult not_implemented(std::string reason) {
    return {Code::NotImplemented, std::move(reason)};
  }

  bool ok() const { return code == Code::Success; }
};

std::string to_string(LocalResult::Code code);

/// Exponential backoff schedule: the delay recorded after failed attempt k
/// is base_delay_ms * multiplier^(k-1), scaled by at most (1 + jitter).
struct RetryPolicy {
  std::int64_t base_delay_ms = 100;
  double multiplier = 2.0;
  int max_attempts = 3;
  double jitter = 0.0;  ///< [0,1); 0 keeps the schedule exact
};

std::int64_t backoff_delay_ms(const RetryPolicy& policy, int attempt,
                              double jitter_draw = 0.0);

struct RetryOutcome {
  bool succeeded = false;
  int attempts_used = 0;
  std::vector<std::int64_t> delays_ms;  ///< one entry per failed attempt
  LocalResult last;

  bool exhausted() const { return !succeeded; }
};

/// Runs op up to max_attempts times. The observer fires after every attempt
/// with the delay that follows it (0 after a success). jitter_rng is only
/// consulted when policy.jitter > 0.
RetryOutcome retry_with_backoff(
    const RetryPolicy& policy, const std::function<LocalResult(int attempt)>& op,
    const std::function<void(int attempt, const LocalResult&, std::int64_t delay_ms)>&
        observer = {},
    std::mt19937_64* jitter_rng = nullptr);

/// Access to recoverable agent state, implemented by the environment.
class StatePort {
 public:
  virtual ~StatePort() = default;
  virtual std::string snapshot_scope(ArtifactKind scope) const = 0;
  virtual void restore_scope(ArtifactKind scope, const std::string& snapshot) = 0;
  virtual void reset_memory() = 0;
};

/// Access to the external side-effect ledger, for compensation.
class LedgerPort {
 public:
  virtual ~LedgerPort() = default;
  virtual std::vector<std::uint64_t> effects_for_step(const std::string& step_id) const = 0;
  virtual void compensate_effect(std::uint64_t effect_index) = 0;
  virtual std::string effective_digest() const = 0;
};

enum class HandlingStatus : std::uint8_t {
  Recovered,
  FailedLocal,
  Escalated,
  AbortedThread,
};

std::string to_string(HandlingStatus status);

struct HandlingOutcome {
  HandlingStatus status = HandlingStatus::FailedLocal;
  int attempts_used = 0;
  FlowControlDecision flow = FlowControlDecision::Continue;  ///< pattern's decision
  StateRecoveryAction recovery_applied = StateRecoveryAction::NoOp;
  std::string pattern_id;
  LocalResult last_local;
  bool flow_applied = false;
};

/// Everything a handling episode needs. Built by the engine per exception;
/// capability callbacks the environment cannot offer stay empty and the
/// corresponding mechanisms fail cleanly.
struct HandlingContext {
  Classification classification;
  RawExceptionSignal signal;
  std::string thread_id;
  std::string mission_id;
  std::optional<std::string> step_ref;
  HandlerPattern pattern;
  RetryPolicy retry_policy;
  Phase handling_phase = Phase::Execution;
  std::uint64_t symptom_seq = 0;  ///< seq of the ExceptionRaised event

  EventLog* log = nullptr;
  StatePort* state = nullptr;
  LedgerPort* ledger = nullptr;
  CheckpointStore* checkpoints = nullptr;
  LogicalClock* clock = nullptr;
  std::mt19937_64* rng = nullptr;

  const RuleSet* rules = nullptr;
  const PatternRegistry* registry = nullptr;
  const std::map<std::string, std::string>* pattern_overrides = nullptr;

  std::function<LocalResult()> redispatch_step;
  std::function<LocalResult()> switch_tool;
  std::function<LocalResult()> peer_confirm;
  std::function<LocalResult(HandlingContext&)> plan_repair;
  std::function<void(const std::string& sink_id, const nlohmann::json& payload)>
      sink_handoff;

  int escalation_depth = 0;
  int max_escalation_depth = 3;
  std::string escalation_sink = "human";

  /// Step topology, for Skip legality.
  bool step_is_terminal = true;
  std::vector<std::string> hard_dependents;

  /// Populated on re-entry after a reclassification.
  std::optional<WorkflowEvent> root_event;
  std::string original_goal;
  std::string violated_constraint;
};

/// Applies the flow decision, emitting FlowApplied plus the decision's
/// companion event (StepSkipped / ThreadAborted). Throws
/// DependencyViolationError when Skip would orphan hard dependents; nothing
/// is logged in that case.
void apply_flow(HandlingContext& ctx, FlowControlDecision flow);

/// Applies the recovery action against the state and ledger ports and logs
/// RecoveryApplied with before/after digests. Throws StateRecoveryError when
/// the rollback checkpoint or compensation record is missing.
StateRecoveryAction apply_recovery(HandlingContext& ctx, StateRecoveryAction action);

/// Scope a recovery acts on: Memory stays Memory, everything else recovers
/// the whole internal state under the TaskFlow scope.
ArtifactKind recovery_scope(const std::optional<ArtifactKind>& artifact);

/// Runs the pattern's local mechanism (with a retry budget only for
/// Retry with Backoff), then flow and recovery stages on local success.
/// Local events are logged strictly before the flow event, which precedes
/// the recovery event. StateRecoveryError propagates.
HandlingOutcome handle(HandlingContext& ctx);

}  // namespace shielda
