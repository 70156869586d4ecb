#include "shielda/executor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shielda/errors.hpp"

namespace shielda {
namespace {

WorkflowEvent handling_event(const HandlingContext& ctx, EventKind kind,
                             nlohmann::json payload) {
  WorkflowEvent ev;
  ev.logical_time = ctx.clock ? ctx.clock->now() : 0;
  ev.thread_id = ctx.thread_id;
  ev.mission_id = ctx.mission_id;
  ev.phase = ctx.handling_phase;
  ev.kind = kind;
  ev.payload = std::move(payload);
  return ev;
}

void log_local_attempt(HandlingContext& ctx, int attempt, const LocalResult& result,
                       std::int64_t delay_ms) {
  if (!ctx.log) return;
  nlohmann::json payload = {
      {"attempt", attempt},
      {"mechanism", to_string(ctx.pattern.local)},
      {"result", to_string(result.code)},
  };
  if (!result.reason.empty()) payload["reason"] = result.reason;
  if (delay_ms > 0) payload["delay_ms"] = delay_ms;
  if (ctx.step_ref) payload["step_id"] = *ctx.step_ref;
  ctx.log->append(handling_event(ctx, EventKind::LocalAttempt, std::move(payload)));
}

LocalResult run_schema_validation(const HandlingContext& ctx) {
  auto it = ctx.signal.structured_fields.find("output");
  if (it == ctx.signal.structured_fields.end()) {
    return LocalResult::failure("no recorded output to validate");
  }
  auto parsed = nlohmann::json::parse(it->second, nullptr, false);
  if (parsed.is_discarded()) {
    return LocalResult::failure("output failed schema validation");
  }
  return LocalResult::success("output conforms to expected schema");
}

LocalResult run_output_truncation(const HandlingContext& ctx) {
  auto it = ctx.signal.structured_fields.find("output");
  if (it == ctx.signal.structured_fields.end()) {
    return LocalResult::failure("no recorded output to truncate");
  }
  constexpr std::size_t kKeep = 256;
  std::size_t kept = std::min(it->second.size(), kKeep);
  return LocalResult::success("output truncated to " + std::to_string(kept) + " bytes");
}

LocalResult run_sanitize(const HandlingContext& ctx, const char* what) {
  auto it = ctx.signal.structured_fields.find("output");
  std::string source = it != ctx.signal.structured_fields.end() ? it->second
                                                                : ctx.signal.message;
  std::string cleaned;
  cleaned.reserve(source.size());
  for (char c : source) {
    if (c == '\0' || c == '\x1b') continue;
    cleaned.push_back(c);
  }
  return LocalResult::success(std::string(what) + " produced " +
                              std::to_string(cleaned.size()) + " bytes");
}

LocalResult run_escalate_to_human(HandlingContext& ctx) {
  if (!ctx.sink_handoff) {
    return LocalResult::needs_escalation("no hand-off channel configured");
  }
  nlohmann::json payload = {
      {"note", "local hand-off"},
      {"signal", serialize(ctx.signal)},
      {"classification", serialize(ctx.classification)},
  };
  if (ctx.step_ref) payload["step_id"] = *ctx.step_ref;
  ctx.sink_handoff(ctx.escalation_sink, payload);
  return LocalResult::success("handed to sink '" + ctx.escalation_sink + "'");
}

LocalResult run_reset_memory(HandlingContext& ctx) {
  if (!ctx.state) return LocalResult::failure("no state access for memory reset");
  ctx.state->reset_memory();
  return LocalResult::success("memory cleared");
}

/// One non-retry attempt of the pattern's mechanism.
LocalResult run_mechanism_once(HandlingContext& ctx) {
  switch (ctx.pattern.local) {
    case LocalHandlingMechanism::SchemaValidation:
      return run_schema_validation(ctx);
    case LocalHandlingMechanism::OutputTruncation:
      return run_output_truncation(ctx);
    case LocalHandlingMechanism::OutputSanitization:
      return run_sanitize(ctx, "output sanitization");
    case LocalHandlingMechanism::PromptSanitization:
      return run_sanitize(ctx, "prompt sanitization");
    case LocalHandlingMechanism::ResponseNormalization:
      return run_sanitize(ctx, "response normalization");
    case LocalHandlingMechanism::Fallback:
      return LocalResult::success("fallback template applied");
    case LocalHandlingMechanism::DefaultInterpretation:
      return LocalResult::success("default interpretation selected");
    case LocalHandlingMechanism::AbortTaskChain:
      return LocalResult::success("task chain marked for abort");
    case LocalHandlingMechanism::ResetMemory:
      return run_reset_memory(ctx);
    case LocalHandlingMechanism::EscalateToHuman:
      return run_escalate_to_human(ctx);
    case LocalHandlingMechanism::TimeoutEscalation:
      return LocalResult::needs_escalation("deadline expired; deferring to controller");
    case LocalHandlingMechanism::SwitchTool:
      if (ctx.switch_tool) return ctx.switch_tool();
      return LocalResult::failure("no alternate tool available");
    case LocalHandlingMechanism::PeerConfirmation:
      if (ctx.peer_confirm) return ctx.peer_confirm();
      return LocalResult::failure("no peer available for confirmation");
    case LocalHandlingMechanism::PlanRepair:
      if (ctx.plan_repair) return ctx.plan_repair(ctx);
      return LocalResult::failure("no plan repair capability registered");
    case LocalHandlingMechanism::RetryWithBackoff:
      // Reached only when redispatch is missing; the retry loop owns this
      // mechanism otherwise.
      return LocalResult::failure("no step redispatch available for retry");
    default:
      return LocalResult::not_implemented("mechanism not implemented: " +
                                          to_string(ctx.pattern.local));
  }
}

LocalResult run_local_stage(HandlingContext& ctx, int& attempts_used) {
  if (ctx.pattern.local == LocalHandlingMechanism::RetryWithBackoff &&
      ctx.redispatch_step) {
    auto observer = [&ctx](int attempt, const LocalResult& result,
                           std::int64_t delay_ms) {
      log_local_attempt(ctx, attempt, result, delay_ms);
      if (delay_ms > 0 && ctx.clock) ctx.clock->advance(delay_ms);
    };
    RetryOutcome outcome = retry_with_backoff(
        ctx.retry_policy, [&ctx](int) { return ctx.redispatch_step(); }, observer,
        ctx.rng);
    attempts_used = outcome.attempts_used;
    return outcome.last;
  }
  LocalResult result = run_mechanism_once(ctx);
  attempts_used = 1;
  log_local_attempt(ctx, 1, result, 0);
  return result;
}

}  // namespace

std::string to_string(LocalResult::Code code) {
  switch (code) {
    case LocalResult::Code::Success: return "Success";
    case LocalResult::Code::Failure: return "Failure";
    case LocalResult::Code::NeedsEscalation: return "NeedsEscalation";
    case LocalResult::Code::NotImplemented: return "NotImplemented";
  }
  return "Failure";
}

std::string to_string(HandlingStatus status) {
  switch (status) {
    case HandlingStatus::Recovered: return "Recovered";
    case HandlingStatus::FailedLocal: return "FailedLocal";
    case HandlingStatus::Escalated: return "Escalated";
    case HandlingStatus::AbortedThread: return "AbortedThread";
  }
  return "FailedLocal";
}

std::int64_t backoff_delay_ms(const RetryPolicy& policy, int attempt,
                              double jitter_draw) {
  if (attempt < 1) attempt = 1;
  double exact = static_cast<double>(policy.base_delay_ms) *
                 std::pow(policy.multiplier, attempt - 1);
  double scaled = exact * (1.0 + policy.jitter * jitter_draw);
  return static_cast<std::int64_t>(std::llround(scaled));
}

RetryOutcome retry_with_backoff(
    const RetryPolicy& policy, const std::function<LocalResult(int)>& op,
    const std::function<void(int, const LocalResult&, std::int64_t)>& observer,
    std::mt19937_64* jitter_rng) {
  RetryOutcome outcome;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int budget = std::max(1, policy.max_attempts);
  for (int attempt = 1; attempt <= budget; ++attempt) {
    LocalResult result = op(attempt);
    outcome.attempts_used = attempt;
    outcome.last = result;
    if (result.ok()) {
      outcome.succeeded = true;
      if (observer) observer(attempt, result, 0);
      return outcome;
    }
    double draw = 0.0;
    if (policy.jitter > 0.0 && jitter_rng) draw = unit(*jitter_rng);
    std::int64_t delay = backoff_delay_ms(policy, attempt, draw);
    outcome.delays_ms.push_back(delay);
    if (observer) observer(attempt, result, delay);
  }
  return outcome;
}

ArtifactKind recovery_scope(const std::optional<ArtifactKind>& artifact) {
  if (artifact && *artifact == ArtifactKind::Memory) return ArtifactKind::Memory;
  return ArtifactKind::TaskFlow;
}

void apply_flow(HandlingContext& ctx, FlowControlDecision flow) {
  if (flow == FlowControlDecision::Skip && !ctx.hard_dependents.empty()) {
    std::ostringstream msg;
    msg << "cannot skip";
    if (ctx.step_ref) msg << " step " << *ctx.step_ref;
    msg << ": hard dependents remain (";
    for (std::size_t i = 0; i < ctx.hard_dependents.size(); ++i) {
      if (i) msg << ", ";
      msg << ctx.hard_dependents[i];
    }
    msg << ")";
    throw DependencyViolationError(msg.str());
  }
  if (ctx.log) {
    nlohmann::json payload = {{"decision", to_string(flow)}};
    if (ctx.step_ref) payload["step_id"] = *ctx.step_ref;
    ctx.log->append(handling_event(ctx, EventKind::FlowApplied, std::move(payload)));
    if (flow == FlowControlDecision::Skip) {
      ctx.log->append(handling_event(
          ctx, EventKind::StepSkipped,
          {{"step_id", ctx.step_ref.value_or("")}}));
    } else if (flow == FlowControlDecision::Abort) {
      ctx.log->append(handling_event(
          ctx, EventKind::ThreadAborted,
          {{"reason", "flow control abort for " + ctx.classification.exception_id}}));
    }
  }
}

StateRecoveryAction apply_recovery(HandlingContext& ctx, StateRecoveryAction action) {
  ArtifactKind scope = recovery_scope(ctx.classification.artifact);
  std::string digest_before;
  std::string digest_after;

  switch (action) {
    case StateRecoveryAction::NoOp: {
      digest_before = ctx.state ? content_digest(ctx.state->snapshot_scope(scope))
                                : content_digest("");
      digest_after = digest_before;
      break;
    }
    case StateRecoveryAction::Rollback: {
      if (!ctx.state || !ctx.checkpoints) {
        throw StateRecoveryError("rollback requested without checkpointed state");
      }
      const Checkpoint* cp = ctx.checkpoints->latest(scope);
      if (!cp) {
        throw StateRecoveryError("no checkpoint recorded for scope " +
                                 to_string(scope));
      }
      digest_before = content_digest(ctx.state->snapshot_scope(scope));
      ctx.state->restore_scope(scope, cp->snapshot);
      digest_after = content_digest(ctx.state->snapshot_scope(scope));
      break;
    }
    case StateRecoveryAction::Compensate: {
      if (!ctx.ledger || !ctx.step_ref) {
        throw StateRecoveryError("compensation requested without a side-effect record");
      }
      std::vector<std::uint64_t> effects = ctx.ledger->effects_for_step(*ctx.step_ref);
      if (effects.empty()) {
        throw StateRecoveryError("no side effects recorded for step " + *ctx.step_ref);
      }
      digest_before = ctx.ledger->effective_digest();
      for (auto it = effects.rbegin(); it != effects.rend(); ++it) {
        ctx.ledger->compensate_effect(*it);
      }
      digest_after = ctx.ledger->effective_digest();
      break;
    }
  }

  if (ctx.log) {
    nlohmann::json payload = {
        {"action", to_string(action)},
        {"scope", to_string(scope)},
        {"digest_before", digest_before},
        {"digest_after", digest_after},
    };
    if (ctx.step_ref) payload["step_id"] = *ctx.step_ref;
    ctx.log->append(
        handling_event(ctx, EventKind::RecoveryApplied, std::move(payload)));
  }
  return action;
}

HandlingOutcome handle(HandlingContext& ctx) {
  HandlingOutcome outcome;
  outcome.pattern_id = ctx.pattern.pattern_id;
  outcome.flow = ctx.pattern.flow;

  LocalResult local = run_local_stage(ctx, outcome.attempts_used);
  outcome.last_local = local;

  if (!local.ok()) {
    switch (local.code) {
      case LocalResult::Code::NeedsEscalation:
      case LocalResult::Code::NotImplemented:
        outcome.status = HandlingStatus::Escalated;
        break;
      default:
        outcome.status = HandlingStatus::FailedLocal;
        break;
    }
    return outcome;
  }

  try {
    apply_flow(ctx, ctx.pattern.flow);
    outcome.flow_applied = true;
  } catch (const DependencyViolationError& e) {
    outcome.status = HandlingStatus::Escalated;
    outcome.last_local = LocalResult::needs_escalation(e.what());
    return outcome;
  }

  outcome.recovery_applied = apply_recovery(ctx, ctx.pattern.recovery);
  outcome.status = ctx.pattern.flow == FlowControlDecision::Abort
                       ? HandlingStatus::AbortedThread
                       : HandlingStatus::Recovered;
  return outcome;
}

}  // namespace shielda
