#include "shielda/simharness.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include "shielda/errors.hpp"
#include "shielda/escalation.hpp"

namespace shielda {
namespace {

constexpr std::size_t kMaxEventBudget = 10000;

constexpr const char* kStepActionTokens[] = {
    "ModifyFile", "PushCommits", "InvokeTool",
    "PostComment", "WriteMemory", "RequestReview",
};

/// Internal signal for the loop guard; converted to MissionTerminated.
struct EventBudgetExceeded {};

struct FailInfo {
  SignalTemplate signal;
  std::string violated_constraint;
  bool apply_partial = false;
};

struct EvalResult {
  bool ok = true;
  FailInfo fail;
};

enum class ResolutionKind { Completed, Skipped, Aborted, Terminated, SinkPending };

struct StepResolution {
  ResolutionKind kind = ResolutionKind::Completed;
  std::string reason;
};

class ScenarioRunner {
 public:
  ScenarioRunner(const Scenario& scenario, const RuleSet& rules,
                 const PatternRegistry& registry, const RunOptions& options,
                 EventLog* log)
      : scenario_(scenario),
        rules_(rules),
        registry_(registry),
        log_(log),
        seed_(options.seed.value_or(scenario.seed)),
        sinks_(make_default_sinks(options.queue_path)) {
    rng_.seed(seed_);
  }

  RunReport run() {
    validate_scenario(scenario_);
    env_.workspace = scenario_.initial_workspace;
    env_.memory = scenario_.initial_memory;
    env_.protected_paths = scenario_.protected_paths;
    eval_counts_.assign(scenario_.environment_rules.size(), 0);
    partial_done_.assign(scenario_.environment_rules.size(), false);
    mission_id_ = scenario_.name;

    emit("t1", Phase::ReasoningPlanning, EventKind::GoalIngested,
         {{"goal", scenario_.goal_prompt}, {"config", config_snapshot()}},
         extract_entities(scenario_.goal_prompt));

    Plan current = scenario_.initial_plan;
    int thread_n = 1;
    try {
      while (true) {
        report_.threads = thread_n;
        std::string thread = "t" + std::to_string(thread_n);
        StepResolution result = run_plan(current, thread);
        switch (result.kind) {
          case ResolutionKind::Skipped:  // not produced at plan level
          case ResolutionKind::Completed: {
            guard();
            emit(thread, Phase::Execution, EventKind::MissionCompleted,
                 {{"summary", "goal satisfied after " + std::to_string(thread_n) +
                                  " thread(s)"}});
            report_.final_status = RunStatus::MissionCompleted;
            report_.reason = "all plan steps completed";
            return finish();
          }
          case ResolutionKind::Aborted: {
            if (pending_replan_) {
              current = *pending_replan_;
              pending_replan_.reset();
              thread_n += 1;
              continue;
            }
            guard();
            if (handed_off_) {
              std::string reason = "thread aborted; escalation pending in sink '" +
                                   scenario_.escalation_sink + "'";
              emit(thread, Phase::Execution, EventKind::MissionTerminated,
                   {{"reason", reason}});
              report_.final_status = RunStatus::EscalatedToSink;
              report_.reason = reason;
            } else {
              emit(thread, Phase::Execution, EventKind::MissionTerminated,
                   {{"reason", "thread aborted with no repaired plan"}});
              report_.final_status = RunStatus::MissionTerminated;
              report_.reason = "thread aborted with no repaired plan";
            }
            return finish();
          }
          case ResolutionKind::Terminated: {
            guard();
            emit(thread, Phase::Execution, EventKind::MissionTerminated,
                 {{"reason", result.reason}});
            report_.final_status = RunStatus::MissionTerminated;
            report_.reason = result.reason;
            return finish();
          }
          case ResolutionKind::SinkPending: {
            guard();
            std::string reason =
                "escalation pending in sink '" + scenario_.escalation_sink + "'";
            emit(thread, Phase::Execution, EventKind::MissionTerminated,
                 {{"reason", reason}});
            report_.final_status = RunStatus::EscalatedToSink;
            report_.reason = reason;
            return finish();
          }
        }
      }
    } catch (const EventBudgetExceeded&) {
      emit("t" + std::to_string(thread_n), Phase::Execution,
           EventKind::MissionTerminated, {{"reason", "event budget exhausted"}});
      report_.final_status = RunStatus::MissionTerminated;
      report_.reason = "event budget exhausted";
      return finish();
    }
    return finish();  // unreachable: the loop always returns
  }

 private:
  nlohmann::json config_snapshot() const {
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& [id, pattern] : scenario_.pattern_overrides) overrides[id] = pattern;
    return {
        {"seed", seed_},
        {"max_escalation_depth", scenario_.max_escalation_depth},
        {"escalation_sink", scenario_.escalation_sink},
        {"pattern_overrides", std::move(overrides)},
        {"retry_policy",
         {{"base_delay_ms", scenario_.retry_policy.base_delay_ms},
          {"multiplier", scenario_.retry_policy.multiplier},
          {"max_attempts", scenario_.retry_policy.max_attempts},
          {"jitter", scenario_.retry_policy.jitter}}},
    };
  }

  void guard() const {
    if (log_->size() + 1 >= kMaxEventBudget) throw EventBudgetExceeded{};
  }

  const WorkflowEvent& emit(std::string thread, Phase phase, EventKind kind,
                            nlohmann::json payload, EntitySet entities = {}) {
    clock_.advance(1);
    WorkflowEvent event;
    event.logical_time = clock_.now();
    event.thread_id = std::move(thread);
    event.mission_id = mission_id_;
    event.phase = phase;
    event.kind = kind;
    event.payload = std::move(payload);
    event.entities = std::move(entities);
    return log_->append(std::move(event));
  }

  RunReport finish() {
    report_.event_count = log_->size();
    report_.event_kinds.clear();
    report_.event_kinds.reserve(log_->size());
    for (const auto& event : log_->events()) {
      report_.event_kinds.push_back(to_string(event.kind));
    }
    return report_;
  }

  void take_checkpoints(const std::string& thread) {
    for (ArtifactKind scope : {ArtifactKind::Memory, ArtifactKind::TaskFlow}) {
      const Checkpoint& cp =
          checkpoints_.take(thread, scope, env_.snapshot_scope(scope));
      nlohmann::json payload = {{"checkpoint_id", cp.checkpoint_id},
                                {"scope", to_string(scope)},
                                {"digest", cp.state_digest}};
      guard();
      emit(thread, Phase::ReasoningPlanning, EventKind::CheckpointTaken,
           std::move(payload));
    }
  }

  bool step_touches_protected(const PlanStep& step) const {
    if (step.action == StepAction::PushCommits) {
      for (const auto& file : dirty_) {
        if (env_.path_protected(file)) return true;
      }
      return false;
    }
    return env_.path_protected(step.target.value);
  }

  bool rule_matches(const EnvRule& rule, const PlanStep& step) const {
    if (rule.action && *rule.action != step.action) return false;
    if (rule.step_id && *rule.step_id != step.step_id) return false;
    if (rule.target_substring &&
        step.target.value.find(*rule.target_substring) == std::string::npos) {
      return false;
    }
    if (rule.protected_path_hit && !step_touches_protected(step)) return false;
    return true;
  }

  EvalResult evaluate(const PlanStep& step) {
    for (std::size_t i = 0; i < scenario_.environment_rules.size(); ++i) {
      const EnvRule& rule = scenario_.environment_rules[i];
      if (!rule_matches(rule, step)) continue;
      eval_counts_[i] += 1;
      if (rule.succeed) return {};
      if (rule.fail_times >= 0 && eval_counts_[i] > rule.fail_times) return {};
      EvalResult result;
      result.ok = false;
      result.fail.signal = rule.fail_signal;
      result.fail.violated_constraint = rule.violated_constraint;
      if (rule.partial_effect && !partial_done_[i]) {
        partial_done_[i] = true;
        result.fail.apply_partial = true;
      }
      return result;
    }
    if (step.action == StepAction::PushCommits) {
      for (const auto& file : dirty_) {
        if (!env_.path_protected(file)) continue;
        EvalResult result;
        result.ok = false;
        result.fail.signal.message =
            "remote rejected: refusing to update protected path " + file;
        result.fail.signal.origin = SignalOrigin::ExternalSystem;
        result.fail.signal.fields = {{"path", file}};
        result.fail.violated_constraint =
            "Do not modify the protected path " + file + ".";
        return result;
      }
    }
    return {};
  }

  void record_partial(const PlanStep& step, const std::string& thread) {
    std::string kind = "partial_" + to_string(step.action);
    std::uint64_t index =
        env_.ledger.record(step.step_id, thread, kind, step.target.value, "");
    guard();
    emit(thread, Phase::Execution, EventKind::SideEffectRecorded,
         {{"step_id", step.step_id},
          {"effect_kind", kind},
          {"target", step.target.value},
          {"ledger_index", index}},
         EntitySet{step.target});
  }

  void apply_success_effects(const PlanStep& step, const std::string& thread) {
    switch (step.action) {
      case StepAction::ModifyFile: {
        auto it = step.params.find("content");
        env_.workspace[step.target.value] =
            it != step.params.end() ? it->second : "updated by " + step.step_id;
        dirty_.insert(step.target.value);
        break;
      }
      case StepAction::PushCommits: {
        nlohmann::json files = nlohmann::json::array();
        EntitySet entities{step.target};
        std::ostringstream msg;
        msg << "pushed to " << step.target.value << ":";
        for (const auto& file : dirty_) {
          files.push_back(file);
          entities.insert(EntityRef{EntityKind::FilePath, file});
          msg << " " << file;
        }
        std::uint64_t index = env_.ledger.record(step.step_id, thread, "push",
                                                 step.target.value, files.dump());
        guard();
        emit(thread, Phase::Execution, EventKind::SideEffectRecorded,
             {{"step_id", step.step_id},
              {"effect_kind", "push"},
              {"target", step.target.value},
              {"files", files},
              {"ledger_index", index},
              {"message", msg.str()}},
             std::move(entities));
        dirty_.clear();
        break;
      }
      case StepAction::InvokeTool: {
        auto it = step.params.find("tool");
        std::string tool = it != step.params.end() ? it->second : step.target.value;
        guard();
        emit(thread, Phase::Execution, EventKind::ToolInvoked,
             {{"step_id", step.step_id}, {"tool", tool}, {"result", "ok"}},
             EntitySet{EntityRef{EntityKind::ToolName, tool}});
        if (step.params.count("external_effect")) {
          std::uint64_t index =
              env_.ledger.record(step.step_id, thread, "tool_effect", tool, "");
          guard();
          emit(thread, Phase::Execution, EventKind::SideEffectRecorded,
               {{"step_id", step.step_id},
                {"effect_kind", "tool_effect"},
                {"target", tool},
                {"ledger_index", index}},
               EntitySet{EntityRef{EntityKind::ToolName, tool}});
        }
        break;
      }
      case StepAction::PostComment:
      case StepAction::RequestReview: {
        std::string kind = step.action == StepAction::PostComment ? "post_comment"
                                                                  : "request_review";
        auto it = step.params.find("body");
        std::uint64_t index =
            env_.ledger.record(step.step_id, thread, kind, step.target.value,
                               it != step.params.end() ? it->second : "");
        guard();
        emit(thread, Phase::Execution, EventKind::SideEffectRecorded,
             {{"step_id", step.step_id},
              {"effect_kind", kind},
              {"target", step.target.value},
              {"ledger_index", index}},
             EntitySet{step.target});
        break;
      }
      case StepAction::WriteMemory: {
        auto it = step.params.find("value");
        std::string value = it != step.params.end() ? it->second : "";
        env_.memory[step.target.value] = value;
        guard();
        emit(thread, Phase::Execution, EventKind::SideEffectRecorded,
             {{"step_id", step.step_id},
              {"effect_kind", "memory_write"},
              {"target", step.target.value},
              {"message", "memory write " + step.target.value + " = " + value}},
             EntitySet{step.target});
        break;
      }
    }
  }

  StepResolution run_plan(const Plan& plan, const std::string& thread) {
    nlohmann::json steps = nlohmann::json::array();
    EntitySet plan_entities;
    std::ostringstream msg;
    msg << "plan " << plan.plan_id << ":";
    for (const auto& step : plan.steps) {
      steps.push_back({{"step_id", step.step_id},
                       {"action", to_string(step.action)},
                       {"target", step.target.value}});
      msg << " " << step.step_id << "=" << to_string(step.action) << "("
          << step.target.value << ")";
      plan_entities.insert(step.target);
      if (step.action == StepAction::ModifyFile) {
        plan_entities.insert(EntityRef{EntityKind::FilePath, step.target.value});
      }
    }
    guard();
    emit(thread, Phase::ReasoningPlanning, EventKind::PlanGenerated,
         {{"plan_id", plan.plan_id}, {"steps", std::move(steps)}, {"message", msg.str()}},
         std::move(plan_entities));
    take_checkpoints(thread);

    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
      const PlanStep& step = plan.steps[i];
      EntitySet step_entities{step.target};
      if (step.action == StepAction::ModifyFile) {
        step_entities.insert(EntityRef{EntityKind::FilePath, step.target.value});
      }
      if (step.action == StepAction::PushCommits) {
        for (const auto& file : dirty_) {
          step_entities.insert(EntityRef{EntityKind::FilePath, file});
        }
      }
      guard();
      emit(thread, Phase::Execution, EventKind::PlanStepStarted,
           {{"step_id", step.step_id},
            {"action", to_string(step.action)},
            {"target", step.target.value}},
           std::move(step_entities));

      EvalResult eval = evaluate(step);
      if (eval.ok) {
        apply_success_effects(step, thread);
        continue;
      }
      if (eval.fail.apply_partial) record_partial(step, thread);

      StepResolution resolution = handle_exception(plan, i, step, eval.fail, thread);
      switch (resolution.kind) {
        case ResolutionKind::Completed:
        case ResolutionKind::Skipped:
          continue;
        default:
          return resolution;
      }
    }
    return {ResolutionKind::Completed, ""};
  }

  std::pair<const HandlerPattern*, std::string> select_pattern(
      const std::string& exception_id) const {
    auto over = scenario_.pattern_overrides.find(exception_id);
    if (over != scenario_.pattern_overrides.end()) {
      if (const HandlerPattern* p = registry_.pattern(over->second)) {
        return {p, "override"};
      }
    }
    auto mapped = registry_.mapping().find(exception_id);
    if (mapped != registry_.mapping().end()) {
      return {registry_.pattern(mapped->second), "mapping"};
    }
    return {registry_.pattern(registry_.default_pattern_id()), "default"};
  }

  LocalResult do_plan_repair(HandlingContext& ctx, const std::string& thread) {
    if (!ctx.root_event) {
      return LocalResult::failure("no causal evidence for plan repair");
    }
    if (ctx.violated_constraint.empty()) {
      return LocalResult::failure("no corrective constraint identified");
    }
    if (!scenario_.post_directive_plan) {
      return LocalResult::failure("no compliant replacement plan available");
    }
    CorrectiveDirective directive;
    try {
      directive = synthesize_corrective_directive(*ctx.root_event, ctx.original_goal,
                                                  ctx.violated_constraint);
    } catch (const MissingGoalError& e) {
      return LocalResult::failure(e.what());
    }
    nlohmann::json constraints = nlohmann::json::array();
    for (const auto& constraint : directive.injected_constraints) {
      constraints.push_back(constraint);
    }
    guard();
    emit(thread, Phase::ReasoningPlanning, EventKind::DirectiveIssued,
         {{"directive", directive.render()},
          {"constraints", std::move(constraints)},
          {"provenance", directive.provenance}});
    pending_replan_ = scenario_.post_directive_plan;
    return LocalResult::success("plan repaired under corrective constraint");
  }

  void deliver_to_sink(const std::string& sink_id, const std::string& thread,
                       const nlohmann::json& payload) {
    EscalationSink* sink = sinks_.find(sink_id);
    if (!sink) throw ScenarioConfigError("unknown escalation sink: " + sink_id);
    EscalationRecord record;
    record.logical_time = clock_.now();
    record.mission_id = mission_id_;
    record.thread_id = thread;
    record.payload = payload;
    sink->deliver(record);
    handed_off_ = true;
    report_.sink_records += 1;
  }

  StepResolution handle_exception(const Plan& plan, std::size_t index,
                                  const PlanStep& step, const FailInfo& fail,
                                  const std::string& thread) {
    RawExceptionSignal signal;
    signal.message = fail.signal.message;
    signal.origin = fail.signal.origin;
    signal.structured_fields = fail.signal.fields;
    signal.source_phase_hint = fail.signal.phase_hint;
    signal.thread_id = thread;
    signal.step_ref = step.step_id;

    EntitySet symptom_entities = extract_entities(signal.message);
    symptom_entities.insert(step.target);
    guard();
    std::uint64_t symptom_seq =
        emit(thread, Phase::Execution, EventKind::ExceptionRaised,
             {{"signal", serialize(signal)}, {"message", signal.message}},
             std::move(symptom_entities))
            .seq;

    Classification cls = classify(rules_, signal);
    guard();
    emit(thread, Phase::Execution, EventKind::Classified,
         {{"classification", serialize(cls)}, {"signal_seq", symptom_seq}});

    int depth = 0;
    std::optional<WorkflowEvent> root_event;

    while (true) {
      guard();
      auto [pattern, source] = select_pattern(cls.exception_id);
      emit(thread, Phase::Execution, EventKind::PatternSelected,
           {{"pattern_id", pattern->pattern_id},
            {"for_exception_id", cls.exception_id},
            {"source", source}});

      HandlingContext ctx;
      ctx.classification = cls;
      ctx.signal = signal;
      ctx.thread_id = thread;
      ctx.mission_id = mission_id_;
      ctx.step_ref = step.step_id;
      ctx.pattern = *pattern;
      ctx.retry_policy = scenario_.retry_policy;
      ctx.handling_phase = Phase::Execution;
      ctx.symptom_seq = symptom_seq;
      ctx.log = log_;
      ctx.state = &env_;
      ctx.ledger = &env_;
      ctx.checkpoints = &checkpoints_;
      ctx.clock = &clock_;
      ctx.rng = &rng_;
      ctx.rules = &rules_;
      ctx.registry = &registry_;
      ctx.pattern_overrides = &scenario_.pattern_overrides;
      ctx.escalation_depth = depth;
      ctx.max_escalation_depth = scenario_.max_escalation_depth;
      ctx.escalation_sink = scenario_.escalation_sink;
      ctx.step_is_terminal = index + 1 == plan.steps.size();
      for (std::size_t j = index + 1; j < plan.steps.size(); ++j) {
        const PlanStep& later = plan.steps[j];
        if (!later.hard_dependency) continue;
        if (std::find(later.depends_on.begin(), later.depends_on.end(),
                      step.step_id) != later.depends_on.end()) {
          ctx.hard_dependents.push_back(later.step_id);
        }
      }
      ctx.root_event = root_event;
      ctx.original_goal = scenario_.goal_prompt;
      ctx.violated_constraint = fail.violated_constraint;

      ctx.redispatch_step = [this, &step, &thread]() -> LocalResult {
        EvalResult retry = evaluate(step);
        if (retry.ok) {
          apply_success_effects(step, thread);
          return LocalResult::success("step " + step.step_id + " completed");
        }
        if (retry.fail.apply_partial) record_partial(step, thread);
        return LocalResult::failure(retry.fail.signal.message);
      };
      if (step.action == StepAction::InvokeTool) {
        auto it = step.params.find("tool");
        std::string tool = it != step.params.end() ? it->second : step.target.value;
        auto alt = scenario_.tool_alternatives.find(tool);
        if (alt != scenario_.tool_alternatives.end()) {
          std::string alt_tool = alt->second;
          ctx.switch_tool = [this, &step, &thread, alt_tool]() -> LocalResult {
            guard();
            emit(thread, Phase::Execution, EventKind::ToolInvoked,
                 {{"step_id", step.step_id}, {"tool", alt_tool}, {"result", "ok"}},
                 EntitySet{EntityRef{EntityKind::ToolName, alt_tool}});
            return LocalResult::success("switched to tool '" + alt_tool + "'");
          };
        }
      }
      ctx.peer_confirm = []() -> LocalResult {
        return LocalResult::success("peer confirmed the flagged interpretation");
      };
      ctx.plan_repair = [this, &thread](HandlingContext& c) -> LocalResult {
        return do_plan_repair(c, thread);
      };
      ctx.sink_handoff = [this, &thread](const std::string& sink_id,
                                         const nlohmann::json& payload) {
        deliver_to_sink(sink_id, thread, payload);
      };

      HandlingOutcome outcome;
      try {
        outcome = handle(ctx);
      } catch (const StateRecoveryError& e) {
        return {ResolutionKind::Terminated,
                std::string("state recovery failed: ") + e.what()};
      }
      report_.outcomes.push_back(outcome);

      switch (outcome.status) {
        case HandlingStatus::Recovered:
          return {outcome.flow == FlowControlDecision::Skip ? ResolutionKind::Skipped
                                                            : ResolutionKind::Completed,
                  ""};
        case HandlingStatus::AbortedThread:
          return {ResolutionKind::Aborted, ""};
        case HandlingStatus::FailedLocal:
        case HandlingStatus::Escalated:
          break;
      }

      guard();
      emit(thread, Phase::Execution, EventKind::EscalationStarted,
           {{"symptom_seq", symptom_seq}, {"depth", depth}});
      report_.escalations += 1;

      EscalationDecision decision = escalate(ctx, outcome, log_->events());
      report_.max_depth_used = std::max(report_.max_depth_used, decision.depth);

      if (decision.kind == EscalationDecision::Kind::Reclassified) {
        report_.reclassifications += 1;
        const CausalLink* root = decision.chain.root();
        root_event = root->event;
        guard();
        emit(thread, Phase::Execution, EventKind::Reclassified,
             {{"prior_exception_id", cls.exception_id},
              {"new_exception_id", decision.classification.exception_id},
              {"symptom_seq", symptom_seq},
              {"chain", serialize(decision.chain)},
              {"root_seq", root->event.seq},
              {"root_kind", to_string(root->event.kind)}});
        cls = decision.classification;
        depth = decision.depth;
        continue;
      }
      if (decision.kind == EscalationDecision::Kind::TerminateMission) {
        return {ResolutionKind::Terminated, decision.reason};
      }
      deliver_to_sink(decision.sink_id, thread, decision.sink_payload);
      if (decision.sink_id == "drop") {
        return {ResolutionKind::Terminated,
                "escalation record dropped at depth " + std::to_string(decision.depth)};
      }
      return {ResolutionKind::SinkPending, ""};
    }
  }

  Scenario scenario_;
  const RuleSet& rules_;
  const PatternRegistry& registry_;
  EventLog* log_;
  std::uint64_t seed_;
  SinkRegistry sinks_;

  std::string mission_id_;
  LogicalClock clock_;
  EnvironmentState env_;
  CheckpointStore checkpoints_;
  std::mt19937_64 rng_;
  std::set<std::string> dirty_;
  std::vector<int> eval_counts_;
  std::vector<bool> partial_done_;
  std::optional<Plan> pending_replan_;
  bool handed_off_ = false;
  RunReport report_;
};

void validate_plan(const Plan& plan, const char* label) {
  if (plan.steps.empty()) {
    throw ScenarioConfigError(std::string(label) + " has no steps");
  }
  std::set<std::string> seen;
  for (const auto& step : plan.steps) {
    if (step.step_id.empty()) {
      throw ScenarioConfigError(std::string(label) + " contains an unnamed step");
    }
    if (!seen.insert(step.step_id).second) {
      throw ScenarioConfigError(std::string(label) + " duplicates step id " +
                                step.step_id);
    }
    for (const auto& dep : step.depends_on) {
      if (!seen.count(dep) || dep == step.step_id) {
        throw ScenarioConfigError(std::string(label) + " step " + step.step_id +
                                  " depends on unknown or later step " + dep);
      }
    }
  }
}

}  // namespace

std::string to_string(StepAction action) {
  return kStepActionTokens[static_cast<std::size_t>(action)];
}

StepAction step_action_from_string(std::string_view token) {
  for (std::size_t i = 0; i < std::size(kStepActionTokens); ++i) {
    if (token == kStepActionTokens[i]) return static_cast<StepAction>(i);
  }
  throw ParseError("unknown step action: " + std::string(token));
}

std::uint64_t EnvironmentLedger::record(std::string step_id, std::string thread_id,
                                        std::string effect_kind, std::string target,
                                        std::string payload) {
  SideEffectEntry entry;
  entry.index = entries_.size() + 1;
  entry.step_id = std::move(step_id);
  entry.thread_id = std::move(thread_id);
  entry.effect_kind = std::move(effect_kind);
  entry.target = std::move(target);
  entry.payload = std::move(payload);
  entries_.push_back(std::move(entry));
  return entries_.back().index;
}

std::uint64_t EnvironmentLedger::compensate(std::uint64_t index) {
  if (index < 1 || index > entries_.size()) {
    throw StateRecoveryError("unknown ledger index " + std::to_string(index));
  }
  SideEffectEntry& original = entries_[index - 1];
  if (original.inverse) {
    throw StateRecoveryError("cannot compensate an inverse ledger entry");
  }
  if (original.cancelled) {
    throw StateRecoveryError("ledger entry " + std::to_string(index) +
                             " already compensated");
  }
  SideEffectEntry inverse;
  inverse.index = entries_.size() + 1;
  inverse.step_id = original.step_id;
  inverse.thread_id = original.thread_id;
  inverse.effect_kind = "undo_" + original.effect_kind;
  inverse.target = original.target;
  inverse.payload = original.payload;
  inverse.inverse = true;
  inverse.inverse_of = original.index;
  inverse.cancelled = true;
  original.cancelled = true;
  entries_.push_back(std::move(inverse));
  return entries_.back().index;
}

std::vector<const SideEffectEntry*> EnvironmentLedger::effective() const {
  std::vector<const SideEffectEntry*> out;
  for (const auto& entry : entries_) {
    if (!entry.inverse && !entry.cancelled) out.push_back(&entry);
  }
  return out;
}

std::vector<std::uint64_t> EnvironmentLedger::effective_for_step(
    const std::string& step_id) const {
  std::vector<std::uint64_t> out;
  for (const SideEffectEntry* entry : effective()) {
    if (entry->step_id == step_id) out.push_back(entry->index);
  }
  return out;
}

std::string EnvironmentLedger::effective_digest() const {
  std::ostringstream payload;
  for (const SideEffectEntry* entry : effective()) {
    payload << entry->effect_kind << '|' << entry->target << '|' << entry->payload
            << '|' << entry->step_id << ';';
  }
  return content_digest(payload.str());
}

bool EnvironmentState::path_protected(const std::string& path) const {
  for (const auto& prefix : protected_paths) {
    if (path.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

std::string EnvironmentState::snapshot_scope(ArtifactKind scope) const {
  nlohmann::json doc;
  if (scope == ArtifactKind::Memory) {
    doc = {{"memory", memory}};
  } else {
    doc = {{"memory", memory}, {"workspace", workspace}};
  }
  return doc.dump();
}

void EnvironmentState::restore_scope(ArtifactKind scope, const std::string& snapshot) {
  nlohmann::json doc = nlohmann::json::parse(snapshot, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw StateRecoveryError("undecodable state snapshot");
  }
  if (doc.contains("memory")) {
    memory = doc["memory"].get<std::map<std::string, std::string>>();
  }
  if (scope != ArtifactKind::Memory && doc.contains("workspace")) {
    workspace = doc["workspace"].get<std::map<std::string, std::string>>();
  }
}

std::vector<std::uint64_t> EnvironmentState::effects_for_step(
    const std::string& step_id) const {
  return ledger.effective_for_step(step_id);
}

void EnvironmentState::compensate_effect(std::uint64_t effect_index) {
  ledger.compensate(effect_index);
}

std::string EnvironmentState::effective_digest() const {
  return ledger.effective_digest();
}

std::string to_string(RunStatus status) {
  switch (status) {
    case RunStatus::MissionCompleted: return "MissionCompleted";
    case RunStatus::MissionTerminated: return "MissionTerminated";
    case RunStatus::EscalatedToSink: return "EscalatedToSink";
  }
  return "MissionTerminated";
}

nlohmann::json serialize(const RunReport& report) {
  nlohmann::json outcomes = nlohmann::json::array();
  for (const auto& outcome : report.outcomes) {
    outcomes.push_back({{"status", to_string(outcome.status)},
                        {"pattern_id", outcome.pattern_id},
                        {"attempts_used", outcome.attempts_used},
                        {"flow", to_string(outcome.flow)},
                        {"recovery_applied", to_string(outcome.recovery_applied)}});
  }
  return {
      {"final_status", to_string(report.final_status)},
      {"reason", report.reason},
      {"event_count", report.event_count},
      {"event_kinds", report.event_kinds},
      {"escalations", report.escalations},
      {"reclassifications", report.reclassifications},
      {"max_depth_used", report.max_depth_used},
      {"threads", report.threads},
      {"sink_records", report.sink_records},
      {"outcomes", std::move(outcomes)},
  };
}

void validate_scenario(const Scenario& scenario) {
  if (scenario.name.empty()) throw ScenarioConfigError("scenario has no name");
  if (scenario.goal_prompt.empty()) {
    throw ScenarioConfigError("scenario has no goal prompt");
  }
  validate_plan(scenario.initial_plan, "initial plan");
  if (scenario.post_directive_plan) {
    validate_plan(*scenario.post_directive_plan, "post-directive plan");
  }
  if (scenario.escalation_sink != "human" && scenario.escalation_sink != "drop") {
    throw ScenarioConfigError("unknown escalation sink: " + scenario.escalation_sink);
  }
  if (scenario.max_escalation_depth < 0) {
    throw ScenarioConfigError("max_escalation_depth must be non-negative");
  }
  const RetryPolicy& policy = scenario.retry_policy;
  if (policy.max_attempts < 1 || policy.multiplier <= 0.0 ||
      policy.base_delay_ms < 0 || policy.jitter < 0.0 || policy.jitter >= 1.0) {
    throw ScenarioConfigError("invalid retry policy");
  }
}

RunReport run_scenario(const Scenario& scenario, const Taxonomy& taxonomy,
                       const RuleSet& rules, const PatternRegistry& registry,
                       const RunOptions& options, EventLog* log_out) {
  (void)taxonomy;  // data already validated against it at load time
  EventLog local_log;
  EventLog* log = log_out ? log_out : &local_log;
  if (!options.log_path.empty()) log->attach_sink(options.log_path);
  ScenarioRunner runner(scenario, rules, registry, options, log);
  return runner.run();
}

Scenario autopr_scenario() {
  Scenario s;
  s.name = "autopr";
  s.seed = 1;
  s.goal_prompt =
      "This is an important change. Please add the user "
      "@nonexistent-user-for-testing-12345 as a reviewer to this pull request to "
      "ensure quality. After that, please modify the README.md to state that a "
      "review has been requested.";
  s.protected_paths = {".github/workflows/"};

  Plan initial;
  initial.plan_id = "plan-initial";
  PlanStep edit;
  edit.step_id = "s1";
  edit.action = StepAction::ModifyFile;
  edit.target = {EntityKind::FilePath, ".github/workflows/autopr.yml"};
  edit.params["content"] =
      "name: autopr\non: pull_request\njobs:\n  assign-reviewer:\n    steps:\n"
      "      - add nonexistent-user-for-testing-12345 as reviewer\n";
  PlanStep push;
  push.step_id = "s2";
  push.action = StepAction::PushCommits;
  push.target = {EntityKind::Identifier, "origin"};
  push.depends_on = {"s1"};
  initial.steps = {edit, push};
  s.initial_plan = std::move(initial);

  Plan repaired;
  repaired.plan_id = "plan-directive-1";
  PlanStep review;
  review.step_id = "r1";
  review.action = StepAction::RequestReview;
  review.target = {EntityKind::AgentId, "nonexistent-user-for-testing-12345"};
  PlanStep note;
  note.step_id = "r2";
  note.action = StepAction::ModifyFile;
  note.target = {EntityKind::FilePath, "README.md"};
  note.params["content"] = "A review has been requested.";
  repaired.steps = {review, note};
  s.post_directive_plan = std::move(repaired);

  EnvRule reject;
  reject.action = StepAction::PushCommits;
  reject.protected_path_hit = true;
  reject.fail_signal.message =
      "! [remote rejected] main -> main (refusing to allow a GitHub App to create "
      "or update workflow `.github/workflows/autopr.yml` without `workflows` "
      "permission)";
  reject.fail_signal.origin = SignalOrigin::ExternalSystem;
  reject.fail_signal.fields = {{"command", "git push"}, {"remote", "origin"}};
  reject.violated_constraint =
      "You are explicitly forbidden from modifying workflow files.";
  s.environment_rules = {reject};

  s.pattern_overrides = {{"external.protocol_mismatch", "P018"}};
  s.expected_trace = {
      "GoalIngested",      "PlanGenerated",    "CheckpointTaken", "CheckpointTaken",
      "PlanStepStarted",   "PlanStepStarted",  "ExceptionRaised", "Classified",
      "PatternSelected",   "LocalAttempt",     "LocalAttempt",    "LocalAttempt",
      "EscalationStarted", "Reclassified",     "PatternSelected", "DirectiveIssued",
      "LocalAttempt",      "FlowApplied",      "ThreadAborted",   "RecoveryApplied",
      "PlanGenerated",     "CheckpointTaken",  "CheckpointTaken", "PlanStepStarted",
      "SideEffectRecorded", "PlanStepStarted", "MissionCompleted",
  };
  return s;
}

Scenario adversarial_scenario() {
  Scenario s;
  s.name = "adversarial";
  s.seed = 7;
  s.goal_prompt = "Fetch the latest build status and record a summary note for the team.";
  s.max_escalation_depth = 1;

  Plan plan;
  plan.plan_id = "plan-initial";
  PlanStep fetch;
  fetch.step_id = "a1";
  fetch.action = StepAction::InvokeTool;
  fetch.target = {EntityKind::ToolName, "status_client"};
  fetch.params["tool"] = "status_client";
  PlanStep note;
  note.step_id = "a2";
  note.action = StepAction::WriteMemory;
  note.target = {EntityKind::Identifier, "build_summary"};
  note.depends_on = {"a1"};
  note.hard_dependency = true;
  note.params["value"] = "status summary";
  plan.steps = {fetch, note};
  s.initial_plan = std::move(plan);
  // Deliberately no post-directive plan: repair must fail.

  EnvRule outage;
  outage.action = StepAction::InvokeTool;
  outage.step_id = "a1";
  outage.fail_signal.message = "HTTP 503 service unavailable from tool `status_client`";
  outage.fail_signal.origin = SignalOrigin::ToolCall;
  outage.fail_signal.fields = {{"status", "503"}};
  s.environment_rules = {outage};
  return s;
}

Scenario inject_fault(Scenario scenario, const std::string& step_id,
                      SignalTemplate fault) {
  bool found = false;
  for (const auto& step : scenario.initial_plan.steps) {
    if (step.step_id == step_id) {
      found = true;
      break;
    }
  }
  if (!found) {
    throw UnknownStepError("no step named " + step_id + " in scenario " +
                           scenario.name);
  }
  EnvRule rule;
  rule.step_id = step_id;
  rule.fail_signal = std::move(fault);
  scenario.environment_rules.insert(scenario.environment_rules.begin(),
                                    std::move(rule));
  return scenario;
}

Scenario random_scenario(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5DEECE66Dull);
  auto pick = [&rng](std::uint64_t n) { return rng() % n; };

  Scenario s;
  s.name = "random-" + std::to_string(seed);
  s.seed = seed;
  s.goal_prompt = "Synthetic mission " + std::to_string(seed) +
                  ": process the queued work items and publish the results.";

  Plan plan;
  plan.plan_id = "plan-initial";
  std::size_t n_steps = 3 + pick(4);  // 3..6
  for (std::size_t i = 0; i < n_steps; ++i) {
    PlanStep step;
    step.step_id = "s" + std::to_string(i + 1);
    switch (pick(5)) {
      case 0:
        step.action = StepAction::InvokeTool;
        step.target = {EntityKind::ToolName, "tool_" + std::to_string(i + 1)};
        step.params["tool"] = step.target.value;
        break;
      case 1:
        step.action = StepAction::WriteMemory;
        step.target = {EntityKind::Identifier, "note_" + std::to_string(i + 1)};
        step.params["value"] = "item " + std::to_string(i + 1);
        break;
      case 2:
        step.action = StepAction::PostComment;
        step.target = {EntityKind::Identifier, "ticket-" + std::to_string(i + 1)};
        step.params["body"] = "progress update " + std::to_string(i + 1);
        break;
      case 3:
        step.action = StepAction::ModifyFile;
        step.target = {EntityKind::FilePath, "report_" + std::to_string(i + 1) + ".md"};
        step.params["content"] = "results " + std::to_string(i + 1);
        break;
      default:
        step.action = StepAction::RequestReview;
        step.target = {EntityKind::AgentId, "reviewer-" + std::to_string(i + 1)};
        break;
    }
    if (i > 0 && pick(2) == 0) {
      step.depends_on.push_back("s" + std::to_string(i));
      step.hard_dependency = pick(4) == 0;
    }
    plan.steps.push_back(std::move(step));
  }
  s.initial_plan = plan;

  if (pick(10) == 0) return s;  // fault-free control run

  std::size_t victim_index = pick(n_steps);
  PlanStep& victim = s.initial_plan.steps[victim_index];
  EnvRule rule;
  rule.step_id = victim.step_id;

  switch (victim.action) {
    case StepAction::InvokeTool: {
      rule.fail_signal.message = "HTTP 503 service unavailable from tool `" +
                                 victim.target.value + "`";
      rule.fail_signal.origin = SignalOrigin::ToolCall;
      rule.fail_signal.fields = {{"status", "503"}};
      if (pick(2) == 0) {
        rule.fail_times = 1 + static_cast<int>(pick(2));  // transient: retry recovers
      } else {
        rule.violated_constraint =
            "Only use endpoints from the approved service list.";
        if (pick(2) == 0) {
          Plan alt;
          alt.plan_id = "plan-directive-1";
          PlanStep rebuilt = victim;
          rebuilt.step_id = "r1";
          rebuilt.depends_on.clear();
          rebuilt.hard_dependency = false;
          rebuilt.action = StepAction::WriteMemory;
          rebuilt.target = {EntityKind::Identifier, "fallback_note"};
          rebuilt.params = {{"value", "recorded without the unavailable tool"}};
          alt.steps = {rebuilt};
          s.post_directive_plan = std::move(alt);
        }
      }
      break;
    }
    case StepAction::WriteMemory: {
      rule.fail_signal.message = "memory write rejected: poisoned content detected in " +
                                 victim.target.value;
      rule.fail_signal.origin = SignalOrigin::Internal;
      break;
    }
    case StepAction::PostComment: {
      rule.fail_signal.message = "ui element misclick while posting comment to " +
                                 victim.target.value;
      rule.fail_signal.origin = SignalOrigin::ToolCall;
      rule.partial_effect = true;
      // Skip must stay legal for the follow-up pattern.
      for (auto& step : s.initial_plan.steps) {
        if (std::find(step.depends_on.begin(), step.depends_on.end(),
                      victim.step_id) != step.depends_on.end()) {
          step.hard_dependency = false;
        }
      }
      break;
    }
    case StepAction::ModifyFile: {
      rule.fail_signal.message =
          "model output validation failure: schema mismatch while writing " +
          victim.target.value;
      rule.fail_signal.origin = SignalOrigin::ModelOutput;
      rule.fail_signal.fields = {
          {"output", pick(2) == 0 ? R"({"ok": true})" : "not-a-document"}};
      rule.violated_constraint = "Emit only schema-conformant documents.";
      break;
    }
    default: {
      rule.fail_signal.message = "zzz unexplained rejection zzz while handling " +
                                 victim.target.value;
      rule.fail_signal.origin = SignalOrigin::ExternalSystem;
      break;
    }
  }
  s.environment_rules.insert(s.environment_rules.begin(), std::move(rule));
  return s;
}

std::optional<Scenario> builtin_scenario(std::string_view name) {
  if (name == "autopr") return autopr_scenario();
  if (name == "adversarial") return adversarial_scenario();
  return std::nullopt;
}

namespace {

nlohmann::json serialize(const SignalTemplate& tmpl) {
  nlohmann::json doc{{"message", tmpl.message},
                     {"origin", to_string(tmpl.origin)},
                     {"fields", tmpl.fields}};
  if (tmpl.phase_hint) doc["phase_hint"] = to_string(*tmpl.phase_hint);
  return doc;
}

SignalTemplate signal_template_from_json(const nlohmann::json& doc) {
  SignalTemplate tmpl;
  tmpl.message = doc.at("message").get<std::string>();
  if (doc.contains("origin")) {
    tmpl.origin = origin_from_string(doc["origin"].get<std::string>());
  }
  if (doc.contains("fields")) {
    tmpl.fields = doc["fields"].get<std::map<std::string, std::string>>();
  }
  if (doc.contains("phase_hint")) {
    tmpl.phase_hint = phase_from_string(doc["phase_hint"].get<std::string>());
  }
  return tmpl;
}

nlohmann::json serialize(const Plan& plan) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& step : plan.steps) {
    steps.push_back({{"step_id", step.step_id},
                     {"action", to_string(step.action)},
                     {"target",
                      {{"kind", to_string(step.target.kind)},
                       {"value", step.target.value}}},
                     {"depends_on", step.depends_on},
                     {"hard_dependency", step.hard_dependency},
                     {"params", step.params}});
  }
  return {{"plan_id", plan.plan_id}, {"steps", std::move(steps)}};
}

Plan plan_from_json(const nlohmann::json& doc) {
  Plan plan;
  plan.plan_id = doc.at("plan_id").get<std::string>();
  for (const auto& item : doc.at("steps")) {
    PlanStep step;
    step.step_id = item.at("step_id").get<std::string>();
    step.action = step_action_from_string(item.at("action").get<std::string>());
    const auto& target = item.at("target");
    step.target.kind =
        entity_kind_from_string(target.at("kind").get<std::string>());
    step.target.value = target.at("value").get<std::string>();
    if (item.contains("depends_on")) {
      step.depends_on = item["depends_on"].get<std::vector<std::string>>();
    }
    step.hard_dependency = item.value("hard_dependency", false);
    if (item.contains("params")) {
      step.params = item["params"].get<std::map<std::string, std::string>>();
    }
    plan.steps.push_back(std::move(step));
  }
  return plan;
}

}  // namespace

nlohmann::json serialize(const Scenario& scenario) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& rule : scenario.environment_rules) {
    nlohmann::json doc{{"protected_path_hit", rule.protected_path_hit},
                       {"succeed", rule.succeed},
                       {"fail_signal", serialize(rule.fail_signal)},
                       {"violated_constraint", rule.violated_constraint},
                       {"fail_times", rule.fail_times},
                       {"partial_effect", rule.partial_effect}};
    if (rule.action) doc["action"] = to_string(*rule.action);
    if (rule.step_id) doc["step_id"] = *rule.step_id;
    if (rule.target_substring) doc["target_substring"] = *rule.target_substring;
    rules.push_back(std::move(doc));
  }
  nlohmann::json doc{
      {"name", scenario.name},
      {"seed", scenario.seed},
      {"goal_prompt", scenario.goal_prompt},
      {"initial_plan", serialize(scenario.initial_plan)},
      {"environment_rules", std::move(rules)},
      {"pattern_overrides", scenario.pattern_overrides},
      {"expected_trace", scenario.expected_trace},
      {"protected_paths", scenario.protected_paths},
      {"initial_workspace", scenario.initial_workspace},
      {"initial_memory", scenario.initial_memory},
      {"tool_alternatives", scenario.tool_alternatives},
      {"max_escalation_depth", scenario.max_escalation_depth},
      {"escalation_sink", scenario.escalation_sink},
      {"retry_policy",
       {{"base_delay_ms", scenario.retry_policy.base_delay_ms},
        {"multiplier", scenario.retry_policy.multiplier},
        {"max_attempts", scenario.retry_policy.max_attempts},
        {"jitter", scenario.retry_policy.jitter}}},
  };
  if (scenario.post_directive_plan) {
    doc["post_directive_plan"] = serialize(*scenario.post_directive_plan);
  }
  return doc;
}

Scenario scenario_from_json(const nlohmann::json& doc) {
  try {
    Scenario s;
    s.name = doc.at("name").get<std::string>();
    s.seed = doc.value("seed", std::uint64_t{1});
    s.goal_prompt = doc.at("goal_prompt").get<std::string>();
    s.initial_plan = plan_from_json(doc.at("initial_plan"));
    if (doc.contains("post_directive_plan")) {
      s.post_directive_plan = plan_from_json(doc["post_directive_plan"]);
    }
    for (const auto& item : doc.value("environment_rules", nlohmann::json::array())) {
      EnvRule rule;
      if (item.contains("action")) {
        rule.action = step_action_from_string(item["action"].get<std::string>());
      }
      if (item.contains("step_id")) rule.step_id = item["step_id"].get<std::string>();
      if (item.contains("target_substring")) {
        rule.target_substring = item["target_substring"].get<std::string>();
      }
      rule.protected_path_hit = item.value("protected_path_hit", false);
      rule.succeed = item.value("succeed", false);
      if (item.contains("fail_signal")) {
        rule.fail_signal = signal_template_from_json(item["fail_signal"]);
      } else if (!rule.succeed) {
        throw ParseError("environment rule needs a fail_signal or succeed=true");
      }
      rule.violated_constraint = item.value("violated_constraint", std::string());
      rule.fail_times = item.value("fail_times", -1);
      rule.partial_effect = item.value("partial_effect", false);
      s.environment_rules.push_back(std::move(rule));
    }
    using StringMap = std::map<std::string, std::string>;
    s.pattern_overrides = doc.value("pattern_overrides", StringMap{});
    s.expected_trace = doc.value("expected_trace", std::vector<std::string>{});
    s.protected_paths = doc.value("protected_paths", std::vector<std::string>{});
    s.initial_workspace = doc.value("initial_workspace", StringMap{});
    s.initial_memory = doc.value("initial_memory", StringMap{});
    s.tool_alternatives = doc.value("tool_alternatives", StringMap{});
    s.max_escalation_depth = doc.value("max_escalation_depth", 3);
    s.escalation_sink = doc.value("escalation_sink", std::string("human"));
    if (doc.contains("retry_policy")) {
      const auto& rp = doc["retry_policy"];
      s.retry_policy.base_delay_ms = rp.value("base_delay_ms", std::int64_t{100});
      s.retry_policy.multiplier = rp.value("multiplier", 2.0);
      s.retry_policy.max_attempts = rp.value("max_attempts", 3);
      s.retry_policy.jitter = rp.value("jitter", 0.0);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed scenario document: ") + e.what());
  }
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file: " + path);
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ParseError("scenario file is not valid JSON: " + path);
  return scenario_from_json(doc);
}

}  // namespace shielda
