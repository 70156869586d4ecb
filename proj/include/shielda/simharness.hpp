#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shielda/agentops.hpp"
#include "shielda/classifier.hpp"
#include "shielda/entity.hpp"
#include "shielda/executor.hpp"
#include "shielda/registry.hpp"
#include "shielda/taxonomy.hpp"

namespace shielda {

enum class StepAction : std::uint8_t {
  ModifyFile,
  PushCommits,
  InvokeTool,
  PostComment,
  WriteMemory,
  RequestReview,
};

std::string to_string(StepAction action);
StepAction step_action_from_string(std::string_view token);

struct PlanStep {
  std::string step_id;
  StepAction action = StepAction::InvokeTool;
  EntityRef target;
  std::vector<std::string> depends_on;
  bool hard_dependency = false;  ///< this step's dependencies are hard
  std::map<std::string, std::string> params;
};

struct Plan {
  std::string plan_id;
  std::vector<PlanStep> steps;
};

/// Raw-signal blueprint an environment rule raises on failure.
struct SignalTemplate {
  std::string message;
  SignalOrigin origin = SignalOrigin::Internal;
  std::map<std::string, std::string> fields;
  std::optional<Phase> phase_hint;
};

/// One environment behaviour rule: a step predicate plus an outcome.
/// Rules are evaluated in order and the first match decides.
struct EnvRule {
  // Predicate; set members are conjunctive, unset members match anything.
  std::optional<StepAction> action;
  std::optional<std::string> step_id;
  std::optional<std::string> target_substring;
  bool protected_path_hit = false;  ///< require the step to touch a protected path

  // Outcome.
  bool succeed = false;  ///< short-circuit success instead of failing
  SignalTemplate fail_signal;
  std::string violated_constraint;  ///< surfaced to Plan Repair when set
  int fail_times = -1;              ///< -1: always fail; k>=0: fail first k evaluations
  bool partial_effect = false;      ///< record the side effect once before failing
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  std::string goal_prompt;
  Plan initial_plan;
  std::optional<Plan> post_directive_plan;
  std::vector<EnvRule> environment_rules;
  std::map<std::string, std::string> pattern_overrides;
  std::vector<std::string> expected_trace;  ///< golden event-kind names, optional
  std::vector<std::string> protected_paths;
  std::map<std::string, std::string> initial_workspace;
  std::map<std::string, std::string> initial_memory;
  std::map<std::string, std::string> tool_alternatives;  ///< tool → working fallback
  int max_escalation_depth = 3;
  std::string escalation_sink = "human";
  RetryPolicy retry_policy;
};

/// One applied external side effect. Compensation appends an inverse entry
/// and marks the pair cancelled; nothing is ever removed.
struct SideEffectEntry {
  std::uint64_t index = 0;
  std::string step_id;
  std::string thread_id;
  std::string effect_kind;
  std::string target;
  std::string payload;
  bool inverse = false;
  std::optional<std::uint64_t> inverse_of;
  bool cancelled = false;
};

class EnvironmentLedger {
 public:
  std::uint64_t record(std::string step_id, std::string thread_id,
                       std::string effect_kind, std::string target,
                       std::string payload = "");

  /// Appends the inverse entry and marks both directions cancelled.
  /// Throws StateRecoveryError for an unknown or already-cancelled index.
  std::uint64_t compensate(std::uint64_t index);

  const std::vector<SideEffectEntry>& entries() const { return entries_; }

  /// Forward entries still in force (not cancelled, not inverses).
  std::vector<const SideEffectEntry*> effective() const;
  std::vector<std::uint64_t> effective_for_step(const std::string& step_id) const;
  std::string effective_digest() const;

 private:
  std::vector<SideEffectEntry> entries_;
};

/// The simulated world: workspace files, agent memory, the external ledger.
/// Adapts itself to the recovery ports.
class EnvironmentState final : public StatePort, public LedgerPort {
 public:
  std::map<std::string, std::string> workspace;
  std::map<std::string, std::string> memory;
  std::vector<std::string> protected_paths;
  EnvironmentLedger ledger;

  bool path_protected(const std::string& path) const;

  // StatePort. Memory scope covers the memory map; every other scope is the
  // whole internal state (workspace + memory).
  std::string snapshot_scope(ArtifactKind scope) const override;
  void restore_scope(ArtifactKind scope, const std::string& snapshot) override;
  void reset_memory() override { memory.clear(); }

  // LedgerPort.
  std::vector<std::uint64_t> effects_for_step(const std::string& step_id) const override;
  void compensate_effect(std::uint64_t effect_index) override;
  std::string effective_digest() const override;
};

enum class RunStatus : std::uint8_t {
  MissionCompleted,
  MissionTerminated,
  EscalatedToSink,
};

std::string to_string(RunStatus status);

struct RunOptions {
  std::optional<std::uint64_t> seed;  ///< overrides scenario.seed
  std::string log_path;               ///< JSONL sink; empty keeps the log in memory
  std::string queue_path;             ///< escalation queue file; empty keeps it in memory
};

struct RunReport {
  RunStatus final_status = RunStatus::MissionTerminated;
  std::string reason;
  std::uint64_t event_count = 0;
  std::vector<std::string> event_kinds;
  std::vector<HandlingOutcome> outcomes;
  int escalations = 0;
  int reclassifications = 0;
  int max_depth_used = 0;
  int threads = 0;
  int sink_records = 0;
};

nlohmann::json serialize(const RunReport& report);

/// Drives one mission to a terminal status. Deterministic under a fixed
/// seed; the log (in log_out and/or options.log_path) is the full record.
/// Throws ScenarioConfigError for structurally invalid scenarios.
RunReport run_scenario(const Scenario& scenario, const Taxonomy& taxonomy,
                       const RuleSet& rules, const PatternRegistry& registry,
                       const RunOptions& options = {}, EventLog* log_out = nullptr);

/// Built-in scenario reproducing the cross-phase permission failure: a plan
/// that edits a protected workflow file, a push the host rejects, retry
/// exhaustion, root-cause reclassification, plan repair, and a compliant
/// second thread.
Scenario autopr_scenario();

/// Built-in scenario where every applicable pattern fails and the depth
/// limit forces mission termination.
Scenario adversarial_scenario();

/// Seeded generator for single-fault property scenarios.
Scenario random_scenario(std::uint64_t seed);

/// Returns a copy whose environment fails step_id with the given signal.
/// Throws UnknownStepError when the initial plan has no such step.
Scenario inject_fault(Scenario scenario, const std::string& step_id,
                      SignalTemplate fault);

/// Structural validation run_scenario applies before starting.
void validate_scenario(const Scenario& scenario);

nlohmann::json serialize(const Scenario& scenario);

/// Inverse of serialize(Scenario). Throws ParseError on malformed documents.
Scenario scenario_from_json(const nlohmann::json& doc);

/// Reads and parses a scenario document. Throws IoError / ParseError.
Scenario load_scenario_file(const std::string& path);

/// Looks up built-in scenarios by name ("autopr", "adversarial"); empty
/// optional for unknown names.
std::optional<Scenario> builtin_scenario(std::string_view name);

}  // namespace shielda
