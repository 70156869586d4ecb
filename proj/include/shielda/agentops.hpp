#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shielda/classifier.hpp"
#include "shielda/entity.hpp"
#include "shielda/registry.hpp"
#include "shielda/taxonomy.hpp"

namespace shielda {

/// Everything the engine can put on the record.
enum class EventKind : std::uint8_t {
  GoalIngested,
  PlanGenerated,
  PlanStepStarted,
  ToolInvoked,
  SideEffectRecorded,
  ExceptionRaised,
  Classified,
  PatternSelected,
  LocalAttempt,
  FlowApplied,
  RecoveryApplied,
  EscalationStarted,
  Reclassified,
  DirectiveIssued,
  ThreadAborted,
  StepSkipped,
  MissionCompleted,
  MissionTerminated,
  CheckpointTaken,
};

std::string to_string(EventKind kind);
EventKind event_kind_from_string(std::string_view token);

/// One record in the append-only workflow log.
struct WorkflowEvent {
  std::uint64_t seq = 0;  ///< gapless, starts at 1
  std::int64_t logical_time = 0;
  std::string thread_id;
  std::string mission_id;
  Phase phase = Phase::Execution;
  EventKind kind = EventKind::GoalIngested;
  nlohmann::json payload = nlohmann::json::object();
  EntitySet entities;
};

nlohmann::json serialize(const WorkflowEvent& event);
WorkflowEvent event_from_json(const nlohmann::json& doc);

/// Filter for EventLog::query; unset members match everything.
struct EventFilter {
  std::optional<std::string> thread_id;
  std::optional<EventKind> kind;
  std::optional<std::uint64_t> min_seq;
  std::optional<std::uint64_t> max_seq;
};

/// Append-only event log. Appends are serialized; seq is assigned here and
/// is gapless. With a file sink attached every append writes one JSON line
/// and flushes before returning.
class EventLog {
 public:
  EventLog() = default;

  /// Opens (truncating) a JSONL sink; subsequent appends stream to it.
  void attach_sink(const std::string& path);

  /// Assigns seq and logical metadata, materializes entity refs from the
  /// payload's message if none were provided, validates kind-specific
  /// payload keys, stores and (if attached) writes the event.
  const WorkflowEvent& append(WorkflowEvent event);

  const std::vector<WorkflowEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  const WorkflowEvent* find(std::uint64_t seq) const;

  std::vector<const WorkflowEvent*> query(const EventFilter& filter) const;

 private:
  mutable std::mutex mutex_;
  std::vector<WorkflowEvent> events_;
  std::string sink_path_;
  bool sink_enabled_ = false;
};

/// Reads a JSONL log back into memory. Throws MalformedLogError on
/// undecodable lines or a broken seq sequence.
std::vector<WorkflowEvent> read_log_file(const std::string& path);
std::vector<WorkflowEvent> parse_log_lines(const std::string& text);
std::string render_log_lines(const std::vector<WorkflowEvent>& events);

/// 64-bit FNV-1a, hex-encoded; the digest used for state snapshots.
std::string content_digest(std::string_view bytes);

/// A named snapshot of one artifact scope of agent state.
struct Checkpoint {
  std::string checkpoint_id;
  std::string thread_id;
  ArtifactKind scope = ArtifactKind::Memory;
  std::string state_digest;
  std::string snapshot;  ///< serialized scoped state
};

/// In-memory checkpoint store keyed by id, with latest-per-scope lookup.
/// Returned references stay valid for the store's lifetime.
class CheckpointStore {
 public:
  const Checkpoint& take(std::string thread_id, ArtifactKind scope, std::string snapshot);
  const Checkpoint* find(std::string_view checkpoint_id) const;

  /// Most recently taken checkpoint for the scope, regardless of thread;
  /// thread-local state is shared within a mission.
  const Checkpoint* latest(ArtifactKind scope) const;

  std::size_t size() const { return checkpoints_.size(); }

 private:
  std::deque<Checkpoint> checkpoints_;  // reference-stable under growth
  std::uint64_t next_id_ = 1;
};

/// One recorded disagreement between the log and a re-derived decision.
struct Divergence {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::Classified;
  std::string field;
  std::string recorded;
  std::string derived;
};

struct DecisionTrace {
  std::size_t decisions_checked = 0;
  std::vector<Divergence> divergences;

  bool clean() const { return divergences.empty(); }
};

/// Re-derives every Classified, PatternSelected and Reclassified decision in
/// the log from the rule set and registry and reports mismatches. An empty
/// log yields an empty, clean trace.
DecisionTrace replay(const std::vector<WorkflowEvent>& events,
                     const PatternRegistry& registry, const RuleSet& rules);

}  // namespace shielda
