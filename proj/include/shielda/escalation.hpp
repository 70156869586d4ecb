#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shielda/agentops.hpp"
#include "shielda/classifier.hpp"
#include "shielda/entity.hpp"
#include "shielda/executor.hpp"
#include "shielda/registry.hpp"

namespace shielda {

/// One hop of a causal trace. The event is snapshotted so the chain stays
/// self-contained; shared_entities is the non-empty overlap that linked the
/// event into the chain (for the symptom itself it is the seed set).
struct CausalLink {
  WorkflowEvent event;
  EntitySet shared_entities;
};

/// Backward trace from a symptom toward its root. Links are ordered by
/// strictly decreasing seq; the last link is the root candidate.
struct CausalChain {
  std::vector<CausalLink> links;

  bool empty() const { return links.empty(); }
  const CausalLink* root() const { return links.empty() ? nullptr : &links.back(); }
};

nlohmann::json serialize(const CausalChain& chain);

/// Walks the log backwards from symptom_seq, accumulating every event that
/// shares at least one entity with the growing entity set. The finished
/// chain is truncated at the earliest reasoning/planning-phase member when
/// one exists; otherwise it extends to the start of the log.
CausalChain root_cause_trace(const std::vector<WorkflowEvent>& events,
                             std::uint64_t symptom_seq, const EntitySet& seeds);

/// Re-runs classification against evidence synthesized from the chain's root
/// event. Returns prior unchanged when the chain is empty, nothing matches,
/// or the match reproduces the prior id — so the operation is idempotent on
/// unchanged evidence. A reasoning/planning root restricts candidate rules
/// to types that can occur in that phase.
Classification reclassify(const RuleSet& rules, const Classification& prior,
                          const CausalChain& chain);

/// Instruction pushed back into planning after a root cause is identified.
struct CorrectiveDirective {
  std::string original_goal;
  std::vector<std::string> injected_constraints;  ///< non-empty
  std::string target = "ReasoningModule";
  nlohmann::json provenance;  ///< root seq/kind plus grounding entities

  std::string render() const;
};

/// Builds a directive from the root event. Every injected constraint quotes
/// the violated constraint verbatim and names at least one entity carried by
/// the root event. Throws MissingGoalError when the goal, the constraint, or
/// the root's grounding entities are missing.
CorrectiveDirective synthesize_corrective_directive(const WorkflowEvent& root_event,
                                                    const std::string& original_goal,
                                                    const std::string& violated_constraint);

struct EscalationDecision {
  enum class Kind : std::uint8_t { Reclassified, ExternalSink, TerminateMission };

  Kind kind = Kind::ExternalSink;
  int depth = 0;
  CausalChain chain;

  // Kind::Reclassified
  Classification classification;
  HandlerPattern pattern;

  // Kind::ExternalSink
  std::string sink_id;
  nlohmann::json sink_payload;

  // Kind::TerminateMission
  std::string reason;
};

std::string to_string(EscalationDecision::Kind kind);

/// Controller step after local handling gave up. Traces the root cause,
/// attempts reclassification, and decides: re-enter handling under a new
/// pattern, hand off to the configured sink, or terminate once
/// ctx.escalation_depth has reached ctx.max_escalation_depth.
EscalationDecision escalate(const HandlingContext& ctx, const HandlingOutcome& outcome,
                            const std::vector<WorkflowEvent>& events);

/// Record delivered to an escalation sink.
struct EscalationRecord {
  std::int64_t logical_time = 0;
  std::string mission_id;
  std::string thread_id;
  nlohmann::json payload;
};

nlohmann::json serialize(const EscalationRecord& record);

class EscalationSink {
 public:
  virtual ~EscalationSink() = default;
  virtual std::string id() const = 0;
  virtual void deliver(const EscalationRecord& record) = 0;
};

/// Queues records as JSONL for asynchronous human review. An empty path
/// keeps the queue in memory only.
class HumanQueueSink final : public EscalationSink {
 public:
  explicit HumanQueueSink(std::string queue_path = "");

  std::string id() const override { return "human"; }
  void deliver(const EscalationRecord& record) override;

  const std::vector<EscalationRecord>& queued() const { return queued_; }

 private:
  std::string queue_path_;
  std::vector<EscalationRecord> queued_;
};

/// Accepts and discards records; selecting it means the mission ends rather
/// than waiting on review.
class DropSink final : public EscalationSink {
 public:
  std::string id() const override { return "drop"; }
  void deliver(const EscalationRecord& record) override { delivered_ += 1; (void)record; }

  int delivered() const { return delivered_; }

 private:
  int delivered_ = 0;
};

class SinkRegistry {
 public:
  void add(std::unique_ptr<EscalationSink> sink);
  EscalationSink* find(const std::string& id) const;

 private:
  std::vector<std::unique_ptr<EscalationSink>> sinks_;
};

/// The two shipped sinks: "human" (JSONL queue) and "drop".
SinkRegistry make_default_sinks(const std::string& queue_path = "");

}  // namespace shielda
