#include "shielda/escalation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "shielda/errors.hpp"

namespace shielda {
namespace {

const WorkflowEvent* find_event(const std::vector<WorkflowEvent>& events,
                                std::uint64_t seq) {
  if (seq >= 1 && seq <= events.size() && events[seq - 1].seq == seq) {
    return &events[seq - 1];
  }
  for (const auto& event : events) {
    if (event.seq == seq) return &event;
  }
  return nullptr;
}

EntitySet intersect(const EntitySet& a, const EntitySet& b) {
  EntitySet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                        std::inserter(out, out.begin()));
  return out;
}

std::string join_entity_values(const EntitySet& entities) {
  std::ostringstream out;
  bool first = true;
  for (const auto& entity : entities) {
    if (!first) out << ", ";
    out << entity.value;
    first = false;
  }
  return out.str();
}

nlohmann::json entities_to_json(const EntitySet& entities) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& entity : entities) {
    out.push_back({{"kind", to_string(entity.kind)}, {"value", entity.value}});
  }
  return out;
}

/// Evidence for re-running classification, synthesized from a chain root.
RawExceptionSignal signal_from_root(const WorkflowEvent& root) {
  RawExceptionSignal synth;
  if (root.payload.contains("message") && root.payload["message"].is_string()) {
    synth.message = root.payload["message"].get<std::string>();
  }
  for (const auto& [key, value] : root.payload.items()) {
    if (value.is_string()) synth.structured_fields[key] = value.get<std::string>();
  }
  synth.structured_fields["event_kind"] = to_string(root.kind);
  synth.origin = SignalOrigin::Internal;
  synth.source_phase_hint = root.phase;
  synth.thread_id = root.thread_id;
  return synth;
}

}  // namespace

nlohmann::json serialize(const CausalChain& chain) {
  nlohmann::json links = nlohmann::json::array();
  for (const auto& link : chain.links) {
    links.push_back({
        {"seq", link.event.seq},
        {"kind", to_string(link.event.kind)},
        {"phase", to_string(link.event.phase)},
        {"shared_entities", entities_to_json(link.shared_entities)},
    });
  }
  nlohmann::json out = {{"links", std::move(links)}};
  if (const CausalLink* root = chain.root()) {
    out["root_seq"] = root->event.seq;
    out["root_kind"] = to_string(root->event.kind);
  }
  return out;
}

CausalChain root_cause_trace(const std::vector<WorkflowEvent>& events,
                             std::uint64_t symptom_seq, const EntitySet& seeds) {
  CausalChain chain;
  const WorkflowEvent* symptom = find_event(events, symptom_seq);
  if (!symptom) return chain;

  EntitySet accumulated = seeds;
  accumulated.insert(symptom->entities.begin(), symptom->entities.end());

  CausalLink head{*symptom, symptom->entities};
  head.shared_entities.insert(seeds.begin(), seeds.end());
  chain.links.push_back(std::move(head));

  // Collect backwards to the start of the log; the truncation rule below
  // needs the earliest reasoning/planning member, which a bounded scan
  // could miss.
  std::vector<const WorkflowEvent*> ordered;
  ordered.reserve(events.size());
  for (const auto& event : events) {
    if (event.seq < symptom_seq) ordered.push_back(&event);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const WorkflowEvent* a, const WorkflowEvent* b) { return a->seq > b->seq; });

  for (const WorkflowEvent* event : ordered) {
    EntitySet shared = intersect(event->entities, accumulated);
    if (shared.empty()) continue;
    accumulated.insert(event->entities.begin(), event->entities.end());
    chain.links.push_back(CausalLink{*event, std::move(shared)});
  }

  // Truncate at the earliest member raised during reasoning/planning: that
  // member is the root, and anything before it is noise from a prior phase
  // of the investigation.
  std::size_t root_index = chain.links.size();  // sentinel: no RP member
  for (std::size_t i = 0; i < chain.links.size(); ++i) {
    if (chain.links[i].event.phase == Phase::ReasoningPlanning) root_index = i;
  }
  if (root_index != chain.links.size()) {
    chain.links.resize(root_index + 1);
  }
  return chain;
}

Classification reclassify(const RuleSet& rules, const Classification& prior,
                          const CausalChain& chain) {
  const CausalLink* root = chain.root();
  if (!root) return prior;

  RawExceptionSignal synth = signal_from_root(root->event);
  std::optional<Phase> required;
  if (root->event.phase == Phase::ReasoningPlanning) {
    required = Phase::ReasoningPlanning;
  }
  Classification next = classify_restricted_to_phase(rules, synth, required);
  if (!next.classified()) return prior;
  if (next.exception_id == prior.exception_id) return prior;
  return next;
}

std::string CorrectiveDirective::render() const {
  std::ostringstream out;
  out << original_goal << "\n\nCorrective constraints:";
  for (const auto& constraint : injected_constraints) {
    out << "\n- " << constraint;
  }
  return out.str();
}

CorrectiveDirective synthesize_corrective_directive(const WorkflowEvent& root_event,
                                                    const std::string& original_goal,
                                                    const std::string& violated_constraint) {
  if (original_goal.empty()) {
    throw MissingGoalError("cannot synthesize a directive without the original goal");
  }
  if (violated_constraint.empty()) {
    throw MissingGoalError("cannot synthesize a directive without the violated constraint");
  }
  if (root_event.entities.empty()) {
    throw MissingGoalError(
        "root event carries no entities to ground the corrective constraint");
  }

  CorrectiveDirective directive;
  directive.original_goal = original_goal;
  directive.injected_constraints.push_back(
      violated_constraint + " (applies to: " + join_entity_values(root_event.entities) +
      ")");
  directive.provenance = {
      {"root_seq", root_event.seq},
      {"root_kind", to_string(root_event.kind)},
      {"entities", entities_to_json(root_event.entities)},
  };
  return directive;
}

std::string to_string(EscalationDecision::Kind kind) {
  switch (kind) {
    case EscalationDecision::Kind::Reclassified: return "Reclassified";
    case EscalationDecision::Kind::ExternalSink: return "ExternalSink";
    case EscalationDecision::Kind::TerminateMission: return "TerminateMission";
  }
  return "ExternalSink";
}

EscalationDecision escalate(const HandlingContext& ctx, const HandlingOutcome& outcome,
                            const std::vector<WorkflowEvent>& events) {
  EscalationDecision decision;

  EntitySet seeds = extract_entities(ctx.signal.message);
  if (const WorkflowEvent* symptom = find_event(events, ctx.symptom_seq)) {
    seeds.insert(symptom->entities.begin(), symptom->entities.end());
  }
  decision.chain = root_cause_trace(events, ctx.symptom_seq, seeds);

  if (ctx.escalation_depth >= ctx.max_escalation_depth) {
    decision.kind = EscalationDecision::Kind::TerminateMission;
    decision.depth = ctx.escalation_depth;
    decision.reason = "escalation depth exhausted at " +
                      std::to_string(ctx.escalation_depth) + " for " +
                      ctx.classification.exception_id;
    return decision;
  }

  Classification next = reclassify(*ctx.rules, ctx.classification, decision.chain);
  if (next.classified() && next.exception_id != ctx.classification.exception_id) {
    decision.kind = EscalationDecision::Kind::Reclassified;
    decision.depth = ctx.escalation_depth + 1;
    decision.classification = next;
    const HandlerPattern* chosen = nullptr;
    if (ctx.pattern_overrides) {
      auto it = ctx.pattern_overrides->find(next.exception_id);
      if (it != ctx.pattern_overrides->end()) {
        chosen = ctx.registry->pattern(it->second);
      }
    }
    if (!chosen) chosen = &resolve(*ctx.registry, next.exception_id);
    decision.pattern = *chosen;
    return decision;
  }

  decision.kind = EscalationDecision::Kind::ExternalSink;
  decision.depth = ctx.escalation_depth;
  decision.sink_id = ctx.escalation_sink;

  nlohmann::json excerpt = nlohmann::json::array();
  std::size_t start = events.size() > 5 ? events.size() - 5 : 0;
  for (std::size_t i = start; i < events.size(); ++i) {
    excerpt.push_back({{"seq", events[i].seq}, {"kind", to_string(events[i].kind)}});
  }
  decision.sink_payload = {
      {"signal", serialize(ctx.signal)},
      {"classification", serialize(ctx.classification)},
      {"pattern_id", outcome.pattern_id},
      {"local_result", to_string(outcome.last_local.code)},
      {"local_reason", outcome.last_local.reason},
      {"chain", serialize(decision.chain)},
      {"log_excerpt", std::move(excerpt)},
  };
  return decision;
}

nlohmann::json serialize(const EscalationRecord& record) {
  return {
      {"logical_time", record.logical_time},
      {"mission_id", record.mission_id},
      {"thread_id", record.thread_id},
      {"payload", record.payload},
  };
}

HumanQueueSink::HumanQueueSink(std::string queue_path)
    : queue_path_(std::move(queue_path)) {}

void HumanQueueSink::deliver(const EscalationRecord& record) {
  queued_.push_back(record);
  if (queue_path_.empty()) return;
  std::ofstream out(queue_path_, std::ios::app);
  if (!out) throw IoError("cannot open escalation queue: " + queue_path_);
  out << serialize(record).dump() << "\n";
  out.flush();
  if (!out) throw IoError("failed writing escalation queue: " + queue_path_);
}

void SinkRegistry::add(std::unique_ptr<EscalationSink> sink) {
  sinks_.push_back(std::move(sink));
}

EscalationSink* SinkRegistry::find(const std::string& id) const {
  for (const auto& sink : sinks_) {
    if (sink->id() == id) return sink.get();
  }
  return nullptr;
}

SinkRegistry make_default_sinks(const std::string& queue_path) {
  SinkRegistry sinks;
  sinks.add(std::make_unique<HumanQueueSink>(queue_path));
  sinks.add(std::make_unique<DropSink>());
  return sinks;
}

}  // namespace shielda
