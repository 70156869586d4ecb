#include <map>
#include <string>
#include <vector>

#include "shielda/agentops.hpp"
#include "shielda/classifier.hpp"
#include "shielda/entity.hpp"
#include "shielda/errors.hpp"
#include "shielda/escalation.hpp"
#include "shielda/registry.hpp"

namespace shielda {
namespace {

const WorkflowEvent* event_at(const std::vector<WorkflowEvent>& events,
                              std::uint64_t seq) {
  if (seq >= 1 && seq <= events.size() && events[seq - 1].seq == seq) {
    return &events[seq - 1];
  }
  for (const auto& event : events) {
    if (event.seq == seq) return &event;
  }
  return nullptr;
}

void note(DecisionTrace& trace, const WorkflowEvent& event, std::string field,
          std::string recorded, std::string derived) {
  if (recorded == derived) return;
  trace.divergences.push_back(
      Divergence{event.seq, event.kind, std::move(field), std::move(recorded),
                 std::move(derived)});
}

std::string payload_str(const nlohmann::json& payload, const char* key) {
  auto it = payload.find(key);
  if (it == payload.end()) return "";
  if (it->is_string()) return it->get<std::string>();
  return it->dump();
}

void check_classified(DecisionTrace& trace, const std::vector<WorkflowEvent>& events,
                      const WorkflowEvent& event, const RuleSet& rules) {
  trace.decisions_checked += 1;
  std::uint64_t signal_seq = event.payload.value("signal_seq", std::uint64_t{0});
  const WorkflowEvent* raised = event_at(events, signal_seq);
  if (!raised || !raised->payload.contains("signal")) {
    note(trace, event, "signal_seq", std::to_string(signal_seq), "missing");
    return;
  }
  RawExceptionSignal signal = signal_from_json(raised->payload["signal"]);
  Classification derived = classify(rules, signal);

  const nlohmann::json& recorded = event.payload["classification"];
  note(trace, event, "exception_id", payload_str(recorded, "exception_id"),
       derived.exception_id);
  note(trace, event, "phase", payload_str(recorded, "phase"), to_string(derived.phase));
  std::string recorded_rule = payload_str(recorded, "matched_rule");
  note(trace, event, "matched_rule", recorded_rule,
       derived.matched_rule.value_or(""));
}

void check_pattern_selected(DecisionTrace& trace, const WorkflowEvent& event,
                            const PatternRegistry& registry,
                            const std::map<std::string, std::string>& overrides) {
  trace.decisions_checked += 1;
  std::string for_id = payload_str(event.payload, "for_exception_id");

  std::string derived_id;
  std::string derived_source;
  auto it = overrides.find(for_id);
  if (it != overrides.end() && registry.pattern(it->second)) {
    derived_id = it->second;
    derived_source = "override";
  } else {
    auto mapped = registry.mapping().find(for_id);
    if (mapped != registry.mapping().end()) {
      derived_id = mapped->second;
      derived_source = "mapping";
    } else {
      derived_id = registry.default_pattern_id();
      derived_source = "default";
    }
  }

  note(trace, event, "pattern_id", payload_str(event.payload, "pattern_id"), derived_id);
  note(trace, event, "source", payload_str(event.payload, "source"), derived_source);
}

void check_reclassified(DecisionTrace& trace, const std::vector<WorkflowEvent>& events,
                        const WorkflowEvent& event, const RuleSet& rules) {
  trace.decisions_checked += 1;
  std::uint64_t symptom_seq = event.payload.value("symptom_seq", std::uint64_t{0});
  const WorkflowEvent* symptom = event_at(events, symptom_seq);
  if (!symptom) {
    note(trace, event, "symptom_seq", std::to_string(symptom_seq), "missing");
    return;
  }

  // Reconstruct what the controller saw: the log strictly before this event.
  std::vector<WorkflowEvent> prefix;
  prefix.reserve(events.size());
  for (const auto& e : events) {
    if (e.seq < event.seq) prefix.push_back(e);
  }

  EntitySet seeds = symptom->entities;
  if (symptom->payload.contains("signal")) {
    RawExceptionSignal signal = signal_from_json(symptom->payload["signal"]);
    EntitySet extracted = extract_entities(signal.message);
    seeds.insert(extracted.begin(), extracted.end());
  }

  CausalChain chain = root_cause_trace(prefix, symptom_seq, seeds);
  Classification prior;
  prior.exception_id = payload_str(event.payload, "prior_exception_id");
  Classification derived = reclassify(rules, prior, chain);

  note(trace, event, "new_exception_id", payload_str(event.payload, "new_exception_id"),
       derived.exception_id);
  const CausalLink* root = chain.root();
  note(trace, event, "root_seq", std::to_string(event.payload.value("root_seq", std::uint64_t{0})),
       root ? std::to_string(root->event.seq) : "0");
  note(trace, event, "root_kind", payload_str(event.payload, "root_kind"),
       root ? to_string(root->event.kind) : "");
}

}  // namespace

DecisionTrace replay(const std::vector<WorkflowEvent>& events,
                     const PatternRegistry& registry, const RuleSet& rules) {
  DecisionTrace trace;

  // Pattern overrides are part of the mission configuration snapshot.
  std::map<std::string, std::string> overrides;
  for (const auto& event : events) {
    if (event.kind != EventKind::GoalIngested) continue;
    auto config = event.payload.find("config");
    if (config == event.payload.end() || !config->is_object()) break;
    auto section = config->find("pattern_overrides");
    if (section == config->end() || !section->is_object()) break;
    for (const auto& [key, value] : section->items()) {
      if (value.is_string()) overrides[key] = value.get<std::string>();
    }
    break;
  }

  for (const auto& event : events) {
    switch (event.kind) {
      case EventKind::Classified:
        check_classified(trace, events, event, rules);
        break;
      case EventKind::PatternSelected:
        check_pattern_selected(trace, event, registry, overrides);
        break;
      case EventKind::Reclassified:
        check_reclassified(trace, events, event, rules);
        break;
      default:
        break;
    }
  }
  return trace;
}

}  // namespace shielda
