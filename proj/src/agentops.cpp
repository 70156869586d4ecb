#include "shielda/agentops.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "shielda/errors.hpp"

namespace shielda {
namespace {

constexpr std::array<const char*, 19> kEventKindTokens = {
    "GoalIngested",     "PlanGenerated",  "PlanStepStarted", "ToolInvoked",
    "SideEffectRecorded", "ExceptionRaised", "Classified",    "PatternSelected",
    "LocalAttempt",     "FlowApplied",    "RecoveryApplied", "EscalationStarted",
    "Reclassified",     "DirectiveIssued", "ThreadAborted",  "StepSkipped",
    "MissionCompleted", "MissionTerminated", "CheckpointTaken"};

// Payload keys every event of a kind must carry. The record is only useful
// as replay evidence if these are present.
const std::map<EventKind, std::vector<const char*>>& required_payload_keys() {
  static const std::map<EventKind, std::vector<const char*>> keys = {
      {EventKind::GoalIngested, {"goal", "config"}},
      {EventKind::PlanGenerated, {"plan_id", "steps", "message"}},
      {EventKind::PlanStepStarted, {"step_id", "action", "target"}},
      {EventKind::ToolInvoked, {"step_id", "tool", "result"}},
      {EventKind::SideEffectRecorded, {"step_id", "effect_kind", "target"}},
      {EventKind::ExceptionRaised, {"signal", "message"}},
      {EventKind::Classified, {"classification", "signal_seq"}},
      {EventKind::PatternSelected, {"pattern_id", "for_exception_id", "source"}},
      {EventKind::LocalAttempt, {"attempt", "mechanism", "result"}},
      {EventKind::FlowApplied, {"decision"}},
      {EventKind::RecoveryApplied, {"action", "scope", "digest_before", "digest_after"}},
      {EventKind::EscalationStarted, {"symptom_seq", "depth"}},
      {EventKind::Reclassified,
       {"prior_exception_id", "new_exception_id", "symptom_seq", "chain", "root_seq",
        "root_kind"}},
      {EventKind::DirectiveIssued, {"directive", "constraints"}},
      {EventKind::ThreadAborted, {"reason"}},
      {EventKind::StepSkipped, {"step_id"}},
      {EventKind::MissionCompleted, {"summary"}},
      {EventKind::MissionTerminated, {"reason"}},
      {EventKind::CheckpointTaken, {"checkpoint_id", "scope", "digest"}},
  };
  return keys;
}

void validate_payload(const WorkflowEvent& event) {
  const auto& keys = required_payload_keys().at(event.kind);
  for (const char* key : keys) {
    if (!event.payload.contains(key)) {
      throw IntegrityError("event: " + to_string(event.kind) +
                           " payload missing required key " + key);
    }
  }
}

}  // namespace

std::string to_string(EventKind kind) {
  return kEventKindTokens[static_cast<std::size_t>(kind)];
}

EventKind event_kind_from_string(std::string_view token) {
  for (std::size_t i = 0; i < kEventKindTokens.size(); ++i) {
    if (token == kEventKindTokens[i]) return static_cast<EventKind>(i);
  }
  throw ParseError("unknown event kind: " + std::string(token));
}

nlohmann::json serialize(const WorkflowEvent& event) {
  nlohmann::json entities = nlohmann::json::array();
  for (const auto& entity : event.entities) {
    entities.push_back({{"kind", to_string(entity.kind)}, {"value", entity.value}});
  }
  return {{"seq", event.seq},
          {"logical_time", event.logical_time},
          {"thread_id", event.thread_id},
          {"mission_id", event.mission_id},
          {"phase", to_string(event.phase)},
          {"kind", to_string(event.kind)},
          {"payload", event.payload},
          {"entities", std::move(entities)}};
}

WorkflowEvent event_from_json(const nlohmann::json& doc) {
  WorkflowEvent event;
  try {
    event.seq = doc.at("seq").get<std::uint64_t>();
    event.logical_time = doc.at("logical_time").get<std::int64_t>();
    event.thread_id = doc.at("thread_id").get<std::string>();
    event.mission_id = doc.at("mission_id").get<std::string>();
    event.phase = phase_from_string(doc.at("phase").get<std::string>());
    event.kind = event_kind_from_string(doc.at("kind").get<std::string>());
    event.payload = doc.at("payload");
    for (const auto& item : doc.at("entities")) {
      event.entities.insert(
          EntityRef{entity_kind_from_string(item.at("kind").get<std::string>()),
                    item.at("value").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedLogError(std::string("event: bad document: ") + e.what());
  }
  return event;
}

void EventLog::attach_sink(const std::string& path) {
  std::lock_guard<std::mutex> lock(mutex_);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("log: cannot open sink " + path);
  sink_path_ = path;
  sink_enabled_ = true;
}

const WorkflowEvent& EventLog::append(WorkflowEvent event) {
  std::lock_guard<std::mutex> lock(mutex_);
  event.seq = events_.size() + 1;
  if (event.entities.empty() && event.payload.contains("message") &&
      event.payload["message"].is_string()) {
    event.entities = extract_entities(event.payload["message"].get<std::string>());
  }
  validate_payload(event);
  events_.push_back(std::move(event));
  const WorkflowEvent& stored = events_.back();
  if (sink_enabled_) {
    std::ofstream out(sink_path_, std::ios::app);
    if (!out) throw IoError("log: cannot append to sink " + sink_path_);
    out << serialize(stored).dump() << '\n';
    out.flush();
    if (!out) throw IoError("log: write failed on sink " + sink_path_);
  }
  return stored;
}

const WorkflowEvent* EventLog::find(std::uint64_t seq) const {
  std::lock_guard<std::mutex> lock(mutex_);
  if (seq == 0 || seq > events_.size()) return nullptr;
  return &events_[seq - 1];
}

std::vector<const WorkflowEvent*> EventLog::query(const EventFilter& filter) const {
  std::lock_guard<std::mutex> lock(mutex_);
  std::vector<const WorkflowEvent*> out;
  for (const auto& event : events_) {
    if (filter.thread_id && event.thread_id != *filter.thread_id) continue;
    if (filter.kind && event.kind != *filter.kind) continue;
    if (filter.min_seq && event.seq < *filter.min_seq) continue;
    if (filter.max_seq && event.seq > *filter.max_seq) continue;
    out.push_back(&event);
  }
  return out;
}

std::vector<WorkflowEvent> parse_log_lines(const std::string& text) {
  std::vector<WorkflowEvent> events;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLogError("log: line " + std::to_string(line_no) +
                              " is not JSON: " + e.what());
    }
    events.push_back(event_from_json(doc));
    if (events.back().seq != events.size()) {
      throw MalformedLogError("log: seq must be gapless from 1; line " +
                              std::to_string(line_no) + " carries seq " +
                              std::to_string(events.back().seq));
    }
  }
  return events;
}

std::vector<WorkflowEvent> read_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("log: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_log_lines(buffer.str());
}

std::string render_log_lines(const std::vector<WorkflowEvent>& events) {
  std::string out;
  for (const auto& event : events) {
    out += serialize(event).dump();
    out += '\n';
  }
  return out;
}

std::string content_digest(std::string_view bytes) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

const Checkpoint& CheckpointStore::take(std::string thread_id, ArtifactKind scope,
                                        std::string snapshot) {
  Checkpoint cp;
  cp.checkpoint_id = "cp" + std::to_string(next_id_++);
  cp.thread_id = std::move(thread_id);
  cp.scope = scope;
  cp.state_digest = content_digest(snapshot);
  cp.snapshot = std::move(snapshot);
  checkpoints_.push_back(std::move(cp));
  return checkpoints_.back();
}

const Checkpoint* CheckpointStore::find(std::string_view checkpoint_id) const {
  for (const auto& cp : checkpoints_) {
    if (cp.checkpoint_id == checkpoint_id) return &cp;
  }
  return nullptr;
}

const Checkpoint* CheckpointStore::latest(ArtifactKind scope) const {
  for (auto it = checkpoints_.rbegin(); it != checkpoints_.rend(); ++it) {
    if (it->scope == scope) return &*it;
  }
  return nullptr;
}

}  // namespace shielda
