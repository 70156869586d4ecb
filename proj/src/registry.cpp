#include "shielda/registry.hpp"

#include <array>
#include <fstream>
#include <istream>
#include <regex>
#include <set>

#include "shielda/errors.hpp"

namespace shielda {
namespace {

struct MechanismInfo {
  const char* name;
  const char* description;
};

constexpr std::array<MechanismInfo, kMechanismCount> kMechanisms = {{
    {"Clarify Prompt", "Ask the user or caller to restate an unclear request"},
    {"Echo Validation", "Echo the interpreted input back for confirmation before acting"},
    {"Context Tagging", "Tag context fragments with provenance so corrupt spans can be isolated"},
    {"Default Interpretation", "Proceed with the most conventional reading of an ambiguous input"},
    {"Disentangled Prompting", "Split conflicting knowledge into separate prompts and answer each on its own"},
    {"Prompt Rewriting", "Rewrite the working prompt to remove the defect before retrying"},
    {"Prompt Sanitization", "Strip injected or untrusted spans from the prompt"},
    {"Graph Validation", "Check the reasoning graph for contradictions and broken edges"},
    {"KB Trust Scoring", "Weight knowledge entries by source trust before use"},
    {"Logic Re-ranking", "Re-rank candidate conclusions by logical consistency"},
    {"Recursive Checkpointing", "Re-derive the reasoning from the last consistent checkpoint"},
    {"Abort Task Chain", "Stop the failing task chain outright"},
    {"Conflict Resolution", "Run a structured resolution step between conflicting parties"},
    {"Constraint Pruning", "Drop unsatisfiable constraints from the plan"},
    {"Forward Chaining", "Check remaining plan steps forward for feasibility"},
    {"Peer Confirmation", "Confirm disputed state with the peer agent"},
    {"Plan Repair", "Regenerate the plan under corrective constraints"},
    {"Plan Shortening", "Cut the plan down to the steps the goal actually needs"},
    {"Role-based Check", "Verify the acting agent holds the role the action requires"},
    {"Subgoal Reordering", "Reorder subgoals to restore dependency order"},
    {"Attribute Filtering", "Filter recalled memory by task-relevant attributes"},
    {"Escalate UI Failure", "Hand a failed UI interaction to a supervising controller"},
    {"External Call Timeout", "Bound the external call with a timeout and give up on expiry"},
    {"Fallback", "Output a default template when the structured result is broken"},
    {"Fallback to Alternate API", "Call a substitute API offering the same capability"},
    {"Low-confidence Filter", "Suppress outputs whose confidence falls below threshold"},
    {"Memory Slot Isolation", "Quarantine the suspect memory slot from recall"},
    {"Oracle Verification", "Verify claims against a trusted oracle"},
    {"Output Sanitization", "Scrub unsafe content from the output before passing it on"},
    {"Output Truncation", "Truncate output to fit downstream size limits"},
    {"Protocol Downgrade", "Fall back to an older protocol version both sides support"},
    {"Reset Memory", "Clear working memory back to a clean slate"},
    {"Response Normalization", "Coerce a malformed response into the expected shape"},
    {"Retry with Backoff", "Retry the call with exponentially growing delays"},
    {"Sampling Adjustment", "Adjust decoding parameters and regenerate"},
    {"Schema Validation", "Validate the payload against its schema"},
    {"Semantic Constraint Checking", "Check results against task-level semantic constraints"},
    {"Switch Tool", "Invoke an alternative tool with the same capability"},
    {"Timeout Escalation", "Escalate when a call exceeds its time budget"},
    {"Escalate to Human", "Hand the case to a human operator"},
}};

// Catalogue variants that appear in the pattern table under slightly
// different names than the mechanism list uses.
struct MechanismAlias {
  const char* alias;
  LocalHandlingMechanism mechanism;
};

constexpr std::array<MechanismAlias, 4> kMechanismAliases = {{
    {"Forward Checking", LocalHandlingMechanism::ForwardChaining},
    {"Fallback Template", LocalHandlingMechanism::Fallback},
    {"External Call Timeout Fallback", LocalHandlingMechanism::ExternalCallTimeout},
    {"Conflict Resolution Prompt", LocalHandlingMechanism::ConflictResolution},
}};

constexpr std::array<const char*, 3> kFlowTokens = {"Continue", "Skip", "Abort"};
constexpr std::array<const char*, 3> kRecoveryTokens = {"No-op", "Rollback", "Compensate"};

const std::regex& pattern_id_shape() {
  static const std::regex re("^P[0-9]{3}$");
  return re;
}

}  // namespace

std::string to_string(LocalHandlingMechanism mechanism) {
  return kMechanisms[static_cast<std::size_t>(mechanism) - 1].name;
}

std::string_view mechanism_description(LocalHandlingMechanism mechanism) {
  return kMechanisms[static_cast<std::size_t>(mechanism) - 1].description;
}

LocalHandlingMechanism mechanism_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kMechanisms.size(); ++i) {
    if (name == kMechanisms[i].name) {
      return static_cast<LocalHandlingMechanism>(i + 1);
    }
  }
  for (const auto& alias : kMechanismAliases) {
    if (name == alias.alias) return alias.mechanism;
  }
  throw InvalidTriadError("local", "unknown local handling mechanism: " + std::string(name));
}

std::string to_string(FlowControlDecision flow) {
  return kFlowTokens[static_cast<std::size_t>(flow)];
}

FlowControlDecision flow_from_string(std::string_view token) {
  for (std::size_t i = 0; i < kFlowTokens.size(); ++i) {
    if (token == kFlowTokens[i]) return static_cast<FlowControlDecision>(i);
  }
  throw InvalidTriadError("flow", "unknown flow control decision: " + std::string(token));
}

std::string to_string(StateRecoveryAction recovery) {
  return kRecoveryTokens[static_cast<std::size_t>(recovery)];
}

StateRecoveryAction recovery_from_string(std::string_view token) {
  for (std::size_t i = 0; i < kRecoveryTokens.size(); ++i) {
    if (token == kRecoveryTokens[i]) return static_cast<StateRecoveryAction>(i);
  }
  throw InvalidTriadError("recovery", "unknown state recovery action: " + std::string(token));
}

nlohmann::json serialize(const HandlerPattern& pattern) {
  return {{"id", pattern.pattern_id},
          {"local", to_string(pattern.local)},
          {"flow", to_string(pattern.flow)},
          {"recovery", to_string(pattern.recovery)}};
}

HandlerPattern validate_pattern(std::string_view pattern_id, std::string_view local,
                                std::string_view flow, std::string_view recovery) {
  HandlerPattern pattern;
  pattern.pattern_id = std::string(pattern_id);
  pattern.local = mechanism_from_name(local);
  pattern.flow = flow_from_string(flow);
  pattern.recovery = recovery_from_string(recovery);
  return pattern;
}

HandlerPattern validate_pattern(std::string_view local, std::string_view flow,
                                std::string_view recovery) {
  return validate_pattern("P000", local, flow, recovery);
}

const HandlerPattern* PatternRegistry::pattern(std::string_view pattern_id) const {
  for (const auto& p : patterns_) {
    if (p.pattern_id == pattern_id) return &p;
  }
  return nullptr;
}

PatternRegistry load_registry(std::istream& in, const Taxonomy& taxonomy) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("registry: invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("patterns") || !doc["patterns"].is_array()) {
    throw ParseError("registry: document must be an object with a patterns array");
  }

  PatternRegistry registry;
  std::set<std::string> seen;
  for (const auto& item : doc["patterns"]) {
    std::string id;
    try {
      id = item.at("id").get<std::string>();
      registry.patterns_.push_back(
          validate_pattern(id, item.at("local").get<std::string>(),
                           item.at("flow").get<std::string>(),
                           item.at("recovery").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("registry: bad pattern: ") + e.what());
    }
    if (!std::regex_match(id, pattern_id_shape())) {
      throw IntegrityError("registry: pattern id must look like P012, got " + id);
    }
    if (!seen.insert(id).second) {
      throw IntegrityError("registry: duplicate pattern id: " + id);
    }
  }

  if (doc.contains("mapping")) {
    if (!doc["mapping"].is_object()) throw ParseError("registry: mapping must be an object");
    for (const auto& [exception_id, pattern_id] : doc["mapping"].items()) {
      if (taxonomy.lookup(exception_id) == nullptr) {
        throw UnknownTargetError("registry: mapping names unknown exception id " +
                                 exception_id);
      }
      const auto target = pattern_id.get<std::string>();
      if (registry.pattern(target) == nullptr) {
        throw IntegrityError("registry: mapping for " + exception_id +
                             " names unknown pattern " + target);
      }
      registry.mapping_[exception_id] = target;
    }
  }

  if (!doc.contains("default")) {
    throw ParseError("registry: missing default pattern id");
  }
  registry.default_pattern_id_ = doc["default"].get<std::string>();
  if (registry.pattern(registry.default_pattern_id_) == nullptr) {
    throw IntegrityError("registry: default names unknown pattern " +
                         registry.default_pattern_id_);
  }
  return registry;
}

PatternRegistry load_registry_file(const std::string& path, const Taxonomy& taxonomy) {
  std::ifstream in(path);
  if (!in) throw IoError("registry: cannot open " + path);
  return load_registry(in, taxonomy);
}

const HandlerPattern& resolve(const PatternRegistry& registry, std::string_view exception_id) {
  auto it = registry.mapping().find(std::string(exception_id));
  if (it != registry.mapping().end()) {
    return *registry.pattern(it->second);
  }
  return *registry.pattern(registry.default_pattern_id());
}

nlohmann::json serialize(const PatternRegistry& registry) {
  nlohmann::json patterns = nlohmann::json::array();
  for (const auto& p : registry.patterns()) patterns.push_back(serialize(p));
  return {{"patterns", std::move(patterns)},
          {"mapping", registry.mapping()},
          {"default", registry.default_pattern_id()}};
}

}  // namespace shielda
