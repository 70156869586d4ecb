#include "shielda/classifier.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>

namespace shielda {
namespace {

constexpr std::array<const char*, 5> kOriginTokens = {
    "ToolCall", "ModelOutput", "AgentMessage", "ExternalSystem", "Internal"};

// Case-insensitive substring scan; rules should not depend on the casing of
// upstream error strings.
bool contains_icase(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  auto lower = [](unsigned char c) { return static_cast<char>(std::tolower(c)); };
  auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end(),
                        [&](char a, char b) { return lower(a) == lower(b); });
  return it != haystack.end();
}

Phase resolve_phase(Phase entry_phase, std::optional<Phase> hint) {
  if (entry_phase != Phase::Both) return entry_phase;
  if (hint && *hint != Phase::Both) return *hint;
  return Phase::Execution;
}

bool rule_matches(const ClassificationRule& rule, const RawExceptionSignal& signal,
                  std::vector<std::string>* evidence) {
  const auto& p = rule.predicate;
  if (p.message_substring && !contains_icase(signal.message, *p.message_substring)) {
    return false;
  }
  if (rule.compiled_regex &&
      !std::regex_search(signal.message, *rule.compiled_regex)) {
    return false;
  }
  for (const auto& [key, want] : p.fields) {
    auto it = signal.structured_fields.find(key);
    if (it == signal.structured_fields.end() || it->second != want) return false;
  }
  if (p.origin && signal.origin != *p.origin) return false;

  if (evidence) {
    if (p.message_substring) evidence->push_back("substring:" + *p.message_substring);
    if (p.message_regex) evidence->push_back("regex:" + *p.message_regex);
    for (const auto& [key, want] : p.fields) {
      evidence->push_back("field:" + key + "=" + want);
    }
    if (p.origin) evidence->push_back("origin:" + to_string(*p.origin));
  }
  return true;
}

}  // namespace

std::string to_string(SignalOrigin origin) {
  return kOriginTokens[static_cast<std::size_t>(origin)];
}

SignalOrigin origin_from_string(std::string_view token) {
  for (std::size_t i = 0; i < kOriginTokens.size(); ++i) {
    if (token == kOriginTokens[i]) return static_cast<SignalOrigin>(i);
  }
  throw ParseError("unknown signal origin: " + std::string(token));
}

nlohmann::json serialize(const RawExceptionSignal& signal) {
  nlohmann::json doc{{"message", signal.message},
                     {"origin", to_string(signal.origin)},
                     {"fields", signal.structured_fields},
                     {"thread_id", signal.thread_id}};
  if (signal.source_phase_hint) doc["phase_hint"] = to_string(*signal.source_phase_hint);
  if (signal.step_ref) doc["step_ref"] = *signal.step_ref;
  return doc;
}

RawExceptionSignal signal_from_json(const nlohmann::json& doc) {
  RawExceptionSignal signal;
  try {
    signal.message = doc.at("message").get<std::string>();
    signal.origin = origin_from_string(doc.at("origin").get<std::string>());
    if (doc.contains("fields")) {
      signal.structured_fields =
          doc.at("fields").get<std::map<std::string, std::string>>();
    }
    signal.thread_id = doc.value("thread_id", "");
    if (doc.contains("phase_hint")) {
      signal.source_phase_hint = phase_from_string(doc.at("phase_hint").get<std::string>());
    }
    if (doc.contains("step_ref")) signal.step_ref = doc.at("step_ref").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("signal: bad document: ") + e.what());
  }
  return signal;
}

nlohmann::json serialize(const Classification& classification) {
  nlohmann::json doc{{"exception_id", classification.exception_id},
                     {"phase", to_string(classification.phase)},
                     {"evidence", classification.evidence}};
  if (classification.artifact) doc["artifact"] = to_string(*classification.artifact);
  if (classification.matched_rule) doc["matched_rule"] = *classification.matched_rule;
  return doc;
}

Classification classification_from_json(const nlohmann::json& doc) {
  Classification c;
  try {
    c.exception_id = doc.at("exception_id").get<std::string>();
    c.phase = phase_from_string(doc.at("phase").get<std::string>());
    if (doc.contains("artifact")) {
      c.artifact = artifact_from_string(doc.at("artifact").get<std::string>());
    }
    if (doc.contains("matched_rule")) c.matched_rule = doc.at("matched_rule").get<std::string>();
    if (doc.contains("evidence")) c.evidence = doc.at("evidence").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("classification: bad document: ") + e.what());
  }
  return c;
}

std::vector<std::string> RuleSet::covered_ids() const {
  std::vector<std::string> ids;
  for (const auto& rule : rules_) {
    if (std::find(ids.begin(), ids.end(), rule.target) == ids.end()) {
      ids.push_back(rule.target);
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

RuleSet load_rules(std::istream& in, const Taxonomy& taxonomy) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("rules: invalid JSON: ") + e.what());
  }

  const nlohmann::json* list = nullptr;
  if (doc.is_array()) {
    list = &doc;
  } else if (doc.is_object() && doc.contains("rules") && doc["rules"].is_array()) {
    list = &doc["rules"];
  } else {
    throw ParseError("rules: document must be a rule array or hold a rules array");
  }

  RuleSet set;
  std::size_t index = 0;
  for (const auto& item : *list) {
    ClassificationRule rule;
    try {
      rule.rule_id = item.at("rule_id").get<std::string>();
      rule.priority = item.at("priority").get<int>();
      rule.target = item.at("target").get<std::string>();
      rule.notes = item.value("notes", "");
      const auto& match = item.at("match");
      if (match.contains("message_substring")) {
        rule.predicate.message_substring = match["message_substring"].get<std::string>();
      }
      if (match.contains("message_regex")) {
        rule.predicate.message_regex = match["message_regex"].get<std::string>();
      }
      if (match.contains("fields")) {
        rule.predicate.fields = match["fields"].get<std::map<std::string, std::string>>();
      }
      if (match.contains("origin")) {
        rule.predicate.origin = origin_from_string(match["origin"].get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("rules: bad rule: ") + e.what());
    }

    if (rule.predicate.message_regex) {
      try {
        rule.compiled_regex = std::make_shared<const std::regex>(
            *rule.predicate.message_regex,
            std::regex::ECMAScript | std::regex::icase);
      } catch (const std::regex_error& e) {
        throw ParseError("rules: bad regex in " + rule.rule_id + ": " + e.what());
      }
    }

    const ExceptionTypeEntry* entry = taxonomy.lookup(rule.target);
    if (entry == nullptr) {
      throw UnknownTargetError("rules: rule " + rule.rule_id +
                               " targets unknown exception id " + rule.target);
    }
    rule.target_phase = entry->phase;
    rule.target_artifact = entry->artifact;
    rule.file_index = index++;
    set.rules_.push_back(std::move(rule));
  }

  std::stable_sort(set.rules_.begin(), set.rules_.end(),
                   [](const ClassificationRule& a, const ClassificationRule& b) {
                     if (a.priority != b.priority) return a.priority > b.priority;
                     return a.file_index < b.file_index;
                   });
  return set;
}

RuleSet load_rules_file(const std::string& path, const Taxonomy& taxonomy) {
  std::ifstream in(path);
  if (!in) throw IoError("rules: cannot open " + path);
  return load_rules(in, taxonomy);
}

Classification classify_restricted_to_phase(const RuleSet& rules,
                                            const RawExceptionSignal& signal,
                                            std::optional<Phase> required_phase) {
  for (const auto& rule : rules.rules()) {
    if (required_phase && rule.target_phase != *required_phase &&
        rule.target_phase != Phase::Both) {
      continue;
    }
    std::vector<std::string> evidence;
    if (!rule_matches(rule, signal, &evidence)) continue;

    Classification result;
    result.exception_id = rule.target;
    result.phase = resolve_phase(rule.target_phase, signal.source_phase_hint);
    result.artifact = rule.target_artifact;
    result.matched_rule = rule.rule_id;
    result.evidence = std::move(evidence);
    return result;
  }

  Classification unmatched;
  unmatched.exception_id = kUnclassifiedId;
  unmatched.phase = signal.source_phase_hint.value_or(Phase::Execution);
  if (unmatched.phase == Phase::Both) unmatched.phase = Phase::Execution;
  return unmatched;
}

Classification classify(const RuleSet& rules, const RawExceptionSignal& signal) {
  return classify_restricted_to_phase(rules, signal, std::nullopt);
}

}  // namespace shielda
