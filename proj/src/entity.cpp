#include "shielda/entity.hpp"

#include <array>
#include <regex>
#include <vector>

#include "shielda/errors.hpp"

namespace shielda {
namespace {

constexpr std::array<const char*, 5> kEntityKindTokens = {
    "FilePath", "ToolName", "AgentId", "Url", "Identifier"};

const std::regex& url_pattern() {
  static const std::regex re(R"(https?://[^\s`"'\)\]]+)");
  return re;
}

// Multi-segment paths (".github/workflows/autopr.yml", "/etc/passwd") or
// bare filenames with a recognizable extension ("README.md").
const std::regex& path_pattern() {
  static const std::regex re(
      R"([A-Za-z0-9_.~-]*(?:/[A-Za-z0-9_.~-]+)+|[A-Za-z0-9_-]+\.(?:ya?ml|md|json|jsonl|txt|py|cpp|hpp|cc|h|sh|cfg|ini|toml|csv|xml|html|lock))",
      std::regex::ECMAScript);
  return re;
}

const std::regex& tool_pattern() {
  static const std::regex re(R"(\btool\b[:\s]+[`'"]?([A-Za-z_][A-Za-z0-9_./-]*))",
                             std::regex::ECMAScript | std::regex::icase);
  return re;
}

const std::regex& agent_pattern() {
  static const std::regex re(R"(@([A-Za-z0-9][A-Za-z0-9_-]*))");
  return re;
}

bool span_free(const std::vector<bool>& claimed, std::size_t begin, std::size_t len) {
  for (std::size_t i = begin; i < begin + len && i < claimed.size(); ++i) {
    if (claimed[i]) return false;
  }
  return true;
}

void claim_span(std::vector<bool>& claimed, std::size_t begin, std::size_t len) {
  for (std::size_t i = begin; i < begin + len && i < claimed.size(); ++i) {
    claimed[i] = true;
  }
}

}  // namespace

std::string to_string(EntityKind kind) {
  return kEntityKindTokens[static_cast<std::size_t>(kind)];
}

EntityKind entity_kind_from_string(std::string_view token) {
  for (std::size_t i = 0; i < kEntityKindTokens.size(); ++i) {
    if (token == kEntityKindTokens[i]) return static_cast<EntityKind>(i);
  }
  throw ParseError("unknown entity kind: " + std::string(token));
}

EntitySet extract_entities(std::string_view text) {
  EntitySet out;
  if (text.empty()) return out;

  const std::string subject(text);
  std::vector<bool> claimed(subject.size(), false);

  auto scan = [&](const std::regex& re, EntityKind kind, int capture_group) {
    auto begin = std::sregex_iterator(subject.begin(), subject.end(), re);
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
      const auto& match = *it;
      const auto pos = static_cast<std::size_t>(match.position(0));
      const auto len = static_cast<std::size_t>(match.length(0));
      if (!span_free(claimed, pos, len)) continue;
      claim_span(claimed, pos, len);
      out.insert(EntityRef{kind, match.str(capture_group)});
    }
  };

  scan(url_pattern(), EntityKind::Url, 0);
  scan(tool_pattern(), EntityKind::ToolName, 1);
  scan(path_pattern(), EntityKind::FilePath, 0);
  scan(agent_pattern(), EntityKind::AgentId, 1);
  return out;
}

}  // namespace shielda
