#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <tuple>

namespace shielda {

/// What kind of thing an extracted entity names.
enum class EntityKind : std::uint8_t {
  FilePath,
  ToolName,
  AgentId,
  Url,
  Identifier,
};

std::string to_string(EntityKind kind);
EntityKind entity_kind_from_string(std::string_view token);

/// A concrete resource mentioned by an event or signal. Entities are the
/// join keys of causal analysis, so equality is strict on kind and value.
struct EntityRef {
  EntityKind kind = EntityKind::Identifier;
  std::string value;

  friend bool operator==(const EntityRef& a, const EntityRef& b) {
    return a.kind == b.kind && a.value == b.value;
  }
  friend bool operator<(const EntityRef& a, const EntityRef& b) {
    return std::tie(a.kind, a.value) < std::tie(b.kind, b.value);
  }
};

using EntitySet = std::set<EntityRef>;

/// Runs the configured extractor battery over free text and returns the
/// union of matches with duplicates collapsed. Empty text yields the empty
/// set. Extractors: file paths, tool names, @-mentions, URLs. A span claimed
/// by an earlier extractor is not re-reported under a weaker kind.
EntitySet extract_entities(std::string_view text);

}  // namespace shielda
