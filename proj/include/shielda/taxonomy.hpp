#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shielda/errors.hpp"

namespace shielda {

/// Lifecycle phase an exception type belongs to. Both covers types that can
/// surface while the agent is still reasoning as well as while it acts.
enum class Phase : std::uint8_t {
  ReasoningPlanning,
  Execution,
  Both,
};

std::string to_string(Phase phase);
Phase phase_from_string(std::string_view token);

/// Agentic artifact an exception type is attributed to.
enum class ArtifactKind : std::uint8_t {
  Goal,
  Context,
  Reasoning,
  Planning,
  Memory,
  KnowledgeBase,
  Model,
  Tool,
  Interface,
  TaskFlow,
  OtherAgent,
  ExternalSystem,
};

inline constexpr std::size_t kArtifactKindCount = 12;

std::string to_string(ArtifactKind kind);
ArtifactKind artifact_from_string(std::string_view token);

/// One exception type.
struct ExceptionTypeEntry {
  std::string id;  ///< dotted lowercase, e.g. "tool.invocation"
  std::string display_name;
  ArtifactKind artifact = ArtifactKind::Goal;
  Phase phase = Phase::Execution;
  std::string description;
  std::vector<std::string> match_hints;
};

/// Immutable catalogue of exception types, preserving data-file order.
class Taxonomy {
 public:
  Taxonomy() = default;

  static constexpr std::size_t kCanonicalEntryCount = 36;

  bool canonical() const { return canonical_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<ExceptionTypeEntry>& entries() const { return entries_; }

  /// nullptr when the id is unknown.
  const ExceptionTypeEntry* lookup(std::string_view id) const;

  /// Entries matching the given filters, in data-file order. An entry with
  /// phase Both matches either phase filter.
  std::vector<const ExceptionTypeEntry*> query(
      std::optional<Phase> phase = std::nullopt,
      std::optional<ArtifactKind> artifact = std::nullopt) const;

  std::size_t artifact_count() const;

  friend Taxonomy load_taxonomy(std::istream& in);

 private:
  bool canonical_ = false;
  std::vector<ExceptionTypeEntry> entries_;
};

/// Parses and validates a taxonomy document.
///
/// Throws ParseError on malformed input and IntegrityError on duplicate ids
/// or, for canonical documents, on a catalogue that is not exactly the
/// 36-type / 12-artifact shape.
Taxonomy load_taxonomy(std::istream& in);
Taxonomy load_taxonomy_file(const std::string& path);

/// Inverse of load_taxonomy: load_taxonomy(serialize(t)) reproduces t.
nlohmann::json serialize(const Taxonomy& taxonomy);

}  // namespace shielda
