#include "shielda/taxonomy.hpp"

#include <array>
#include <fstream>
#include <istream>
#include <set>
#include <unordered_map>

namespace shielda {
namespace {

constexpr std::array<const char*, 3> kPhaseTokens = {"RP", "E", "RP/E"};

constexpr std::array<const char*, kArtifactKindCount> kArtifactTokens = {
    "Goal",      "Context",   "Reasoning", "Planning",
    "Memory",    "KnowledgeBase", "Model", "Tool",
    "Interface", "TaskFlow",  "OtherAgent", "ExternalSystem"};

}  // namespace

std::string to_string(Phase phase) {
  return kPhaseTokens[static_cast<std::size_t>(phase)];
}

Phase phase_from_string(std::string_view token) {
  for (std::size_t i = 0; i < kPhaseTokens.size(); ++i) {
    if (token == kPhaseTokens[i]) return static_cast<Phase>(i);
  }
  throw ParseError("unknown phase token: " + std::string(token));
}

std::string to_string(ArtifactKind kind) {
  return kArtifactTokens[static_cast<std::size_t>(kind)];
}

ArtifactKind artifact_from_string(std::string_view token) {
  for (std::size_t i = 0; i < kArtifactTokens.size(); ++i) {
    if (token == kArtifactTokens[i]) return static_cast<ArtifactKind>(i);
  }
  throw ParseError("unknown artifact token: " + std::string(token));
}

const ExceptionTypeEntry* Taxonomy::lookup(std::string_view id) const {
  for (const auto& entry : entries_) {
    if (entry.id == id) return &entry;
  }
  return nullptr;
}

std::vector<const ExceptionTypeEntry*> Taxonomy::query(
    std::optional<Phase> phase, std::optional<ArtifactKind> artifact) const {
  std::vector<const ExceptionTypeEntry*> out;
  for (const auto& entry : entries_) {
    if (artifact && entry.artifact != *artifact) continue;
    if (phase && entry.phase != *phase && entry.phase != Phase::Both) {
      continue;
    }
    out.push_back(&entry);
  }
  return out;
}

std::size_t Taxonomy::artifact_count() const {
  std::set<ArtifactKind> kinds;
  for (const auto& entry : entries_) kinds.insert(entry.artifact);
  return kinds.size();
}

Taxonomy load_taxonomy(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("taxonomy: invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array()) {
    throw ParseError("taxonomy: document must be an object with an entries array");
  }

  Taxonomy taxonomy;
  taxonomy.canonical_ = doc.value("canonical", false);

  std::set<std::string> seen_ids;
  for (const auto& item : doc["entries"]) {
    if (!item.is_object()) throw ParseError("taxonomy: entry must be an object");
    ExceptionTypeEntry entry;
    try {
      entry.id = item.at("id").get<std::string>();
      entry.display_name = item.at("display_name").get<std::string>();
      entry.artifact = artifact_from_string(item.at("artifact").get<std::string>());
      entry.phase = phase_from_string(item.at("phase").get<std::string>());
      entry.description = item.at("description").get<std::string>();
      for (const auto& hint : item.value("match_hints", nlohmann::json::array())) {
        entry.match_hints.push_back(hint.get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("taxonomy: bad entry: ") + e.what());
    }
    if (entry.id.empty()) throw IntegrityError("taxonomy: empty id");
    if (!seen_ids.insert(entry.id).second) {
      throw IntegrityError("taxonomy: duplicate id: " + entry.id);
    }
    taxonomy.entries_.push_back(std::move(entry));
  }

  if (taxonomy.canonical_) {
    if (taxonomy.entries_.size() != Taxonomy::kCanonicalEntryCount) {
      throw IntegrityError("taxonomy: canonical catalogue must hold 36 types, got " +
                           std::to_string(taxonomy.entries_.size()));
    }
    if (taxonomy.artifact_count() != kArtifactKindCount) {
      throw IntegrityError("taxonomy: canonical catalogue must span 12 artifacts, got " +
                           std::to_string(taxonomy.artifact_count()));
    }
  }
  return taxonomy;
}

Taxonomy load_taxonomy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("taxonomy: cannot open " + path);
  return load_taxonomy(in);
}

nlohmann::json serialize(const Taxonomy& taxonomy) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& entry : taxonomy.entries()) {
    entries.push_back({{"id", entry.id},
                       {"display_name", entry.display_name},
                       {"artifact", to_string(entry.artifact)},
                       {"phase", to_string(entry.phase)},
                       {"description", entry.description},
                       {"match_hints", entry.match_hints}});
  }
  return {{"canonical", taxonomy.canonical()}, {"entries", std::move(entries)}};
}

}  // namespace shielda
