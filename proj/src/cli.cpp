#include "shielda/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "shielda/agentops.hpp"
#include "shielda/classifier.hpp"
#include "shielda/errors.hpp"
#include "shielda/escalation.hpp"
#include "shielda/executor.hpp"
#include "shielda/registry.hpp"
#include "shielda/simharness.hpp"
#include "shielda/taxonomy.hpp"

#ifndef SHIELDA_DEFAULT_DATA_DIR
#define SHIELDA_DEFAULT_DATA_DIR "data"
#endif

namespace shielda {
namespace {

struct CliConfig {
  std::string data_dir;
  std::string format = "human";  ///< "human" | "json"
  bool json() const { return format == "json"; }
};

struct LoadedData {
  Taxonomy taxonomy;
  RuleSet rules;
  PatternRegistry registry;
};

LoadedData load_data(const CliConfig& config) {
  namespace fs = std::filesystem;
  fs::path dir(config.data_dir);
  Taxonomy taxonomy = load_taxonomy_file((dir / "taxonomy.json").string());
  RuleSet rules = load_rules_file((dir / "rules.json").string(), taxonomy);
  PatternRegistry registry =
      load_registry_file((dir / "registry.json").string(), taxonomy);
  return LoadedData{std::move(taxonomy), std::move(rules), std::move(registry)};
}

/// Insertion-ordered object for outputs whose documented shape fixes key order.
using OrderedJson = nlohmann::ordered_json;

OrderedJson pattern_doc(const HandlerPattern& pattern) {
  return OrderedJson{{"id", pattern.pattern_id},
                     {"local", to_string(pattern.local)},
                     {"flow", to_string(pattern.flow)},
                     {"recovery", to_string(pattern.recovery)}};
}

int cmd_taxonomy_list(const CliConfig& config, const std::string& phase_filter,
                      const std::string& artifact_filter, std::ostream& out) {
  LoadedData data = load_data(config);
  std::optional<Phase> phase;
  if (!phase_filter.empty()) phase = phase_from_string(phase_filter);
  std::optional<ArtifactKind> artifact;
  if (!artifact_filter.empty()) artifact = artifact_from_string(artifact_filter);

  std::vector<const ExceptionTypeEntry*> selected = data.taxonomy.query(phase, artifact);

  if (config.json()) {
    nlohmann::json list = nlohmann::json::array();
    for (const ExceptionTypeEntry* entry : selected) {
      list.push_back({{"id", entry->id},
                      {"display_name", entry->display_name},
                      {"artifact", to_string(entry->artifact)},
                      {"phase", to_string(entry->phase)},
                      {"description", entry->description},
                      {"match_hints", entry->match_hints}});
    }
    out << list.dump(2) << "\n";
    return kExitOk;
  }
  std::size_t width = 0;
  for (const ExceptionTypeEntry* entry : selected) {
    width = std::max(width, entry->id.size());
  }
  for (const ExceptionTypeEntry* entry : selected) {
    out << std::left << std::setw(static_cast<int>(width) + 2) << entry->id
        << std::setw(6) << to_string(entry->phase)
        << std::setw(22) << to_string(entry->artifact) << entry->display_name << "\n";
  }
  out << selected.size() << " exception type(s)\n";
  return kExitOk;
}

int cmd_patterns_list(const CliConfig& config, std::ostream& out) {
  LoadedData data = load_data(config);
  if (config.json()) {
    OrderedJson list = OrderedJson::array();
    for (const auto& pattern : data.registry.patterns()) {
      list.push_back(pattern_doc(pattern));
    }
    out << list.dump(2) << "\n";
    return kExitOk;
  }
  for (const auto& pattern : data.registry.patterns()) {
    out << std::left << std::setw(6) << pattern.pattern_id
        << std::setw(28) << to_string(pattern.local)
        << std::setw(10) << to_string(pattern.flow)
        << to_string(pattern.recovery) << "\n";
  }
  out << data.registry.patterns().size() << " handler pattern(s), default "
      << data.registry.default_pattern_id() << "\n";
  return kExitOk;
}

int cmd_patterns_show(const CliConfig& config, const std::string& id,
                      std::ostream& out, std::ostream& err) {
  LoadedData data = load_data(config);
  const HandlerPattern* pattern = data.registry.pattern(id);
  if (!pattern) {
    err << "unknown pattern id: " << id << "\n";
    return kExitDataError;
  }
  if (config.json()) {
    out << pattern_doc(*pattern).dump() << "\n";
    return kExitOk;
  }
  out << pattern->pattern_id << ": " << to_string(pattern->local) << " / "
      << to_string(pattern->flow) << " / " << to_string(pattern->recovery) << "\n"
      << "  local handling : " << mechanism_description(pattern->local) << "\n"
      << "  flow control   : " << to_string(pattern->flow) << "\n"
      << "  state recovery : " << to_string(pattern->recovery) << "\n";
  return kExitOk;
}

int cmd_patterns_validate(const CliConfig& config, const std::string& file,
                          std::ostream& out, std::ostream& err) {
  LoadedData data = load_data(config);
  try {
    PatternRegistry registry = load_registry_file(file, data.taxonomy);
    if (config.json()) {
      out << nlohmann::json{{"valid", true},
                            {"patterns", registry.patterns().size()},
                            {"mappings", registry.mapping().size()},
                            {"default", registry.default_pattern_id()}}
                 .dump()
          << "\n";
    } else {
      out << "registry valid: " << registry.patterns().size() << " pattern(s), "
          << registry.mapping().size() << " mapping(s), default "
          << registry.default_pattern_id() << "\n";
    }
    return kExitOk;
  } catch (const EngineError& e) {
    if (config.json()) {
      out << nlohmann::json{{"valid", false}, {"error", e.what()}}.dump() << "\n";
    } else {
      err << "registry invalid: " << e.what() << "\n";
    }
    return kExitDataError;
  }
}

int cmd_classify(const CliConfig& config, const std::string& message,
                 const std::string& origin, const std::string& phase_hint,
                 const std::vector<std::string>& fields, std::ostream& out,
                 std::ostream& err) {
  LoadedData data = load_data(config);
  RawExceptionSignal signal;
  signal.message = message;
  try {
    if (!origin.empty()) signal.origin = origin_from_string(origin);
    if (!phase_hint.empty()) signal.source_phase_hint = phase_from_string(phase_hint);
  } catch (const ParseError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }
  for (const auto& field : fields) {
    auto eq = field.find('=');
    if (eq == std::string::npos) {
      err << "--field expects k=v, got: " << field << "\n";
      return kExitUsage;
    }
    signal.structured_fields[field.substr(0, eq)] = field.substr(eq + 1);
  }
  Classification result = classify(data.rules, signal);
  out << serialize(result).dump(config.json() ? -1 : 2) << "\n";
  return result.classified() ? kExitOk : kExitPending;
}

int cmd_run(const CliConfig& config, const std::string& scenario_name,
            std::optional<std::uint64_t> seed, const std::string& log_path,
            const std::string& queue_path, std::ostream& out, std::ostream& err) {
  std::optional<Scenario> scenario = builtin_scenario(scenario_name);
  if (!scenario && scenario_name == "random") {
    scenario = random_scenario(seed.value_or(1));
  }
  if (!scenario && std::filesystem::exists(scenario_name)) {
    scenario = load_scenario_file(scenario_name);
  }
  if (!scenario) {
    err << "unknown scenario: " << scenario_name
        << " (built-ins: autopr, adversarial, random; or pass a scenario file)\n";
    return kExitDataError;
  }

  LoadedData data = load_data(config);
  RunOptions options;
  options.seed = seed;
  options.log_path = log_path;
  options.queue_path = queue_path;
  RunReport report = run_scenario(*scenario, data.taxonomy, data.rules,
                                  data.registry, options);

  if (config.json()) {
    out << serialize(report).dump() << "\n";
  } else {
    out << "scenario      : " << scenario->name << "\n"
        << "final status  : " << to_string(report.final_status) << "\n"
        << "reason        : " << report.reason << "\n"
        << "events        : " << report.event_count << "\n"
        << "threads       : " << report.threads << "\n"
        << "escalations   : " << report.escalations << " ("
        << report.reclassifications << " reclassified, max depth "
        << report.max_depth_used << ")\n"
        << "sink records  : " << report.sink_records << "\n";
    if (!log_path.empty()) out << "log           : " << log_path << "\n";
  }
  switch (report.final_status) {
    case RunStatus::MissionCompleted: return kExitOk;
    case RunStatus::MissionTerminated: return kExitMissionTerminated;
    case RunStatus::EscalatedToSink: return kExitPending;
  }
  return kExitMissionTerminated;
}

int cmd_trace(const CliConfig& config, const std::string& log_path,
              std::uint64_t event_seq, std::ostream& out, std::ostream& err) {
  LoadedData data = load_data(config);
  std::vector<WorkflowEvent> events = read_log_file(log_path);
  const WorkflowEvent* symptom = nullptr;
  for (const auto& event : events) {
    if (event.seq == event_seq) {
      symptom = &event;
      break;
    }
  }
  if (!symptom) {
    err << "no event with seq " << event_seq << " in " << log_path << "\n";
    return kExitDataError;
  }

  EntitySet seeds = symptom->entities;
  std::string message;
  if (symptom->payload.contains("signal") &&
      symptom->payload["signal"].contains("message")) {
    message = symptom->payload["signal"]["message"].get<std::string>();
  } else if (symptom->payload.contains("message")) {
    message = symptom->payload["message"].get<std::string>();
  }
  for (const auto& entity : extract_entities(message)) seeds.insert(entity);

  CausalChain chain = root_cause_trace(events, event_seq, seeds);

  Classification prior;
  for (const auto& event : events) {
    if (event.kind != EventKind::Classified) continue;
    if (event.payload.value("signal_seq", std::uint64_t{0}) != event_seq) continue;
    if (event.payload.contains("classification")) {
      prior = classification_from_json(event.payload["classification"]);
      break;
    }
  }
  Classification next = reclassify(data.rules, prior, chain);
  bool changed = next.exception_id != prior.exception_id;

  if (config.json()) {
    nlohmann::json doc{{"chain", serialize(chain)},
                       {"prior_exception_id", prior.exception_id},
                       {"new_exception_id", next.exception_id},
                       {"reclassified", changed}};
    if (const CausalLink* root = chain.root()) {
      doc["root_seq"] = root->event.seq;
      doc["root_kind"] = to_string(root->event.kind);
    }
    out << doc.dump(2) << "\n";
    return kExitOk;
  }

  out << "causal chain for event " << event_seq << " (" << chain.links.size()
      << " link(s), symptom first):\n";
  for (const auto& link : chain.links) {
    out << "  #" << link.event.seq << " " << to_string(link.event.kind) << " ["
        << to_string(link.event.phase) << "]";
    if (!link.shared_entities.empty()) {
      out << " via";
      for (const auto& entity : link.shared_entities) out << " " << entity.value;
    }
    out << "\n";
  }
  if (const CausalLink* root = chain.root()) {
    out << "root: #" << root->event.seq << " " << to_string(root->event.kind) << "\n";
  }
  if (changed) {
    out << "reclassification: " << prior.exception_id << " -> " << next.exception_id
        << "\n";
  } else {
    out << "reclassification: none (stays " << prior.exception_id << ")\n";
  }
  return kExitOk;
}

int cmd_replay(const CliConfig& config, const std::string& log_path,
               std::ostream& out) {
  LoadedData data = load_data(config);
  std::vector<WorkflowEvent> events = read_log_file(log_path);
  DecisionTrace trace = replay(events, data.registry, data.rules);

  if (config.json()) {
    nlohmann::json divergences = nlohmann::json::array();
    for (const auto& d : trace.divergences) {
      divergences.push_back({{"seq", d.seq},
                             {"kind", to_string(d.kind)},
                             {"field", d.field},
                             {"recorded", d.recorded},
                             {"derived", d.derived}});
    }
    out << nlohmann::json{{"decisions_checked", trace.decisions_checked},
                          {"divergences", std::move(divergences)},
                          {"clean", trace.clean()}}
               .dump(2)
        << "\n";
  } else {
    out << "checked " << trace.decisions_checked << " decision(s), "
        << trace.divergences.size() << " divergence(s)\n";
    for (const auto& d : trace.divergences) {
      out << "  #" << d.seq << " " << to_string(d.kind) << " " << d.field << ": recorded "
          << d.recorded << ", derived " << d.derived << "\n";
    }
  }
  return trace.clean() ? kExitOk : kExitReplayDivergence;
}

}  // namespace

std::string default_data_dir() {
  if (const char* env = std::getenv("SHIELDA_DATA_DIR"); env && *env) return env;
  return SHIELDA_DEFAULT_DATA_DIR;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CliConfig config;
  config.data_dir = default_data_dir();

  CLI::App app{"Runtime exception handling for agentic workflows"};
  app.name("shielda");
  app.require_subcommand(0, 1);
  app.fallthrough();
  app.add_option("--data-dir", config.data_dir,
                 "Directory with taxonomy.json, rules.json, registry.json");
  app.add_option("--format", config.format, "Output format")
      ->check(CLI::IsMember({"human", "json"}));

  // taxonomy
  CLI::App* taxonomy = app.add_subcommand("taxonomy", "Inspect the exception taxonomy");
  taxonomy->fallthrough();
  taxonomy->require_subcommand(1);
  std::string phase_filter, artifact_filter;
  CLI::App* taxonomy_list = taxonomy->add_subcommand("list", "List exception types");
  taxonomy_list->fallthrough();
  taxonomy_list->add_option("--phase", phase_filter, "Filter by phase (RP, E, RP/E)");
  taxonomy_list->add_option("--artifact", artifact_filter, "Filter by artifact");

  // patterns
  CLI::App* patterns = app.add_subcommand("patterns", "Inspect handler patterns");
  patterns->fallthrough();
  patterns->require_subcommand(1);
  CLI::App* patterns_list = patterns->add_subcommand("list", "List all patterns");
  patterns_list->fallthrough();
  std::string pattern_id;
  CLI::App* patterns_show = patterns->add_subcommand("show", "Show one pattern");
  patterns_show->fallthrough();
  patterns_show->add_option("id", pattern_id, "Pattern id (e.g. P012)")->required();
  std::string registry_file;
  CLI::App* patterns_validate =
      patterns->add_subcommand("validate", "Validate a registry file");
  patterns_validate->fallthrough();
  patterns_validate->add_option("file", registry_file, "Registry JSON file")
      ->required();

  // classify
  CLI::App* classify_cmd =
      app.add_subcommand("classify", "Classify an ad-hoc exception signal");
  classify_cmd->fallthrough();
  std::string message, origin, phase_hint;
  std::vector<std::string> signal_fields;
  classify_cmd->add_option("--message", message, "Raw signal text")->required();
  classify_cmd->add_option("--origin", origin,
                           "Signal origin (ToolCall, ModelOutput, AgentMessage, "
                           "ExternalSystem, Internal)");
  classify_cmd->add_option("--phase-hint", phase_hint, "Phase hint (RP or E)");
  classify_cmd->add_option("--field", signal_fields,
                           "Structured field k=v (repeatable)");

  // run
  CLI::App* run_cmd = app.add_subcommand("run", "Run a simulated scenario");
  run_cmd->fallthrough();
  std::string scenario_name, log_path, queue_path;
  std::optional<std::uint64_t> seed;
  run_cmd->add_option("--scenario", scenario_name,
                      "Built-in name (autopr, adversarial, random) or scenario file")
      ->required();
  run_cmd->add_option("--seed", seed, "Seed override");
  run_cmd->add_option("--log", log_path, "Write the event log to this JSONL file");
  run_cmd->add_option("--queue", queue_path, "Escalation queue JSONL file");

  // trace
  CLI::App* trace_cmd = app.add_subcommand("trace", "Trace an event's causal chain");
  trace_cmd->fallthrough();
  std::string trace_log;
  std::uint64_t trace_event = 0;
  trace_cmd->add_option("--log", trace_log, "Event log JSONL file")->required();
  trace_cmd->add_option("--event", trace_event, "Symptom event seq")->required();

  // replay
  CLI::App* replay_cmd =
      app.add_subcommand("replay", "Re-derive engine decisions from a log");
  replay_cmd->fallthrough();
  std::string replay_log;
  replay_cmd->add_option("--log", replay_log, "Event log JSONL file")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  if (app.get_subcommands().empty()) {
    out << app.help();
    return kExitUsage;
  }

  try {
    if (taxonomy_list->parsed()) {
      return cmd_taxonomy_list(config, phase_filter, artifact_filter, out);
    }
    if (patterns_list->parsed()) return cmd_patterns_list(config, out);
    if (patterns_show->parsed()) {
      return cmd_patterns_show(config, pattern_id, out, err);
    }
    if (patterns_validate->parsed()) {
      return cmd_patterns_validate(config, registry_file, out, err);
    }
    if (classify_cmd->parsed()) {
      return cmd_classify(config, message, origin, phase_hint, signal_fields, out,
                          err);
    }
    if (run_cmd->parsed()) {
      return cmd_run(config, scenario_name, seed, log_path, queue_path, out, err);
    }
    if (trace_cmd->parsed()) return cmd_trace(config, trace_log, trace_event, out, err);
    if (replay_cmd->parsed()) return cmd_replay(config, replay_log, out);
  } catch (const EngineError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDataError;
  }
  out << app.help();
  return kExitUsage;
}

}  // namespace shielda
