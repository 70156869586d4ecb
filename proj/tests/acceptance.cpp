// Acceptance gate: eight end-to-end criteria, one verdict line each.
// Exits 0 only when every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "shielda/escalation.hpp"
#include "shielda/simharness.hpp"

using namespace shielda;

namespace {

// ---------------------------------------------------------------------------
// Harness

struct Criterion {
  int number;
  std::string label;
  std::vector<std::string> failures;

  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  bool passed() const { return failures.empty(); }
};

struct Stack {
  Taxonomy taxonomy;
  RuleSet rules;
  PatternRegistry registry;

  Stack()
      : taxonomy(load_taxonomy_file(std::string(SHIELDA_SOURCE_DATA_DIR) +
                                    "/taxonomy.json")),
        rules(load_rules_file(std::string(SHIELDA_SOURCE_DATA_DIR) + "/rules.json",
                              taxonomy)),
        registry(load_registry_file(
            std::string(SHIELDA_SOURCE_DATA_DIR) + "/registry.json", taxonomy)) {}
};

// Event-count ceiling shared by every mission the gate runs.
std::uint64_t g_max_events_seen = 0;

RunReport run_tracked(const Stack& stack, const Scenario& scenario, EventLog* log) {
  RunReport report =
      run_scenario(scenario, stack.taxonomy, stack.rules, stack.registry, {}, log);
  if (report.event_count > g_max_events_seen) g_max_events_seen = report.event_count;
  return report;
}

// ---------------------------------------------------------------------------
// Expected data tables (independent of the shipped data files)

struct TaxonomyRow {
  const char* id;
  const char* artifact;
  const char* phase;
};

const TaxonomyRow kExpectedTaxonomy[] = {
    {"goal.ambiguous", "Goal", "RP"},
    {"goal.conflicting", "Goal", "RP"},
    {"context.corruption", "Context", "RP"},
    {"context.ambiguity", "Context", "RP"},
    {"reasoning.contradictory", "Reasoning", "RP"},
    {"reasoning.circular_or_invalid", "Reasoning", "RP"},
    {"planning.faulty_task_structuring", "Planning", "RP"},
    {"planning.overextended", "Planning", "RP"},
    {"memory.poisoning", "Memory", "RP/E"},
    {"memory.outdated", "Memory", "RP/E"},
    {"memory.misaligned_recall", "Memory", "RP/E"},
    {"knowledge_base.hallucinated_facts", "KnowledgeBase", "RP/E"},
    {"knowledge_base.poisoning", "KnowledgeBase", "RP/E"},
    {"knowledge_base.conflict", "KnowledgeBase", "RP/E"},
    {"model.token_limit_exceeded", "Model", "RP/E"},
    {"model.output_validation_failure", "Model", "E"},
    {"model.output_handling", "Model", "E"},
    {"tool.invocation", "Tool", "E"},
    {"tool.output", "Tool", "E"},
    {"tool.unavailable", "Tool", "E"},
    {"interface.api_invocation", "Interface", "RP/E"},
    {"interface.api_response_malformation", "Interface", "RP/E"},
    {"interface.api_semantic_mismatch", "Interface", "E"},
    {"interface.ui_element_misclick", "Interface", "E"},
    {"interface.text_recognition_error", "Interface", "E"},
    {"interface.ui_not_ready", "Interface", "E"},
    {"interface.environmental_noise", "Interface", "E"},
    {"task_flow.dependency", "TaskFlow", "E"},
    {"task_flow.error_propagation", "TaskFlow", "E"},
    {"task_flow.stopping_too_early", "TaskFlow", "RP/E"},
    {"other_agent.missing_information", "OtherAgent", "E"},
    {"other_agent.communication", "OtherAgent", "E"},
    {"other_agent.conflict", "OtherAgent", "E"},
    {"other_agent.role_violation", "OtherAgent", "E"},
    {"external.protocol_mismatch", "ExternalSystem", "E"},
    {"external.attack", "ExternalSystem", "E"},
};

struct TriadRow {
  const char* id;
  const char* local;
  const char* flow;
  const char* recovery;
};

const TriadRow kExpectedPatterns[] = {
    {"P001", "Clarify Prompt", "Abort", "No-op"},
    {"P002", "Clarify Prompt", "Continue", "No-op"},
    {"P003", "Echo Validation", "Continue", "No-op"},
    {"P004", "Prompt Rewriting", "Abort", "No-op"},
    {"P005", "Prompt Sanitization", "Continue", "No-op"},
    {"P006", "Context Tagging", "Continue", "No-op"},
    {"P007", "Default Interpretation", "Continue", "No-op"},
    {"P008", "Graph Validation", "Abort", "No-op"},
    {"P009", "Recursive Checkpointing", "Abort", "No-op"},
    {"P010", "Logic Re-ranking", "Continue", "No-op"},
    {"P011", "KB Trust Scoring", "Continue", "No-op"},
    {"P012", "Plan Repair", "Abort", "No-op"},
    {"P013", "Plan Shortening", "Abort", "No-op"},
    {"P014", "Forward Checking", "Abort", "No-op"},
    {"P015", "Constraint Pruning", "Abort", "No-op"},
    {"P016", "Subgoal Reordering", "Abort", "No-op"},
    {"P017", "Abort Task Chain", "Abort", "Rollback"},
    {"P018", "Retry with Backoff", "Continue", "No-op"},
    {"P019", "Switch Tool", "Abort", "No-op"},
    {"P020", "Fallback to Alternate API", "Abort", "No-op"},
    {"P021", "Schema Validation", "Abort", "No-op"},
    {"P022", "Schema Validation", "Continue", "No-op"},
    {"P023", "Semantic Constraint Checking", "Continue", "No-op"},
    {"P024", "Oracle Verification", "Continue", "Rollback"},
    {"P025", "Output Sanitization", "Continue", "No-op"},
    {"P026", "Fallback Template", "Continue", "No-op"},
    {"P027", "Reset Memory", "Abort", "Rollback"},
    {"P028", "Memory Slot Isolation", "Continue", "No-op"},
    {"P029", "Attribute Filtering", "Continue", "Rollback"},
    {"P030", "Disentangled Prompting", "Abort", "No-op"},
    {"P031", "Response Normalization", "Continue", "No-op"},
    {"P032", "Timeout Escalation", "Skip", "Compensate"},
    {"P033", "Timeout Escalation", "Abort", "Compensate"},
    {"P034", "Low-confidence Filter", "Continue", "No-op"},
    {"P035", "Output Truncation", "Continue", "No-op"},
    {"P036", "Sampling Adjustment", "Continue", "No-op"},
    {"P037", "Escalate to Human", "Skip", "Compensate"},
    {"P038", "Escalate to Human", "Skip", "No-op"},
    {"P039", "Escalate to Human", "Abort", "Compensate"},
    {"P040", "Escalate to Human", "Abort", "No-op"},
    {"P041", "Protocol Downgrade", "Abort", "No-op"},
    {"P042", "External Call Timeout Fallback", "Skip", "Compensate"},
    {"P043", "External Call Timeout Fallback", "Skip", "No-op"},
    {"P044", "External Call Timeout Fallback", "Abort", "Compensate"},
    {"P045", "External Call Timeout Fallback", "Abort", "No-op"},
    {"P046", "Role-based Check", "Abort", "No-op"},
    {"P047", "Conflict Resolution Prompt", "Abort", "No-op"},
    {"P048", "Peer Confirmation", "Continue", "No-op"},
};

struct CaseRow {
  const char* exception_id;
  const char* pattern_id;
};

const CaseRow kExpectedCases[] = {
    {"goal.ambiguous", "P001"},
    {"reasoning.contradictory", "P008"},
    {"planning.faulty_task_structuring", "P012"},
    {"memory.poisoning", "P027"},
    {"knowledge_base.hallucinated_facts", "P011"},
    {"tool.invocation", "P018"},
    {"tool.output", "P021"},
    {"interface.api_invocation", "P018"},
    {"interface.ui_element_misclick", "P037"},
    {"task_flow.error_propagation", "P017"},
    {"other_agent.conflict", "P047"},
    {"external.protocol_mismatch", "P041"},
};

// ---------------------------------------------------------------------------
// Criterion 1: the reference mission reproduces the golden trace, fast.

void criterion_golden_trace(const Stack& stack, Criterion& c) {
  Scenario scenario = autopr_scenario();

  auto start = std::chrono::steady_clock::now();
  EventLog log;
  RunReport report = run_tracked(stack, scenario, &log);
  auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - start)
                     .count();
  c.require(elapsed < 1000,
            "run took " + std::to_string(elapsed) + "ms (budget 1000ms)");

  std::ifstream golden_in(std::string(SHIELDA_GOLDEN_DIR) + "/autopr_kinds.json");
  c.require(golden_in.good(), "golden kinds file missing");
  if (!golden_in.good()) return;
  std::vector<std::string> golden =
      nlohmann::json::parse(golden_in).get<std::vector<std::string>>();

  c.require(report.event_kinds == golden, "event kind sequence diverges from golden");
  c.require(report.event_kinds == scenario.expected_trace,
            "event kind sequence diverges from the scenario's embedded trace");
  c.require(report.final_status == RunStatus::MissionCompleted,
            "final status is not MissionCompleted");

  const auto& events = log.events();
  if (events.size() != 27) {
    c.require(false, "expected 27 events, saw " + std::to_string(events.size()));
    return;
  }

  auto field = [&](std::size_t index, const char* key) -> std::string {
    const nlohmann::json& payload = events[index].payload;
    auto it = payload.find(key);
    if (it == payload.end()) return "<missing>";
    return it->is_string() ? it->get<std::string>() : it->dump();
  };

  c.require(field(0, "goal") == scenario.goal_prompt, "goal not recorded verbatim");
  c.require(events[1].entities.count(EntityRef{EntityKind::FilePath,
                                               ".github/workflows/autopr.yml"}) == 1,
            "plan event does not carry the workflow file entity");
  c.require(field(6, "message").find("refusing to allow a GitHub App") !=
                std::string::npos,
            "rejection message not recorded verbatim");
  c.require(events[7].payload["classification"]["exception_id"] ==
                "external.protocol_mismatch",
            "initial classification wrong");
  c.require(field(8, "pattern_id") == "P018" && field(8, "source") == "override",
            "first pattern selection is not the P018 override");
  c.require(field(9, "delay_ms") == "100" && field(10, "delay_ms") == "200" &&
                field(11, "delay_ms") == "400",
            "retry delays are not 100/200/400");
  c.require(field(13, "prior_exception_id") == "external.protocol_mismatch" &&
                field(13, "new_exception_id") == "planning.faulty_task_structuring",
            "reclassification ids wrong");
  c.require(field(13, "root_seq") == "2" && field(13, "root_kind") == "PlanGenerated",
            "root attribution wrong");
  c.require(field(14, "pattern_id") == "P012" && field(14, "source") == "mapping",
            "second pattern selection is not the mapped P012");
  c.require(field(15, "directive")
                    .find("You are explicitly forbidden from modifying workflow "
                          "files.") != std::string::npos,
            "directive does not quote the violated constraint");
  c.require(field(17, "decision") == "Abort", "flow decision is not Abort");
  c.require(events[20].thread_id == "t2", "repaired plan does not run on thread t2");
  c.require(events[26].kind == EventKind::MissionCompleted,
            "log does not end in MissionCompleted");

  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].seq != i + 1) {
      c.require(false, "seq gap at index " + std::to_string(i));
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 2: shipped data matches the embedded reference tables row-for-row.

void criterion_data_fidelity(const Stack& stack, Criterion& c) {
  c.require(stack.taxonomy.canonical(), "taxonomy not marked canonical");
  c.require(stack.taxonomy.size() == 36,
            "taxonomy has " + std::to_string(stack.taxonomy.size()) + " types");
  c.require(stack.taxonomy.artifact_count() == 12,
            "taxonomy covers " + std::to_string(stack.taxonomy.artifact_count()) +
                " artifacts");

  const auto& entries = stack.taxonomy.entries();
  for (std::size_t i = 0; i < 36 && i < entries.size(); ++i) {
    const TaxonomyRow& expected = kExpectedTaxonomy[i];
    if (entries[i].id != expected.id ||
        to_string(entries[i].artifact) != expected.artifact ||
        to_string(entries[i].phase) != expected.phase) {
      c.require(false, std::string("taxonomy row ") + std::to_string(i + 1) +
                           " mismatch: " + entries[i].id);
    }
  }

  const auto& patterns = stack.registry.patterns();
  c.require(patterns.size() == 48,
            "catalogue has " + std::to_string(patterns.size()) + " patterns");
  for (std::size_t i = 0; i < 48 && i < patterns.size(); ++i) {
    const TriadRow& expected = kExpectedPatterns[i];
    // Mechanism names compare by enum: several reference rows use accepted
    // aliases the loader normalizes.
    if (patterns[i].pattern_id != expected.id ||
        patterns[i].local != mechanism_from_name(expected.local) ||
        to_string(patterns[i].flow) != expected.flow ||
        to_string(patterns[i].recovery) != expected.recovery) {
      c.require(false, std::string("pattern row ") + expected.id + " mismatch");
    }
  }
  c.require(stack.registry.default_pattern_id() == "P040", "default is not P040");

  for (const CaseRow& row : kExpectedCases) {
    const HandlerPattern& resolved = resolve(stack.registry, row.exception_id);
    if (resolved.pattern_id != row.pattern_id) {
      c.require(false, std::string("case ") + row.exception_id + " resolves to " +
                           resolved.pattern_id + ", expected " + row.pattern_id);
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 3: triad validation accepts the whole space and nothing else.

void criterion_triad_validation(const Stack& stack, Criterion& c) {
  for (const HandlerPattern& pattern : stack.registry.patterns()) {
    try {
      HandlerPattern checked =
          validate_pattern(pattern.pattern_id, to_string(pattern.local),
                           to_string(pattern.flow), to_string(pattern.recovery));
      if (!(checked == pattern)) {
        c.require(false, "validated triad differs for " + pattern.pattern_id);
      }
    } catch (const InvalidTriadError& e) {
      c.require(false, "catalogue row " + pattern.pattern_id +
                           " failed validation: " + e.what());
    }
  }

  std::vector<std::string> mechanisms;
  for (std::size_t i = 1; i <= kMechanismCount; ++i) {
    mechanisms.push_back(to_string(static_cast<LocalHandlingMechanism>(i)));
  }
  const std::vector<std::string> flows = {"Continue", "Skip", "Abort"};
  const std::vector<std::string> recoveries = {"No-op", "Rollback", "Compensate"};
  std::size_t space = 0;
  for (const auto& local : mechanisms)
    for (const auto& flow : flows)
      for (const auto& recovery : recoveries) {
        ++space;
        try {
          validate_pattern(local, flow, recovery);
        } catch (const InvalidTriadError&) {
          c.require(false, "legal triple rejected: " + local + "/" + flow + "/" +
                               recovery);
        }
      }
  c.require(space == 360, "cross product is not 360 triples");

  const std::set<std::string> mechanism_set(mechanisms.begin(), mechanisms.end());
  const std::set<std::string> flow_set(flows.begin(), flows.end());
  const std::set<std::string> recovery_set(recoveries.begin(), recoveries.end());

  std::vector<std::string> mech_pool = mechanisms;
  for (const char* junk :
       {"", "retry", "escalate to human", "Plan  Repair", "P018", "No-op"}) {
    mech_pool.push_back(junk);
  }
  std::vector<std::string> flow_pool = flows;
  for (const char* junk : {"", "Halt", "SKIP ", "continue"}) flow_pool.push_back(junk);
  std::vector<std::string> recovery_pool = recoveries;
  for (const char* junk : {"", "noop", "Roll-back", "Abort"})
    recovery_pool.push_back(junk);

  std::mt19937_64 rng(202506);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string& local = mech_pool[rng() % mech_pool.size()];
    const std::string& flow = flow_pool[rng() % flow_pool.size()];
    const std::string& recovery = recovery_pool[rng() % recovery_pool.size()];
    bool expect_valid = mechanism_set.count(local) && flow_set.count(flow) &&
                        recovery_set.count(recovery);
    bool was_valid = true;
    try {
      validate_pattern(local, flow, recovery);
    } catch (const InvalidTriadError&) {
      was_valid = false;
    }
    if (was_valid != expect_valid) {
      c.require(false, "fuzz triple verdict mismatch: " + local + "/" + flow + "/" +
                           recovery);
    }
    ++checked;
  }
  c.require(checked == 1000, "fuzz loop ran short");
}

// ---------------------------------------------------------------------------
// Criterion 4: the causal tracer equals an independent oracle on planted logs.

std::vector<std::uint64_t> trace_oracle(const std::vector<WorkflowEvent>& events,
                                        std::uint64_t symptom_seq,
                                        const EntitySet& seeds) {
  auto flat = [](const EntitySet& entities) {
    std::set<std::string> out;
    for (const auto& entity : entities)
      out.insert(to_string(entity.kind) + "|" + entity.value);
    return out;
  };
  const WorkflowEvent* symptom = nullptr;
  for (const auto& event : events)
    if (event.seq == symptom_seq) symptom = &event;
  if (!symptom) return {};

  std::set<std::string> accumulated = flat(seeds);
  for (const auto& item : flat(symptom->entities)) accumulated.insert(item);
  std::vector<const WorkflowEvent*> links = {symptom};

  for (std::uint64_t seq = symptom_seq; seq-- > 1;) {
    const WorkflowEvent* candidate = nullptr;
    for (const auto& event : events)
      if (event.seq == seq) candidate = &event;
    if (!candidate) continue;
    bool overlaps = false;
    for (const auto& item : flat(candidate->entities))
      if (accumulated.count(item)) overlaps = true;
    if (!overlaps) continue;
    links.push_back(candidate);
    for (const auto& item : flat(candidate->entities)) accumulated.insert(item);
  }

  std::size_t cut = links.size();
  for (std::size_t i = 0; i < links.size(); ++i)
    if (links[i]->phase == Phase::ReasoningPlanning) cut = i;
  if (cut != links.size()) links.resize(cut + 1);

  std::vector<std::uint64_t> seqs;
  for (const WorkflowEvent* event : links) seqs.push_back(event->seq);
  return seqs;
}

void criterion_root_cause_oracle(const Stack&, Criterion& c) {
  std::mt19937_64 rng(77001);
  const std::vector<std::string> background_pool = {"bg1", "bg2", "bg3", "bg4",
                                                    "bg5"};
  int planted_checked = 0;

  for (int trial = 0; trial < 50; ++trial) {
    std::size_t total = 40 + rng() % 161;  // 40..200 events
    std::size_t chain_len = 1 + rng() % 5;
    bool rp_root = rng() % 2 == 0;

    // Choose strictly increasing positions for the planted chain.
    std::set<std::size_t> position_set;
    while (position_set.size() < chain_len) {
      position_set.insert(rng() % total);
    }
    std::vector<std::size_t> positions(position_set.begin(), position_set.end());

    std::vector<WorkflowEvent> events(total);
    std::size_t next_plant = 0;
    std::vector<std::uint64_t> planted_seqs;
    for (std::size_t i = 0; i < total; ++i) {
      WorkflowEvent& event = events[i];
      event.seq = i + 1;
      event.logical_time = static_cast<std::int64_t>(i + 1);
      event.thread_id = "t1";
      event.mission_id = "m";
      event.kind = EventKind::ToolInvoked;
      event.phase = Phase::Execution;

      if (next_plant < positions.size() && positions[next_plant] == i) {
        std::size_t k = next_plant;
        std::string prev = "c" + std::to_string(trial) + "_" + std::to_string(k);
        std::string next = "c" + std::to_string(trial) + "_" + std::to_string(k + 1);
        event.entities.insert(EntityRef{EntityKind::Identifier, prev});
        event.entities.insert(EntityRef{EntityKind::Identifier, next});
        if (k == 0 && rp_root) event.phase = Phase::ReasoningPlanning;
        planted_seqs.push_back(event.seq);
        ++next_plant;
      } else {
        // Background noise, occasionally reasoning-phase, never sharing the
        // planted connector entities.
        if (rng() % 6 == 0) event.phase = Phase::ReasoningPlanning;
        std::size_t n = rng() % 3;
        for (std::size_t e = 0; e < n; ++e) {
          event.entities.insert(EntityRef{
              EntityKind::Identifier, background_pool[rng() % background_pool.size()]});
        }
      }
    }

    std::uint64_t symptom_seq = planted_seqs.back();
    EntitySet seeds;  // the symptom's own entities drive the walk

    CausalChain chain = root_cause_trace(events, symptom_seq, seeds);
    std::vector<std::uint64_t> got;
    for (const auto& link : chain.links) got.push_back(link.event.seq);

    std::vector<std::uint64_t> oracle = trace_oracle(events, symptom_seq, seeds);
    if (got != oracle) {
      c.require(false, "trial " + std::to_string(trial) + ": tracer != oracle");
      continue;
    }

    // The planted chain must be recovered exactly (descending seq order).
    std::vector<std::uint64_t> expected(planted_seqs.rbegin(), planted_seqs.rend());
    if (got != expected) {
      c.require(false, "trial " + std::to_string(trial) +
                           ": planted chain not recovered exactly");
      continue;
    }
    if (rp_root) {
      if (!chain.root() || chain.root()->event.phase != Phase::ReasoningPlanning) {
        c.require(false, "trial " + std::to_string(trial) + ": planning root lost");
        continue;
      }
    }
    ++planted_checked;

    // Random extra probe: any symptom, oracle equality only.
    std::uint64_t probe = 1 + rng() % total;
    EntitySet probe_seeds = {
        EntityRef{EntityKind::Identifier, background_pool[rng() % 5]}};
    CausalChain probe_chain = root_cause_trace(events, probe, probe_seeds);
    std::vector<std::uint64_t> probe_got;
    for (const auto& link : probe_chain.links) probe_got.push_back(link.event.seq);
    if (probe_got != trace_oracle(events, probe, probe_seeds)) {
      c.require(false, "trial " + std::to_string(trial) + ": probe != oracle");
    }
  }
  c.require(planted_checked == 50 || !c.failures.empty(),
            "planted-chain trials ran short");
}

// ---------------------------------------------------------------------------
// Criterion 5: recovery actions uphold their state contracts under fuzzing.

void criterion_recovery_contracts(const Stack&, Criterion& c) {
  std::mt19937_64 rng(550055);

  for (int trial = 0; trial < 200; ++trial) {
    EnvironmentState env;
    CheckpointStore checkpoints;
    int action_pick = trial % 3;

    // Random initial state.
    for (int i = 0; i < static_cast<int>(rng() % 4); ++i) {
      env.workspace["f" + std::to_string(rng() % 6)] =
          "v" + std::to_string(rng() % 100);
    }
    for (int i = 0; i < static_cast<int>(rng() % 4); ++i) {
      env.memory["m" + std::to_string(rng() % 6)] = "v" + std::to_string(rng() % 100);
    }

    ArtifactKind scope = (rng() % 2 == 0) ? ArtifactKind::Memory
                                          : ArtifactKind::TaskFlow;
    std::string checkpoint_digest;

    HandlingContext ctx;
    ctx.thread_id = "t1";
    ctx.mission_id = "m";
    ctx.state = &env;
    ctx.ledger = &env;
    ctx.checkpoints = &checkpoints;
    ctx.classification.artifact =
        scope == ArtifactKind::Memory ? ArtifactKind::Memory : ArtifactKind::Tool;
    ctx.step_ref = "target_step";

    // Effects owned by other steps, recorded before the step under test.
    for (int i = 0; i < static_cast<int>(rng() % 3); ++i) {
      env.ledger.record("other_" + std::to_string(i), "t1", "push", "origin");
    }

    const Checkpoint& cp =
        checkpoints.take("t1", scope, env.snapshot_scope(scope));
    checkpoint_digest = cp.state_digest;
    std::string ledger_digest_pre_step = env.effective_digest();

    // Mutations after the checkpoint: state churn plus the step's own effects.
    std::size_t mutations = 1 + rng() % 8;
    for (std::size_t i = 0; i < mutations; ++i) {
      switch (rng() % 3) {
        case 0:
          env.workspace["f" + std::to_string(rng() % 6)] =
              "w" + std::to_string(rng() % 100);
          break;
        case 1:
          env.memory["m" + std::to_string(rng() % 6)] =
              "w" + std::to_string(rng() % 100);
          break;
        case 2:
          env.ledger.record("target_step", "t1", "comment",
                            "pr-" + std::to_string(rng() % 5));
          break;
      }
    }

    switch (action_pick) {
      case 0: {  // NoOp preserves the live digest
        std::string before = content_digest(env.snapshot_scope(scope));
        apply_recovery(ctx, StateRecoveryAction::NoOp);
        std::string after = content_digest(env.snapshot_scope(scope));
        if (before != after) {
          c.require(false, "trial " + std::to_string(trial) + ": NoOp mutated state");
        }
        break;
      }
      case 1: {  // Rollback restores the checkpointed digest
        apply_recovery(ctx, StateRecoveryAction::Rollback);
        std::string after = content_digest(env.snapshot_scope(scope));
        if (after != checkpoint_digest) {
          c.require(false,
                    "trial " + std::to_string(trial) + ": rollback digest mismatch");
        }
        break;
      }
      case 2: {  // Compensate returns the ledger to its pre-step digest
        bool step_has_effects = !env.effects_for_step("target_step").empty();
        if (!step_has_effects) {
          env.ledger.record("target_step", "t1", "comment", "pr-x");
        }
        apply_recovery(ctx, StateRecoveryAction::Compensate);
        if (env.effective_digest() != ledger_digest_pre_step) {
          c.require(false, "trial " + std::to_string(trial) +
                               ": compensation digest mismatch");
        }
        if (!env.effects_for_step("target_step").empty()) {
          c.require(false, "trial " + std::to_string(trial) +
                               ": step effects survive compensation");
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 6: equal seeds reproduce byte-identical logs that replay cleanly.

void criterion_determinism_and_replay(const Stack& stack, Criterion& c) {
  {
    EventLog log_a, log_b;
    run_tracked(stack, autopr_scenario(), &log_a);
    run_tracked(stack, autopr_scenario(), &log_b);
    if (render_log_lines(log_a.events()) != render_log_lines(log_b.events())) {
      c.require(false, "reference mission is not byte-deterministic");
    }
    DecisionTrace trace = replay(log_a.events(), stack.registry, stack.rules);
    if (!trace.clean()) {
      c.require(false, "reference mission replay found " +
                           std::to_string(trace.divergences.size()) + " divergences");
    }
  }

  int replayed = 0;
  std::size_t decisions = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Scenario scenario = random_scenario(seed);
    EventLog log_a, log_b;
    run_tracked(stack, scenario, &log_a);
    run_tracked(stack, scenario, &log_b);
    if (render_log_lines(log_a.events()) != render_log_lines(log_b.events())) {
      c.require(false, "seed " + std::to_string(seed) + " is not byte-deterministic");
      continue;
    }
    DecisionTrace trace = replay(log_a.events(), stack.registry, stack.rules);
    if (!trace.clean()) {
      c.require(false, "seed " + std::to_string(seed) + " replay diverged");
      continue;
    }
    decisions += trace.decisions_checked;
    ++replayed;
  }
  c.require(replayed == 100 || !c.failures.empty(), "random sweep ran short");
  c.require(decisions > 0, "random sweep exercised no recorded decisions");
}

// ---------------------------------------------------------------------------
// Criterion 7: the retry schedule obeys the backoff law exactly.

void criterion_backoff_law(const Stack& stack, Criterion& c) {
  for (std::int64_t base : {1, 50, 100, 250}) {
    for (double mult : {1.0, 1.5, 2.0, 3.0}) {
      for (int max_attempts = 1; max_attempts <= 6; ++max_attempts) {
        RetryPolicy policy{base, mult, max_attempts, 0.0};
        RetryOutcome outcome = retry_with_backoff(
            policy, [](int) { return LocalResult::failure("down"); });
        if (outcome.attempts_used != max_attempts) {
          c.require(false, "attempts_used != max_attempts under exhaustion");
          continue;
        }
        if (outcome.delays_ms.size() != static_cast<std::size_t>(max_attempts)) {
          c.require(false, "one delay per failed attempt violated");
          continue;
        }
        for (int k = 1; k <= max_attempts; ++k) {
          auto expected = static_cast<std::int64_t>(
              std::llround(static_cast<double>(base) * std::pow(mult, k - 1)));
          if (outcome.delays_ms[k - 1] != expected) {
            c.require(false, "delay after attempt " + std::to_string(k) +
                                 " deviates from base*multiplier^(k-1)");
          }
        }

        // Success inside the budget stops the schedule without a final delay.
        int succeed_at = 1 + static_cast<int>(max_attempts / 2);
        RetryOutcome partial = retry_with_backoff(policy, [&](int attempt) {
          return attempt >= succeed_at ? LocalResult::success("")
                                       : LocalResult::failure("x");
        });
        if (partial.attempts_used > max_attempts ||
            partial.attempts_used != succeed_at ||
            partial.delays_ms.size() !=
                static_cast<std::size_t>(succeed_at - 1)) {
          c.require(false, "early-success schedule shape violated");
        }
      }
    }
  }

  // The reference mission's recorded delays follow the same law.
  EventLog log;
  run_tracked(stack, autopr_scenario(), &log);
  std::vector<std::int64_t> recorded;
  for (const auto& event : log.events()) {
    if (event.kind != EventKind::LocalAttempt) continue;
    if (event.payload.value("mechanism", "") != "Retry with Backoff") continue;
    if (!event.payload.contains("delay_ms")) continue;
    recorded.push_back(event.payload["delay_ms"].get<std::int64_t>());
  }
  if (recorded != std::vector<std::int64_t>{100, 200, 400}) {
    c.require(false, "logged retry delays are not 100/200/400");
  }
}

// ---------------------------------------------------------------------------
// Criterion 8: hostile missions terminate inside the depth and event budgets.

void criterion_bounded_termination(const Stack& stack, Criterion& c) {
  EventLog log;
  RunReport report = run_tracked(stack, adversarial_scenario(), &log);
  c.require(report.final_status == RunStatus::MissionTerminated,
            "adversarial mission did not terminate");
  c.require(report.reason.find("escalation depth exhausted") != std::string::npos,
            "termination reason does not cite the depth budget");
  c.require(report.max_depth_used <= 3,
            "escalation depth " + std::to_string(report.max_depth_used) + " > 3");
  c.require(!log.events().empty() &&
                log.events().back().kind == EventKind::MissionTerminated,
            "log does not end in MissionTerminated");

  // A plan large enough to exhaust the event budget still terminates.
  Scenario runaway;
  runaway.name = "runaway";
  runaway.goal_prompt = "Flood the log.";
  runaway.initial_plan.plan_id = "plan-flood";
  for (int i = 0; i < 5500; ++i) {
    PlanStep step;
    step.step_id = "s" + std::to_string(i + 1);
    step.action = StepAction::WriteMemory;
    step.target = {EntityKind::Identifier, "note_" + std::to_string(i + 1)};
    step.params["content"] = "x";
    runaway.initial_plan.steps.push_back(std::move(step));
  }
  RunReport flood = run_tracked(stack, runaway, nullptr);
  c.require(flood.final_status == RunStatus::MissionTerminated,
            "runaway mission did not terminate");
  c.require(flood.reason == "event budget exhausted",
            "runaway termination reason wrong: " + flood.reason);

  c.require(g_max_events_seen <= 10000,
            "a mission produced " + std::to_string(g_max_events_seen) +
                " events (budget 10000)");
}

}  // namespace

int main() {
  Stack stack;

  std::vector<Criterion> criteria = {
      {1, "reference mission reproduces the golden trace in under a second", {}},
      {2, "shipped data matches the reference tables row for row", {}},
      {3, "triad validation accepts the 360-triple space and nothing else", {}},
      {4, "causal tracer equals the oracle on 50 planted logs", {}},
      {5, "recovery contracts hold over 200 randomized state sequences", {}},
      {6, "equal seeds give byte-identical logs and clean replays (autopr + 100)", {}},
      {7, "retry delays follow base*multiplier^(k-1) within attempt budgets", {}},
      {8, "hostile missions stay inside depth and event budgets", {}},
  };

  criterion_golden_trace(stack, criteria[0]);
  criterion_data_fidelity(stack, criteria[1]);
  criterion_triad_validation(stack, criteria[2]);
  criterion_root_cause_oracle(stack, criteria[3]);
  criterion_recovery_contracts(stack, criteria[4]);
  criterion_determinism_and_replay(stack, criteria[5]);
  criterion_backoff_law(stack, criteria[6]);
  criterion_bounded_termination(stack, criteria[7]);

  bool all_passed = true;
  for (const Criterion& criterion : criteria) {
    if (criterion.passed()) {
      std::printf("[PASS] criterion %d: %s\n", criterion.number,
                  criterion.label.c_str());
    } else {
      all_passed = false;
      std::printf("[FAIL] criterion %d: %s\n", criterion.number,
                  criterion.label.c_str());
      for (const std::string& failure : criterion.failures) {
        std::printf("       - %s\n", failure.c_str());
      }
    }
  }
  return all_passed ? 0 : 1;
}
