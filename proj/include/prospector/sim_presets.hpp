#pragma once

// Ready-made simulated configurations: a default PMU model with a handful of
// documented and hidden event families, a matching documented catalog, and a
// synthetic corpus covering every instruction class the models react to.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "prospector/counter_backend.hpp"
#include "prospector/event_space.hpp"
#include "prospector/instruction_corpus.hpp"

namespace prospector {

inline SimModel default_sim_model(std::uint64_t seed = 0) {
  SimModel m;
  m.seed = seed;
  auto fam = [&](std::uint8_t code, std::uint8_t mask, std::set<std::string> classes, std::uint64_t inc,
                 double noise) {
    m.families.push_back({code, mask, std::move(classes), inc, noise, static_cast<std::uint64_t>(code) << 8 | mask});
  };
  // Documented-style events.
  fam(0x3C, 0x00, {"alu", "branch", "memory-load", "memory-store"}, 1, 0.0);
  fam(0xC4, 0x00, {"branch", "indirect-branch-mistrain", "branch-mispredict"}, 1, 0.0);
  fam(0xD1, 0x0F, {"memory-load"}, 1, 0.0);
  // Hidden families.
  fam(0x6C, 0x01, {"memory-load"}, 1, 0.0);
  fam(0x8A, 0xA0, {"transient-load"}, 4, 0.2);
  fam(0x5E, 0x06, {"indirect-branch-mistrain", "branch-mispredict"}, 3, 0.2);
  fam(0x9B, 0x10, {"store-bypass"}, 2, 0.2);
  fam(0xB7, 0x41, {"fill-buffer-sample", "tsx-async-abort"}, 3, 0.2);
  fam(0x21, 0x80, {"cache-flush"}, 1, 0.0);
  return m;
}

/// Documented catalog for the default model: every active selector of the
/// 0x3C, 0xC4 and 0xD1 families.
inline EventCatalog default_catalog() {
  EventCatalog c("simulated-documented-v1");
  c.insert({0x3C, 0x00}, "CPU_CLK_UNHALTED.THREAD_P");
  c.insert({0xC4, 0x00}, "BR_INST_RETIRED.ALL_BRANCHES");
  for (unsigned u = 0; u < 256; ++u) {
    if ((u & 0x0F) != 0) c.insert({0xD1, static_cast<std::uint8_t>(u)}, "MEM_LOAD_RETIRED.VARIANT_" + std::to_string(u));
  }
  return c;
}

struct SyntheticCorpus {
  std::vector<InstructionEntry> entries;
  std::map<std::int64_t, SignalKind> faults;
};

namespace detail {

struct CorpusTemplate {
  const char* mnemonic;
  std::vector<std::string> operands;
  const char* extension;
  const char* class_tag;
  std::optional<SignalKind> fault;
};

inline const std::vector<CorpusTemplate>& corpus_templates() {
  static const std::vector<CorpusTemplate> t = {
      {"ADD", {"r64", "r64"}, "BASE", "alu", std::nullopt},
      {"MOV", {"r64", "m64"}, "BASE", "memory-load", std::nullopt},
      {"MOV", {"m64", "r64"}, "BASE", "memory-store", std::nullopt},
      {"JZ", {"rel8"}, "BASE", "branch", std::nullopt},
      {"CLFLUSH", {"m8"}, "SSE2", "cache-flush", std::nullopt},
      {"VADDPS", {"ymm", "ymm", "ymm"}, "AVX", "vector", std::nullopt},
      {"VADDPS", {"zmm", "zmm", "zmm"}, "AVX512F", "vector", std::nullopt},
      {"SUB", {"r32", "imm8"}, "BASE", "alu", std::nullopt},
      {"UD2", {}, "BASE", "alu", SignalKind::kIllegalInstruction},
      {"NOP", {}, "BASE", "nop", std::nullopt},
      {"MOVDQA", {"xmm", "m128"}, "SSE2", "memory-load", std::nullopt},
      {"HLT", {}, "BASE", "privileged", SignalKind::kSegmentationFault},
      {"JNZ", {"rel8"}, "BASE", "branch-mispredict", std::nullopt},
      {"JMP", {"r64"}, "BASE", "indirect-branch-mistrain", std::nullopt},
      {"PREFETCHT0", {"m8"}, "SSE", "transient-load", std::nullopt},
  };
  return t;
}

}  // namespace detail

/// Deterministic corpus of `size` entries cycling through representative
/// templates, with a fault table for the entries that trap.
inline SyntheticCorpus synthetic_corpus(std::size_t size) {
  SyntheticCorpus c;
  const auto& templates = detail::corpus_templates();
  for (std::size_t i = 0; i < size; ++i) {
    const auto& t = templates[i % templates.size()];
    InstructionEntry e;
    e.id = static_cast<std::int64_t>(i);
    e.mnemonic = t.mnemonic;
    e.operand_templates = t.operands;
    e.extension = t.extension;
    e.class_tag = t.class_tag;
    e.is_control_flow = e.class_tag == "branch" || e.class_tag == "branch-mispredict";
    if (t.fault) c.faults[e.id] = *t.fault;
    c.entries.push_back(std::move(e));
  }
  return c;
}

}  // namespace prospector
