#pragma once

// Instruction corpus ingestion: parsing the tab-separated corpus, syntax
// normalization between Intel and AT&T operand order, operand instantiation
// from a small fixed register pool, and the simulated snippet executor.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "prospector/counter_backend.hpp"
#include "prospector/error.hpp"
#include "prospector/event_space.hpp"
#include "prospector/outcome.hpp"

namespace prospector {

enum class Dialect { kIntel, kAtt };

enum class OperandKind { kRegister, kMemory, kImmediate, kRelativeBranch };

enum class RegClass { kNone, kGp8, kGp16, kGp32, kGp64, kXmm, kYmm, kZmm, kMask };

struct OperandTemplate {
  OperandKind kind = OperandKind::kRegister;
  RegClass reg_class = RegClass::kNone;
  unsigned width_bits = 0;  // 0 when unspecified (e.g. `mem`)
};

namespace detail {

inline std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::optional<unsigned> token_width(std::string_view digits) {
  unsigned w = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), w);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
  return w;
}

}  // namespace detail

/// Classifies one operand-template token (`r64`, `m128`, `imm8`, `rel32`,
/// `xmm`, `k`, ...), accepting AT&T decoration (`%r64`, `$imm8`).
inline std::optional<OperandTemplate> classify_operand(std::string_view token) {
  if (!token.empty() && (token.front() == '%' || token.front() == '$')) token.remove_prefix(1);
  const auto t = detail::lower(token);
  std::string_view v(t);
  if (v == "xmm") return OperandTemplate{OperandKind::kRegister, RegClass::kXmm, 128};
  if (v == "ymm") return OperandTemplate{OperandKind::kRegister, RegClass::kYmm, 256};
  if (v == "zmm") return OperandTemplate{OperandKind::kRegister, RegClass::kZmm, 512};
  if (v == "k") return OperandTemplate{OperandKind::kRegister, RegClass::kMask, 64};
  if (v == "mem") return OperandTemplate{OperandKind::kMemory, RegClass::kNone, 0};
  auto with_width = [&](std::string_view prefix, OperandKind kind,
                        std::initializer_list<unsigned> allowed) -> std::optional<OperandTemplate> {
    if (!v.starts_with(prefix)) return std::nullopt;
    auto w = detail::token_width(v.substr(prefix.size()));
    if (!w || std::find(allowed.begin(), allowed.end(), *w) == allowed.end()) return std::nullopt;
    OperandTemplate op{kind, RegClass::kNone, *w};
    if (kind == OperandKind::kRegister) {
      op.reg_class = *w == 8 ? RegClass::kGp8 : *w == 16 ? RegClass::kGp16 : *w == 32 ? RegClass::kGp32 : RegClass::kGp64;
    }
    return op;
  };
  if (auto op = with_width("imm", OperandKind::kImmediate, {8, 16, 32, 64})) return op;
  if (auto op = with_width("rel", OperandKind::kRelativeBranch, {8, 16, 32})) return op;
  if (auto op = with_width("r", OperandKind::kRegister, {8, 16, 32, 64})) return op;
  if (auto op = with_width("m", OperandKind::kMemory, {8, 16, 32, 64, 80, 128, 256, 512})) return op;
  return std::nullopt;
}

struct InstructionEntry {
  std::int64_t id = 0;
  std::string mnemonic;
  std::vector<std::string> operand_templates;
  std::string extension;
  bool is_control_flow = false;
  std::string class_tag;
  Dialect dialect = Dialect::kIntel;

  friend bool operator==(const InstructionEntry&, const InstructionEntry&) = default;
};

struct CorpusDiagnostic {
  std::size_t line = 0;
  std::string message;
};

struct CorpusParseResult {
  std::vector<InstructionEntry> entries;
  std::vector<CorpusDiagnostic> diagnostics;
};

/// Parses `id \t mnemonic \t operands \t extension \t class_tag` rows.
/// Operands are comma-joined; an empty field or `-` means no operands.
inline CorpusParseResult parse_corpus(std::istream& in) {
  if (!in) throw Error(ErrorKind::kInput, "corpus stream is not readable");
  CorpusParseResult result;
  std::set<std::int64_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto view = detail::trim(line);
    if (view.empty() || view.front() == '#') continue;
    auto fields = detail::split(line, '\t');
    auto bad = [&](std::string message) { result.diagnostics.push_back({line_no, std::move(message)}); };
    if (fields.size() != 5) {
      bad("expected 5 tab-separated columns, found " + std::to_string(fields.size()));
      continue;
    }
    InstructionEntry e;
    auto id_text = detail::trim(fields[0]);
    auto [ptr, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), e.id);
    if (ec != std::errc{} || ptr != id_text.data() + id_text.size()) {
      bad("invalid id '" + std::string(id_text) + "'");
      continue;
    }
    if (!seen.insert(e.id).second) {
      bad("duplicate id " + std::to_string(e.id));
      continue;
    }
    e.mnemonic = std::string(detail::trim(fields[1]));
    if (e.mnemonic.empty()) {
      bad("empty mnemonic");
      continue;
    }
    auto ops = detail::trim(fields[2]);
    if (!ops.empty() && ops != "-") {
      bool empty_operand = false;
      for (auto tok : detail::split(ops, ',')) {
        auto t = detail::trim(tok);
        if (t.empty()) empty_operand = true;
        e.operand_templates.emplace_back(t);
      }
      if (empty_operand) {
        bad("empty operand template");
        continue;
      }
    }
    e.extension = std::string(detail::trim(fields[3]));
    e.class_tag = std::string(detail::trim(fields[4]));
    if (e.extension.empty() || e.class_tag.empty()) {
      bad("extension and class_tag must be non-empty");
      continue;
    }
    e.is_control_flow = e.class_tag == "branch" ||
                        std::any_of(e.operand_templates.begin(), e.operand_templates.end(), [](const std::string& t) {
                          auto op = classify_operand(t);
                          return op && op->kind == OperandKind::kRelativeBranch;
                        });
    result.entries.push_back(std::move(e));
  }
  if (in.bad()) throw Error(ErrorKind::kInput, "error while reading corpus stream");
  return result;
}

inline CorpusParseResult parse_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open corpus '" + path + "'");
  return parse_corpus(in);
}

inline void write_corpus(std::ostream& out, const std::vector<InstructionEntry>& entries) {
  for (const auto& e : entries) {
    out << e.id << '\t' << e.mnemonic << '\t';
    for (std::size_t i = 0; i < e.operand_templates.size(); ++i) out << (i ? "," : "") << e.operand_templates[i];
    if (e.operand_templates.empty()) out << '-';
    out << '\t' << e.extension << '\t' << e.class_tag << '\n';
  }
}

/// Rewrites an entry for the target dialect: operand order plus register
/// (`%`) and immediate (`$`) decoration. Idempotent.
inline InstructionEntry normalize_syntax(const InstructionEntry& entry, Dialect target) {
  for (const auto& t : entry.operand_templates) {
    if (!classify_operand(t)) {
      throw Error(ErrorKind::kNormalization, "unknown operand kind '" + t + "' in entry " + std::to_string(entry.id));
    }
  }
  InstructionEntry out = entry;
  out.dialect = target;
  if (entry.dialect != target) std::reverse(out.operand_templates.begin(), out.operand_templates.end());
  for (auto& t : out.operand_templates) {
    std::string_view bare(t);
    if (!bare.empty() && (bare.front() == '%' || bare.front() == '$')) bare.remove_prefix(1);
    std::string plain(bare);
    if (target == Dialect::kAtt) {
      auto op = *classify_operand(plain);
      if (op.kind == OperandKind::kRegister) plain = "%" + plain;
      if (op.kind == OperandKind::kImmediate) plain = "$" + plain;
    }
    t = std::move(plain);
  }
  return out;
}

/// Registers and memory used to fill operands. Memory operands always
/// address the scratch buffer through `memory_base`.
struct OperandPool {
  std::map<RegClass, std::vector<std::string>> registers;
  std::set<std::string> extensions;  // upper-case extension tags the pool can serve
  std::string memory_base = "rdi";
  std::size_t scratch_bytes = 4096;
  std::string immediate = "1";
};

inline OperandPool default_pool() {
  OperandPool pool;
  pool.registers[RegClass::kGp8] = {"al", "bl", "cl", "dl"};
  pool.registers[RegClass::kGp16] = {"ax", "bx", "cx", "dx"};
  pool.registers[RegClass::kGp32] = {"eax", "ebx", "ecx", "edx"};
  pool.registers[RegClass::kGp64] = {"rax", "rbx", "rcx", "rdx"};
  pool.registers[RegClass::kXmm] = {"xmm0", "xmm1", "xmm2", "xmm3"};
  pool.registers[RegClass::kYmm] = {"ymm0", "ymm1", "ymm2", "ymm3"};
  pool.extensions = {"BASE", "X87", "MMX", "SSE", "SSE2", "SSE3", "SSSE3", "SSE4", "SSE4_1", "SSE4_2",
                     "AVX", "AVX2", "FMA", "BMI1", "BMI2", "AES", "PCLMULQDQ", "POPCNT", "LZCNT"};
  return pool;
}

struct Snippet {
  std::int64_t entry_id = 0;
  std::string rendered_text;
  std::vector<std::string> register_pool;  // registers the snippet was filled from
  std::string class_tag;
  std::string extension;
  Dialect dialect = Dialect::kIntel;
  bool is_control_flow = false;

  friend bool operator==(const Snippet&, const Snippet&) = default;
};

namespace detail {

inline std::string intel_ptr(unsigned width) {
  switch (width) {
    case 8: return "byte ptr ";
    case 16: return "word ptr ";
    case 32: return "dword ptr ";
    case 64: return "qword ptr ";
    case 80: return "tbyte ptr ";
    case 128: return "xmmword ptr ";
    case 256: return "ymmword ptr ";
    case 512: return "zmmword ptr ";
    default: return "";
  }
}

inline char att_suffix(unsigned width) {
  switch (width) {
    case 8: return 'b';
    case 16: return 'w';
    case 32: return 'l';
    case 64: return 'q';
    default: return '\0';
  }
}

}  // namespace detail

inline constexpr std::string_view kBranchTargetLabel = "1";

/// Binds every operand template to a concrete register, scratch-memory
/// reference, immediate, or forward label. Pure in (entry, pool).
inline Snippet instantiate(const InstructionEntry& entry, const OperandPool& pool) {
  if (pool.extensions.count(detail::upper(entry.extension)) == 0) {
    throw Error(ErrorKind::kInstantiation,
                "entry " + std::to_string(entry.id) + " needs extension " + entry.extension + " not served by pool");
  }
  Snippet sn;
  sn.entry_id = entry.id;
  sn.class_tag = entry.class_tag;
  sn.extension = entry.extension;
  sn.dialect = entry.dialect;
  sn.is_control_flow = entry.is_control_flow;

  const bool att = entry.dialect == Dialect::kAtt;
  std::map<RegClass, std::size_t> used;
  std::vector<std::string> rendered;
  bool has_register = false;
  unsigned memory_width = 0;
  bool has_branch = false;
  for (const auto& t : entry.operand_templates) {
    auto op = classify_operand(t);
    if (!op) {
      throw Error(ErrorKind::kInstantiation, "unknown operand kind '" + t + "' in entry " + std::to_string(entry.id));
    }
    switch (op->kind) {
      case OperandKind::kRegister: {
        auto it = pool.registers.find(op->reg_class);
        if (it == pool.registers.end() || it->second.empty()) {
          throw Error(ErrorKind::kInstantiation,
                      "pool has no registers for operand '" + t + "' of entry " + std::to_string(entry.id));
        }
        const auto& regs = it->second;
        const auto& name = regs[used[op->reg_class]++ % regs.size()];
        if (std::find(sn.register_pool.begin(), sn.register_pool.end(), name) == sn.register_pool.end()) {
          sn.register_pool.push_back(name);
        }
        rendered.push_back(att ? "%" + name : name);
        has_register = true;
        break;
      }
      case OperandKind::kMemory:
        memory_width = op->width_bits;
        rendered.push_back(att ? "(%" + pool.memory_base + ")"
                               : detail::intel_ptr(op->width_bits) + "[" + pool.memory_base + "]");
        break;
      case OperandKind::kImmediate:
        rendered.push_back(att ? "$" + pool.immediate : pool.immediate);
        break;
      case OperandKind::kRelativeBranch:
        rendered.push_back(std::string(kBranchTargetLabel) + "f");
        has_branch = true;
        break;
    }
  }
  std::string mnemonic = detail::lower(entry.mnemonic);
  if (att && !has_register && memory_width != 0 && detail::att_suffix(memory_width) != '\0') {
    mnemonic += detail::att_suffix(memory_width);
  }
  std::string text = mnemonic;
  for (std::size_t i = 0; i < rendered.size(); ++i) text += (i ? ", " : " ") + rendered[i];
  // Jump targets land directly after the instruction so control flow always
  // falls through to the epilogue.
  if (has_branch || entry.is_control_flow) text += "\n" + std::string(kBranchTargetLabel) + ":";
  sn.rendered_text = std::move(text);
  return sn;
}

enum class SuppressionMode { kSignalHandler, kTransactional };

constexpr std::string_view to_string(SuppressionMode m) noexcept {
  return m == SuppressionMode::kTransactional ? "transactional" : "signal-handler";
}

template <class E>
concept SnippetExecutor = requires(E& executor, const Snippet& snippet, SuppressionMode mode) {
  { executor.execute(snippet, mode) } -> std::convertible_to<ExecOutcome>;
};

/// Executes snippets against a simulated PMU: the snippet's class tag is
/// retired on the monitored context unless the entry is in the fault table.
class SimulatedExecutor {
 public:
  explicit SimulatedExecutor(SimulatedPmu& pmu) : pmu_(&pmu) {}

  ExecOutcome execute(const Snippet& snippet, SuppressionMode mode) {
    if (mode == SuppressionMode::kTransactional && !pmu_->capabilities().supports_transactional_suppression) {
      throw Error(ErrorKind::kCapability, "transactional suppression not supported by backend");
    }
    const auto& faults = pmu_->model().faults;
    if (auto it = faults.find(snippet.entry_id); it != faults.end()) {
      return ExecOutcome::fault(it->second, "simulated fault table");
    }
    pmu_->dispatch(snippet.class_tag, LogicalContext::kOwn);
    return ExecOutcome::success();
  }

 private:
  SimulatedPmu* pmu_;
};

static_assert(SnippetExecutor<SimulatedExecutor>);

struct ExecutionTally {
  std::size_t success = 0;
  std::size_t faults = 0;
  std::size_t unsupported = 0;

  [[nodiscard]] std::size_t total() const noexcept { return success + faults + unsupported; }
  void record(ExecStatus status) noexcept {
    switch (status) {
      case ExecStatus::kSuccess: ++success; break;
      case ExecStatus::kFault: ++faults; break;
      case ExecStatus::kUnsupportedExtension: ++unsupported; break;
    }
  }
};

/// Instantiates and executes one corpus entry; instantiation failures are
/// reported as unsupported-extension outcomes rather than thrown.
template <SnippetExecutor E>
ExecOutcome instantiate_and_execute(E& executor, const InstructionEntry& entry, const OperandPool& pool,
                                    SuppressionMode mode) {
  Snippet snippet;
  try {
    snippet = instantiate(entry, pool);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kInstantiation) throw;
    return ExecOutcome::unsupported(e.what());
  }
  return executor.execute(snippet, mode);
}

}  // namespace prospector
