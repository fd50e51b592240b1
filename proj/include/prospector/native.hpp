#pragma once

// Native realization of the counter contract (MSR polling through the
// per-CPU register device) and a fork-isolated snippet executor that
// assembles snippets with the system assembler.
//
// Linux/x86-64 only. None of this is exercised by the acceptance suite.

#include <cpuid.h>
#include <fcntl.h>
#include <sched.h>
#include <signal.h>
#include <sys/mman.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "prospector/counter_backend.hpp"
#include "prospector/instruction_corpus.hpp"

namespace prospector {

inline constexpr std::uint32_t kPerfEvtSelBase = 0x186;
inline constexpr std::uint32_t kPmcBase = 0xC1;
inline constexpr std::uint32_t kPerfGlobalCtrl = 0x38F;

struct NativeProbe {
  bool available = false;
  BackendCapabilities capabilities{0, false, false};
  std::string detail;
};

inline BackendCapabilities probe_cpu_capabilities() {
  BackendCapabilities caps{0, false, false};
  unsigned eax = 0, ebx = 0, ecx = 0, edx = 0;
  if (__get_cpuid(0xA, &eax, &ebx, &ecx, &edx)) {
    caps.programmable_count = std::min<unsigned>((eax >> 8) & 0xFF, kMaxProgrammableCounters);
  }
  if (__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) {
    caps.supports_transactional_suppression = ((ebx >> 11) & 1U) != 0;  // RTM
  }
  return caps;
}

inline std::string msr_device_path(unsigned cpu) { return "/dev/cpu/" + std::to_string(cpu) + "/msr"; }

inline NativeProbe probe_native(unsigned cpu = 0, const std::string& device = {}) {
  NativeProbe probe;
  probe.capabilities = probe_cpu_capabilities();
  const auto path = device.empty() ? msr_device_path(cpu) : device;
  int fd = ::open(path.c_str(), O_RDWR);
  if (fd < 0) {
    probe.detail = "cannot open " + path + ": " + std::strerror(errno) +
                   " (load the msr module and run with CAP_SYS_RAWIO)";
    return probe;
  }
  ::close(fd);
  if (probe.capabilities.programmable_count == 0) {
    probe.detail = "CPUID reports no architectural programmable counters";
    return probe;
  }
  probe.available = true;
  probe.detail = "ok";
  return probe;
}

inline std::string describe(const NativeProbe& p) {
  return std::string("native backend: ") + (p.available ? "available" : "unavailable") +
         "; programmable counters=" + std::to_string(p.capabilities.programmable_count) +
         "; transactional suppression=" + (p.capabilities.supports_transactional_suppression ? "yes" : "no") +
         "; " + p.detail;
}

/// Polls IA32_PMCx after programming IA32_PERFEVTSELx. Pins the calling
/// thread to `cpu`; measured workloads must run on that core.
class MsrBackend {
 public:
  explicit MsrBackend(unsigned cpu = 0, std::string device = {}) : cpu_(cpu) {
    auto probe = probe_native(cpu, device);
    if (!probe.available) throw Error(ErrorKind::kBackend, describe(probe));
    caps_ = probe.capabilities;
    const auto path = device.empty() ? msr_device_path(cpu) : device;
    fd_ = ::open(path.c_str(), O_RDWR);
    if (fd_ < 0) throw Error(ErrorKind::kBackend, "cannot open " + path);
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(cpu, &set);
    if (::sched_setaffinity(0, sizeof(set), &set) != 0) {
      ::close(fd_);
      throw Error(ErrorKind::kBackend, "cannot pin thread to cpu " + std::to_string(cpu));
    }
    auto global = read_msr(kPerfGlobalCtrl);
    write_msr(kPerfGlobalCtrl, global | ((1ULL << caps_.programmable_count) - 1));
  }

  MsrBackend(const MsrBackend&) = delete;
  MsrBackend& operator=(const MsrBackend&) = delete;
  MsrBackend(MsrBackend&& other) noexcept
      : cpu_(other.cpu_), fd_(std::exchange(other.fd_, -1)), caps_(other.caps_), programmed_(other.programmed_) {}
  MsrBackend& operator=(MsrBackend&&) = delete;

  ~MsrBackend() {
    if (fd_ >= 0) ::close(fd_);
  }

  [[nodiscard]] BackendCapabilities capabilities() const noexcept { return caps_; }

  void program(CounterSlot slot, const PerfEvtSelValue& value) {
    check_slot(slot);
    write_msr(kPerfEvtSelBase + slot.index(), 0);
    write_msr(kPmcBase + slot.index(), 0);
    write_msr(kPerfEvtSelBase + slot.index(), render_msr_value(value));
    programmed_[slot.index()] = true;
  }

  [[nodiscard]] std::uint64_t read(CounterSlot slot) const {
    check_slot(slot);
    if (!programmed_[slot.index()]) throw Error(ErrorKind::kState, "counter slot read before program");
    return read_msr(kPmcBase + slot.index());
  }

 private:
  void check_slot(CounterSlot slot) const {
    if (slot.index() >= caps_.programmable_count) {
      throw Error(ErrorKind::kSlotRange, "slot " + std::to_string(slot.index()) + " beyond hardware counters");
    }
  }

  std::uint64_t read_msr(std::uint32_t reg) const {
    std::uint64_t v = 0;
    if (::pread(fd_, &v, sizeof(v), reg) != static_cast<ssize_t>(sizeof(v))) {
      throw Error(ErrorKind::kBackend, "rdmsr failed on register " + std::to_string(reg));
    }
    return v;
  }

  void write_msr(std::uint32_t reg, std::uint64_t v) {
    if (::pwrite(fd_, &v, sizeof(v), reg) != static_cast<ssize_t>(sizeof(v))) {
      throw Error(ErrorKind::kBackend, "wrmsr failed on register " + std::to_string(reg));
    }
  }

  unsigned cpu_;
  int fd_ = -1;
  BackendCapabilities caps_{};
  std::array<bool, kMaxProgrammableCounters> programmed_{};
};

static_assert(CounterBackend<MsrBackend>);

// ---------------------------------------------------------------------------
// Fork isolation

namespace detail {

inline constexpr int kSignalExitBase = 160;

inline SignalKind classify_signal(int sig) {
  switch (sig) {
    case SIGILL: return SignalKind::kIllegalInstruction;
    case SIGSEGV: return SignalKind::kSegmentationFault;
    case SIGBUS: return SignalKind::kBusError;
    case SIGFPE: return SignalKind::kFloatingPoint;
    case SIGTRAP: return SignalKind::kTrap;
    case SIGABRT: return SignalKind::kAbort;
    default: return SignalKind::kOther;
  }
}

extern "C" inline void isolated_fault_handler(int sig) { ::_exit(kSignalExitBase + sig); }

inline void install_fault_handlers() {
  static thread_local std::vector<char> alt(1 << 16);
  stack_t ss{};
  ss.ss_sp = alt.data();
  ss.ss_size = alt.size();
  ::sigaltstack(&ss, nullptr);
  struct sigaction sa {};
  sa.sa_handler = isolated_fault_handler;
  sa.sa_flags = SA_ONSTACK;
  ::sigemptyset(&sa.sa_mask);
  for (int sig : {SIGILL, SIGSEGV, SIGBUS, SIGFPE, SIGTRAP, SIGABRT, SIGSYS}) ::sigaction(sig, &sa, nullptr);
}

}  // namespace detail

/// Runs `body` in a forked child with all fault signals handled and a
/// watchdog. The host process survives whatever the body does.
template <class F>
ExecOutcome run_isolated(F&& body, std::chrono::milliseconds timeout = std::chrono::milliseconds(100)) {
  std::fflush(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorKind::kBackend, std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    detail::install_fault_handlers();
    body();
    ::_exit(0);
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) throw Error(ErrorKind::kBackend, "waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      return ExecOutcome::fault(SignalKind::kTimeout, "watchdog expired");
    }
    std::this_thread::sleep_for(std::chrono::microseconds(200));
  }
  if (WIFSIGNALED(status)) {
    return ExecOutcome::fault(detail::classify_signal(WTERMSIG(status)), "signal " + std::to_string(WTERMSIG(status)));
  }
  const int code = WEXITSTATUS(status);
  if (code == 0) return ExecOutcome::success();
  if (code > detail::kSignalExitBase) {
    const int sig = code - detail::kSignalExitBase;
    return ExecOutcome::fault(detail::classify_signal(sig), "signal " + std::to_string(sig));
  }
  return ExecOutcome::fault(SignalKind::kOther, "exit status " + std::to_string(code));
}

/// Assembles snippet text into a flat code image using GNU as + objcopy.
class SystemAssembler {
 public:
  explicit SystemAssembler(std::filesystem::path work_dir = std::filesystem::temp_directory_path())
      : work_dir_(std::move(work_dir)) {}

  /// Returns std::nullopt when the assembler rejects the text.
  std::optional<std::vector<std::uint8_t>> assemble(const std::string& text, Dialect dialect) const {
    std::string tmpl = (work_dir_ / "prospector-asm-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    const int fd = ::mkstemp(buf.data());
    if (fd < 0) throw Error(ErrorKind::kBackend, "mkstemp failed");
    ::close(fd);
    const std::string base(buf.data());
    const std::string src = base + ".s", obj = base + ".o", bin = base + ".bin";
    {
      std::ofstream out(src);
      out << (dialect == Dialect::kIntel ? ".intel_syntax noprefix\n" : ".att_syntax prefix\n") << text << '\n';
    }
    const std::string cmd = "as --64 -o '" + obj + "' '" + src + "' >/dev/null 2>&1 && objcopy -O binary -j .text '" +
                            obj + "' '" + bin + "' >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    std::optional<std::vector<std::uint8_t>> result;
    if (rc == 0) {
      std::ifstream in(bin, std::ios::binary);
      result.emplace(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    for (const auto& p : {base, src, obj, bin}) std::filesystem::remove(p);
    return result;
  }

 private:
  std::filesystem::path work_dir_;
};

/// Executes snippets natively in a forked child. The snippet is called as a
/// function whose first argument (rdi) is the 4 KiB scratch buffer.
class NativeExecutor {
 public:
  explicit NativeExecutor(std::chrono::milliseconds timeout = std::chrono::milliseconds(100),
                          BackendCapabilities caps = probe_cpu_capabilities())
      : timeout_(timeout), caps_(caps) {}

  ExecOutcome execute(const Snippet& snippet, SuppressionMode mode) {
    if (mode == SuppressionMode::kTransactional && !caps_.supports_transactional_suppression) {
      throw Error(ErrorKind::kCapability, "CPU lacks RTM; transactional suppression unavailable");
    }
    const auto* code = image_for(snippet, mode);
    if (code == nullptr) return ExecOutcome::unsupported("assembler rejected snippet");
    return run_isolated(
        [code] {
          void* exec = ::mmap(nullptr, code->size() + 4096, PROT_READ | PROT_WRITE | PROT_EXEC,
                              MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
          void* scratch = ::mmap(nullptr, 4096, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
          if (exec == MAP_FAILED || scratch == MAP_FAILED) ::_exit(1);
          std::memcpy(exec, code->data(), code->size());
          reinterpret_cast<void (*)(void*)>(exec)(scratch);
        },
        timeout_);
  }

 private:
  static std::string wrap(const Snippet& s, SuppressionMode mode) {
    const bool intel = s.dialect == Dialect::kIntel;
    std::string prologue = intel ? "push rbx\nmov eax, 1\nmov ebx, 1\nmov ecx, 1\nxor edx, edx\n"
                                 : "push %rbx\nmovl $1, %eax\nmovl $1, %ebx\nmovl $1, %ecx\nxorl %edx, %edx\n";
    std::string epilogue = intel ? "pop rbx\nret\n" : "pop %rbx\nret\n";
    if (mode == SuppressionMode::kTransactional) {
      return prologue + "xbegin 9f\n" + s.rendered_text + "\nxend\n9:\n" + epilogue;
    }
    return prologue + s.rendered_text + "\n" + epilogue;
  }

  const std::vector<std::uint8_t>* image_for(const Snippet& s, SuppressionMode mode) {
    const auto key = std::make_pair(wrap(s, mode), s.dialect);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, assembler_.assemble(key.first, s.dialect)).first;
    return it->second ? &*it->second : nullptr;
  }

  std::chrono::milliseconds timeout_;
  BackendCapabilities caps_;
  SystemAssembler assembler_;
  std::map<std::pair<std::string, Dialect>, std::optional<std::vector<std::uint8_t>>> cache_;
};

static_assert(SnippetExecutor<NativeExecutor>);

}  // namespace prospector
