#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "heal/kernels.hpp"

namespace heal::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(HEAL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* forced = std::getenv("HEAL_ISA");
  if (forced != nullptr && std::string(forced) == "scalar") return &scalar_table();
#if defined(HEAL_HAVE_AVX2)
  if (cpu_has_avx2()) return &avx2_table();
#endif
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return cpu_has_avx2();
  }
  return false;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void select(Isa isa) {
  if (!isa_supported(isa))
    throw std::runtime_error("kernel ISA not supported on this CPU: " + std::string(isa_name(isa)));
#if defined(HEAL_HAVE_AVX2)
  if (isa == Isa::avx2) {
    current().store(&avx2_table());
    return;
  }
#endif
  current().store(&scalar_table());
}

}  // namespace heal::kernels
