#include <atomic>
#include <cstdlib>
#include <string>

#include "nrf/kernels/kernels.hpp"

namespace nrf::kernels {

#ifdef NRF_HAVE_X86_KERNELS
const KernelTable& avx2_table_impl();
const KernelTable& avx512_table_impl();

const KernelTable* avx2_table() {
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok ? &avx2_table_impl() : nullptr;
}

const KernelTable* avx512_table() {
  static const bool ok = __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq") &&
                         __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok ? &avx512_table_impl() : nullptr;
}
#else
const KernelTable* avx2_table() { return nullptr; }
const KernelTable* avx512_table() { return nullptr; }
#endif

std::vector<const KernelTable*> available_tables() {
  std::vector<const KernelTable*> out{&scalar_table()};
  if (auto* t = avx2_table()) out.push_back(t);
  if (auto* t = avx512_table()) out.push_back(t);
  return out;
}

namespace {

const KernelTable* by_name(std::string_view name) {
  for (auto* t : available_tables())
    if (name == t->name) return t;
  return nullptr;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{[] {
    if (const char* env = std::getenv("NRF_KERNELS")) {
      if (auto* t = by_name(env)) return t;
    }
    return available_tables().back();
  }()};
  return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

bool select(std::string_view name) {
  auto* t = by_name(name);
  if (!t) return false;
  slot().store(t, std::memory_order_release);
  return true;
}

}  // namespace nrf::kernels
