#include <cstdlib>
#include <string>

#include "hypercast/kernels.hpp"

namespace hypercast::kernels {
namespace {

const KernelTable& select() {
    const char* forced = std::getenv("HYPERCAST_ISA");
    if (forced != nullptr && std::string(forced) == "scalar") return scalar_table();
    if (isa_supported(Isa::avx2)) return *avx2_table();
    return scalar_table();
}

}  // namespace

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
                   __builtin_cpu_supports("fma");
#else
            return false;
#endif
    }
    return false;
}

const KernelTable& active() {
    static const KernelTable& table = select();
    return table;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace hypercast::kernels
