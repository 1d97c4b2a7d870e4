#include "embattack/harness/allocator.h"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace embattack::harness {

void configure_allocator() {
#if defined(__GLIBC__)
  constexpr int kThreshold = 32 << 20;
  mallopt(M_MMAP_THRESHOLD, kThreshold);
  mallopt(M_TRIM_THRESHOLD, 2 * kThreshold);
  mallopt(M_TOP_PAD, kThreshold);
#endif
}

}  // namespace embattack::harness
