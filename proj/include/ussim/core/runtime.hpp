#pragma once

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace ussim {

// Training allocates and frees multi-megabyte activation buffers every step. glibc would
// hand each one back to the kernel via mmap/munmap, and the resulting page faults cost
// more than the convolutions. Keeping them on the heap avoids that.
inline void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace ussim
