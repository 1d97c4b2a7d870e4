#pragma once

namespace embattack::harness {

// Keeps the tape's short-lived megabyte-sized buffers on the heap instead of
// fresh mappings, which otherwise cost a page fault per touched page. Call
// once at process start; a no-op outside glibc.
void configure_allocator();

}  // namespace embattack::harness
