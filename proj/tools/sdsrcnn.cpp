#include <malloc.h>

#include <iostream>

#include "sds/commands.hpp"

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step; keep
  // them on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return sds::run_cli(argc, argv, std::cout, std::cerr);
}
