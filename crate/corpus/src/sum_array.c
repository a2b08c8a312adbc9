/* Generates an array of `mib` MiB of ints (a[i] = i) and returns their sum.
 * Memory comes from raw mmap/munmap syscalls so the payload has no external
 * references and runs from any load address. */
long sum_array(long mib) {
  unsigned long len = (unsigned long)mib << 20;
  long addr;
  register long r10 __asm__("r10") = 0x22; /* MAP_PRIVATE | MAP_ANONYMOUS */
  register long r8 __asm__("r8") = -1;
  register long r9 __asm__("r9") = 0;
  __asm__ volatile("syscall"
                   : "=a"(addr)
                   : "a"(9L), "D"(0L), "S"(len), "d"(3L), "r"(r10), "r"(r8), "r"(r9)
                   : "rcx", "r11", "memory");
  if (addr < 0 && addr > -4096)
    return -1;

  int *a = (int *)addr;
  long n = (long)(len / sizeof(int));
  for (long i = 0; i < n; i++)
    a[i] = (int)i;
  long s = 0;
  for (long i = 0; i < n; i++)
    s += a[i];

  long rc;
  __asm__ volatile("syscall"
                   : "=a"(rc)
                   : "a"(11L), "D"(addr), "S"(len)
                   : "rcx", "r11", "memory");
  return s;
}
