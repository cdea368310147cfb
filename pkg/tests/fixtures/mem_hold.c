/* Maps and touches a 64 MiB buffer, then sleeps holding it. */
#include "common.h"

#define SIZE (64L * 1024 * 1024)
#define PROT_READ 1
#define PROT_WRITE 2
#define MAP_PRIVATE 2
#define MAP_ANONYMOUS 0x20

void _start(void)
{
    long addr = sys6(SYS_mmap, 0, SIZE, PROT_READ | PROT_WRITE,
                     MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
    if (addr > 0) {
        volatile char *p = (volatile char *)addr;
        long off;
        for (off = 0; off < SIZE; off += 4096)
            p[off] = 1;
    }
    write_file("out.txt", "OK");
    sleep_ms(900);
    finish(0);
}
