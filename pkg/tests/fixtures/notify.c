/* Paced worker: each round waits on the kernel for 2 ms; when the sleep
 * syscall fails it falls back to burning cycles for several times longer.
 * Writes a throughput-style metric (inverse elapsed ticks) to metric.txt. */
#include "common.h"

#define ROUNDS 25
#define SPIN_TICKS 24000000UL  /* >= 6 ms on a 4 GHz TSC */

void _start(void)
{
    char num[24];
    long rl[2] = {0, 0};
    unsigned long t0, t1;
    int i;

    sys2(SYS_getrlimit, RLIMIT_NOFILE, rl);  /* result ignored */

    t0 = rdtsc();
    for (i = 0; i < ROUNDS; i++) {
        long ts[2] = {0, 2000000};
        if (sys2(SYS_nanosleep, ts, 0) < 0) {
            unsigned long spin_start = rdtsc();
            while (rdtsc() - spin_start < SPIN_TICKS)
                ;
        }
    }
    t1 = rdtsc();
    write_file("metric.txt", fmt_long(num, sizeof(num),
                                      (long)(100000000000UL / (t1 - t0))));
    finish(0);
}
