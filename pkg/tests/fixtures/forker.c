/* Forks once; the child writes the output file, the parent reaps it. */
#include "common.h"

void _start(void)
{
    long pid = sys0(SYS_fork);
    if (pid == 0) {
        write_file("out.txt", "OK");
        finish(0);
    }
    if (pid > 0)
        sys4(SYS_wait4, pid, 0, 0, 0);
    finish(0);
}
