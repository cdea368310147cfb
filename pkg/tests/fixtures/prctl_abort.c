/* Treats a failing capability tweak as fatal, proceeds on success. */
#include "common.h"

void _start(void)
{
    long ret = sys6(SYS_prctl, PR_SET_KEEPCAPS, 1, 0, 0, 0, 0);
    if (ret != 0)
        finish(2);
    write_file("out.txt", "OK");
    finish(0);
}
