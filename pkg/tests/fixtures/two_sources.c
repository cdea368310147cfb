/* Reads the same value from two redundant sources; fails only when both
 * are unavailable.  Each source alone tolerates stubbing, the pair does not. */
#include "common.h"

void _start(void)
{
    long v1 = sys0(SYS_getuid);
    long v2 = sys0(SYS_geteuid);
    long v = v1 >= 0 ? v1 : v2;
    if (v < 0)
        finish(3);
    write_file("out.txt", "OK");
    finish(0);
}
