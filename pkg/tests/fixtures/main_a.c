/* Whitelisted half of the two-binary fixture. */
#include "common.h"

void _start(void)
{
    sys0(SYS_getpid);
    write_file("out.txt", "OK");
    finish(0);
}
