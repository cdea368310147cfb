/* Output-bearing fixture: the workload is the written file. */
#include "common.h"

void _start(void)
{
    write_file("out.txt", "OK");
    finish(0);
}
