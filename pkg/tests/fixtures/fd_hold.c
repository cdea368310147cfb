/* Opens a known number of files and holds them while sleeping. */
#include "common.h"

void _start(void)
{
    char name[8];
    int i;
    for (i = 0; i < 100; i++) {
        name[0] = 'f';
        name[1] = '0' + i / 100;
        name[2] = '0' + (i / 10) % 10;
        name[3] = '0' + i % 10;
        name[4] = '\0';
        sys4(SYS_openat, AT_FDCWD, name, O_WRONLY | O_CREAT | O_TRUNC, 0644);
    }
    write_file("out.txt", "OK");
    sleep_ms(900);
    finish(0);
}
