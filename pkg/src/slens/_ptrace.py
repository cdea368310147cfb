"""Minimal ctypes bindings for the Linux ptrace facility (x86_64).

Only what the trace engine needs: syscall-stop stepping, register
read/write, child-follow and exec notification options, and event message
retrieval.  The tracer must be the process (thread) that attached.
"""

from __future__ import annotations

import ctypes
import os

_libc = ctypes.CDLL("libc.so.6", use_errno=True)
_libc.ptrace.argtypes = [ctypes.c_long, ctypes.c_long, ctypes.c_void_p, ctypes.c_void_p]
_libc.ptrace.restype = ctypes.c_long

PTRACE_TRACEME = 0
PTRACE_CONT = 7
PTRACE_GETREGS = 12
PTRACE_SETREGS = 13
PTRACE_SYSCALL = 24
PTRACE_SETOPTIONS = 0x4200
PTRACE_GETEVENTMSG = 0x4201
PTRACE_GET_SYSCALL_INFO = 0x420E

SYSCALL_INFO_NONE = 0
SYSCALL_INFO_ENTRY = 1
SYSCALL_INFO_EXIT = 2
SYSCALL_INFO_SECCOMP = 3

PTRACE_O_TRACESYSGOOD = 0x1
PTRACE_O_TRACEFORK = 0x2
PTRACE_O_TRACEVFORK = 0x4
PTRACE_O_TRACECLONE = 0x8
PTRACE_O_TRACEEXEC = 0x10
PTRACE_O_EXITKILL = 0x100000

PTRACE_EVENT_FORK = 1
PTRACE_EVENT_VFORK = 2
PTRACE_EVENT_CLONE = 3
PTRACE_EVENT_EXEC = 4

# waitpid option: wait for all children, including clones.
WALL = 0x40000000

SYSCALL_STOP_SIG = 0x80 | 5  # SIGTRAP | 0x80 under PTRACE_O_TRACESYSGOOD


class UserRegs(ctypes.Structure):
    """x86_64 user_regs_struct."""

    _fields_ = [
        (name, ctypes.c_ulonglong)
        for name in (
            "r15", "r14", "r13", "r12", "rbp", "rbx", "r11", "r10",
            "r9", "r8", "rax", "rcx", "rdx", "rsi", "rdi", "orig_rax",
            "rip", "cs", "eflags", "rsp", "ss", "fs_base", "gs_base",
            "ds", "es", "fs", "gs",
        )
    ]

    def syscall_args(self) -> tuple[int, int, int, int, int, int]:
        return (self.rdi, self.rsi, self.rdx, self.r10, self.r8, self.r9)


class PtraceError(OSError):
    pass


def _check(ret: int, what: str, pid: int) -> int:
    if ret == -1:
        err = ctypes.get_errno()
        raise PtraceError(err, f"ptrace {what} pid={pid}: {os.strerror(err)}")
    return ret


def traceme() -> None:
    _check(_libc.ptrace(PTRACE_TRACEME, 0, None, None), "TRACEME", 0)


def setoptions(pid: int, options: int) -> None:
    _check(_libc.ptrace(PTRACE_SETOPTIONS, pid, None, ctypes.c_void_p(options)),
           "SETOPTIONS", pid)


def getregs(pid: int, regs: UserRegs) -> None:
    _check(_libc.ptrace(PTRACE_GETREGS, pid, None, ctypes.byref(regs)),
           "GETREGS", pid)


def setregs(pid: int, regs: UserRegs) -> None:
    _check(_libc.ptrace(PTRACE_SETREGS, pid, None, ctypes.byref(regs)),
           "SETREGS", pid)


def geteventmsg(pid: int) -> int:
    msg = ctypes.c_ulong()
    _check(_libc.ptrace(PTRACE_GETEVENTMSG, pid, None, ctypes.byref(msg)),
           "GETEVENTMSG", pid)
    return msg.value


_syscall_info_buf = (ctypes.c_uint8 * 128)()


def syscall_stop_kind(pid: int) -> int:
    """Return whether a syscall stop is an entry or an exit (SYSCALL_INFO_*).

    Reliable regardless of process-local state, which matters for the first
    stop of freshly attached children and for stops right after exec.
    """
    ret = _libc.ptrace(PTRACE_GET_SYSCALL_INFO, pid,
                       ctypes.c_void_p(len(_syscall_info_buf)),
                       ctypes.byref(_syscall_info_buf))
    if ret <= 0:
        err = ctypes.get_errno()
        raise PtraceError(err, f"ptrace GET_SYSCALL_INFO pid={pid}: {os.strerror(err)}")
    return _syscall_info_buf[0]


def resume_syscall(pid: int, sig: int = 0) -> None:
    _check(_libc.ptrace(PTRACE_SYSCALL, pid, None, ctypes.c_void_p(sig)),
           "SYSCALL", pid)


def resume_cont(pid: int, sig: int = 0) -> None:
    _check(_libc.ptrace(PTRACE_CONT, pid, None, ctypes.c_void_p(sig)),
           "CONT", pid)


def to_signed(value: int) -> int:
    """Interpret a 64-bit register value as a signed integer."""
    return ctypes.c_long(value).value


def to_unsigned(value: int) -> int:
    """Encode a (possibly negative) integer as a 64-bit register value."""
    return value & 0xFFFFFFFFFFFFFFFF


def read_tracee_string(pid: int, addr: int, limit: int = 4096) -> str:
    """Read a NUL-terminated string from a stopped tracee's memory.

    Raises OSError when the address is unreadable.
    """
    if addr == 0:
        raise OSError("NULL pointer")
    chunks = []
    remaining = limit
    with open(f"/proc/{pid}/mem", "rb", buffering=0) as mem:
        while remaining > 0:
            mem.seek(addr)
            chunk = mem.read(min(256, remaining))
            if not chunk:
                raise OSError("short read from tracee memory")
            nul = chunk.find(b"\0")
            if nul >= 0:
                chunks.append(chunk[:nul])
                return b"".join(chunks).decode("utf-8", errors="replace")
            chunks.append(chunk)
            addr += len(chunk)
            remaining -= len(chunk)
    return b"".join(chunks).decode("utf-8", errors="replace")
