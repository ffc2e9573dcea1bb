#!/usr/bin/env python3
"""Protocol-exercising matcher stub: consumes the full request, emits a fixed
match list. The match values are exact binary fractions so the text round
trip is lossless."""
import struct
import sys

FIXED = [
    (1.5, 2.25, 3.0, 4.5, 1.0),
    (10.0, 20.0, 30.5, 40.25, 0.5),
    (100.125, 7.0, 56.75, 8.0, 0.75),
    (0.0, 0.0, 5.0, 5.0, 0.25),
]


def main():
    header = sys.stdin.buffer.readline()
    parts = header.split()
    if len(parts) != 5 or parts[0] != b"MMREG/1":
        sys.stderr.write("bad header\n")
        return 3
    wa, ha, wb, hb = (int(p) for p in parts[1:])
    need = 4 * (wa * ha + wb * hb)
    blob = sys.stdin.buffer.read(need)
    if len(blob) != need:
        sys.stderr.write("short payload: got %d of %d bytes\n" % (len(blob), need))
        return 3
    # decode a couple of pixels so a truncated struct would be caught
    struct.unpack("<f", blob[:4])
    struct.unpack("<f", blob[-4:])

    out = ["MATCHES %d" % len(FIXED)]
    for xa, ya, xb, yb, conf in FIXED:
        out.append("%g %g %g %g %g" % (xa, ya, xb, yb, conf))
    sys.stdout.write("\n".join(out) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
