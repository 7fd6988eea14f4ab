#!/usr/bin/env python3
"""Independent boot-measurement oracle.

Reads lines of the form `<name> <hex image bytes>` on stdin and prints
`<name> <hex pcr>` where pcr = sha256(32 zero bytes || sha256(image)).
Used by the acceptance suite to cross-check the emulator's measurements
with a second implementation of the hash chain.
"""

import hashlib
import sys


def main() -> int:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        name, hexbytes = line.split()
        image = bytes.fromhex(hexbytes)
        digest = hashlib.sha256(image).digest()
        pcr = hashlib.sha256(b"\x00" * 32 + digest).hexdigest()
        print(f"{name} {pcr}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
