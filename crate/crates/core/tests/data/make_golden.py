"""Writes golden.clsrfb with a byte layout coded independently of the Rust encoder."""
import struct

items = [
    ("a00001", [0.0, 1.0, -2.5, 0.1]),
    ("café_7", [3.25, -0.0, 1e-3, 65504.0]),
    ("z", [-1.0, 0.5, 0.25, -0.125]),
]
dim = 4
out = bytearray(b"CLSRFB01")
out += struct.pack("<B", 1)  # text
out += struct.pack("<II", len(items), dim)
for ident, vec in items:
    raw = ident.encode("utf-8")
    out += struct.pack("<H", len(raw)) + raw
    out += struct.pack("<%df" % dim, *vec)
with open("golden.clsrfb", "wb") as f:
    f.write(out)
