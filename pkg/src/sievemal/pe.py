"""Minimal PE parser/serializer with functionality-preserving section injection.

Only the header fields needed for feature extraction and section manipulation
are modeled; everything else in the header region is carried opaquely and
re-emitted verbatim, which gives byte-exact round trips for files this module
produced without implementing the full format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

from .errors import MalformedPe, SectionLimitExceeded

DOS_MAGIC = b"MZ"
PE_SIGNATURE = b"PE\x00\x00"
OPT_MAGIC_PE32 = 0x10B
OPT_MAGIC_PE32PLUS = 0x20B
SECTION_HEADER_SIZE = 40
MAX_SECTIONS = 65535

# section characteristic flags (subset)
IMAGE_SCN_CNT_INITIALIZED_DATA = 0x00000040
IMAGE_SCN_MEM_EXECUTE = 0x20000000
IMAGE_SCN_MEM_READ = 0x40000000

INJECTED_SECTION_CHARACTERISTICS = IMAGE_SCN_CNT_INITIALIZED_DATA | IMAGE_SCN_MEM_READ


def align_up(value: int, alignment: int) -> int:
    if alignment <= 1:
        return value
    return (value + alignment - 1) // alignment * alignment


@dataclass(frozen=True)
class Section:
    name: bytes  # up to 8 bytes, NUL padding stripped
    virtual_size: int
    virtual_address: int
    raw_size: int
    raw_offset: int
    characteristics: int
    data: bytes

    def __post_init__(self):
        if len(self.name) > 8:
            raise ValueError("section name exceeds 8 bytes")
        if len(self.data) != self.raw_size:
            raise ValueError("section data length disagrees with raw_size")

    @property
    def is_executable(self) -> bool:
        return bool(self.characteristics & IMAGE_SCN_MEM_EXECUTE)

    def raw_end(self) -> int:
        return self.raw_offset + self.raw_size


@dataclass(frozen=True)
class PeFile:
    dos_magic: bytes
    e_lfanew: int
    machine: int
    num_sections: int
    timestamp: int
    characteristics: int
    opt_magic: int
    entry_point_rva: int
    section_alignment: int
    file_alignment: int
    size_of_image: int
    sections: tuple[Section, ...]
    overlay: bytes
    raw_length: int
    # opaque header region: everything from offset 0 up to the first section's
    # raw data (or the whole file when no section carries data)
    header_blob: bytes

    @property
    def is_pe64(self) -> bool:
        return self.opt_magic == OPT_MAGIC_PE32PLUS

    def section_table_offset(self) -> int:
        size_of_opt = struct.unpack_from("<H", self.header_blob, self.e_lfanew + 20)[0]
        return self.e_lfanew + 24 + size_of_opt

    def virtual_end(self) -> int:
        end = 0
        for s in self.sections:
            end = max(end, s.virtual_address + max(s.virtual_size, s.raw_size))
        return end


def _require(cond: bool, why: str):
    if not cond:
        raise MalformedPe(why)


def parse_pe(raw: bytes) -> PeFile:
    """Parse raw bytes into a PeFile; raises MalformedPe on structural damage."""
    _require(len(raw) >= 64, "file shorter than a DOS header")
    _require(raw[:2] == DOS_MAGIC, "missing MZ magic")
    e_lfanew = struct.unpack_from("<I", raw, 0x3C)[0]
    _require(e_lfanew + 24 <= len(raw), "e_lfanew points past end of file")
    _require(raw[e_lfanew:e_lfanew + 4] == PE_SIGNATURE, "missing PE signature")

    machine, num_sections, timestamp = struct.unpack_from("<HHI", raw, e_lfanew + 4)
    size_of_opt, characteristics = struct.unpack_from("<HH", raw, e_lfanew + 20)
    opt_off = e_lfanew + 24
    _require(size_of_opt >= 64, "optional header too small")
    _require(opt_off + size_of_opt <= len(raw), "optional header truncated")

    opt_magic = struct.unpack_from("<H", raw, opt_off)[0]
    _require(opt_magic in (OPT_MAGIC_PE32, OPT_MAGIC_PE32PLUS), "unknown optional header magic")
    entry_point_rva = struct.unpack_from("<I", raw, opt_off + 16)[0]
    section_alignment, file_alignment = struct.unpack_from("<II", raw, opt_off + 32)
    _require(file_alignment >= 1, "zero file alignment")
    _require(section_alignment >= 1, "zero section alignment")
    size_of_image = struct.unpack_from("<I", raw, opt_off + 56)[0]

    table_off = opt_off + size_of_opt
    table_end = table_off + num_sections * SECTION_HEADER_SIZE
    _require(table_end <= len(raw), "section table out of bounds")

    sections = []
    for i in range(num_sections):
        off = table_off + i * SECTION_HEADER_SIZE
        name = raw[off:off + 8].rstrip(b"\x00")
        vsize, vaddr, rsize, roff = struct.unpack_from("<IIII", raw, off + 8)
        schar = struct.unpack_from("<I", raw, off + 36)[0]
        _require(roff + rsize <= len(raw), f"section {i} raw data out of bounds")
        data = raw[roff:roff + rsize]
        sections.append(Section(name, vsize, vaddr, rsize, roff, schar, data))

    # raw regions must not overlap
    spans = sorted((s.raw_offset, s.raw_end()) for s in sections if s.raw_size > 0)
    for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
        _require(a1 <= b0, "section raw data regions overlap")

    data_start = min((s.raw_offset for s in sections if s.raw_size > 0), default=len(raw))
    _require(data_start >= table_end, "section data overlaps the header region")
    last_end = max((s.raw_end() for s in sections), default=table_end)
    overlay = raw[last_end:]

    return PeFile(
        dos_magic=raw[:2],
        e_lfanew=e_lfanew,
        machine=machine,
        num_sections=num_sections,
        timestamp=timestamp,
        characteristics=characteristics,
        opt_magic=opt_magic,
        entry_point_rva=entry_point_rva,
        section_alignment=section_alignment,
        file_alignment=file_alignment,
        size_of_image=size_of_image,
        sections=tuple(sections),
        overlay=overlay,
        raw_length=len(raw),
        header_blob=raw[:data_start],
    )


def serialize_pe(pe: PeFile) -> bytes:
    """Emit the file bytes; inverse of parse_pe for files this module produced."""
    table_off = pe.section_table_offset()
    table_end = table_off + len(pe.sections) * SECTION_HEADER_SIZE
    header = bytearray(pe.header_blob)
    if len(header) < table_end:
        header.extend(b"\x00" * (table_end - len(header)))

    struct.pack_into("<H", header, pe.e_lfanew + 6, len(pe.sections))
    struct.pack_into("<I", header, pe.e_lfanew + 8, pe.timestamp)
    opt_off = pe.e_lfanew + 24
    struct.pack_into("<I", header, opt_off + 16, pe.entry_point_rva)
    struct.pack_into("<I", header, opt_off + 56, pe.size_of_image)

    for i, s in enumerate(pe.sections):
        off = table_off + i * SECTION_HEADER_SIZE
        header[off:off + 8] = s.name.ljust(8, b"\x00")
        struct.pack_into("<IIII", header, off + 8, s.virtual_size, s.virtual_address,
                         s.raw_size, s.raw_offset)
        struct.pack_into("<III", header, off + 24, 0, 0, 0)
        struct.pack_into("<I", header, off + 36, s.characteristics)

    last_end = max((s.raw_end() for s in pe.sections), default=len(header))
    out = bytearray(max(last_end, len(header)))
    out[:len(header)] = header
    for s in pe.sections:
        out[s.raw_offset:s.raw_end()] = s.data
    out.extend(pe.overlay)
    return bytes(out)


def inject_section(pe: PeFile, name: bytes, content: bytes) -> PeFile:
    """Append one non-executable section holding `content`.

    Existing section data, the entry point, and the overlay are preserved;
    empty content is a no-op. If the section table has no slack before the
    first section's raw data, every raw offset is shifted by one file
    alignment unit (data untouched, offsets move).
    """
    if len(name) > 8:
        raise ValueError("section name exceeds 8 bytes")
    if len(content) == 0:
        return pe
    if pe.num_sections + 1 > MAX_SECTIONS:
        raise SectionLimitExceeded(f"cannot exceed {MAX_SECTIONS} sections")

    table_off = pe.section_table_offset()
    new_table_end = table_off + (len(pe.sections) + 1) * SECTION_HEADER_SIZE
    sections = list(pe.sections)
    header_blob = pe.header_blob

    data_start = min((s.raw_offset for s in sections if s.raw_size > 0), default=None)
    if data_start is not None and new_table_end > data_start:
        shift = align_up(new_table_end - data_start, pe.file_alignment)
        sections = [replace(s, raw_offset=s.raw_offset + shift) if s.raw_size > 0 else s
                    for s in sections]
        header_blob = header_blob + b"\x00" * shift
    elif data_start is None and new_table_end > len(header_blob):
        header_blob = header_blob + b"\x00" * (new_table_end - len(header_blob))

    raw_size = align_up(len(content), pe.file_alignment)
    data = content.ljust(raw_size, b"\x00")
    last_raw_end = max((s.raw_end() for s in sections), default=len(header_blob))
    raw_offset = align_up(max(last_raw_end, new_table_end), pe.file_alignment)
    vaddr = align_up(max(pe.virtual_end(), pe.section_alignment), pe.section_alignment)

    new_section = Section(
        name=name,
        virtual_size=len(content),
        virtual_address=vaddr,
        raw_size=raw_size,
        raw_offset=raw_offset,
        characteristics=INJECTED_SECTION_CHARACTERISTICS,
        data=data,
    )
    sections.append(new_section)
    size_of_image = align_up(vaddr + len(content), pe.section_alignment)
    raw_length = raw_offset + raw_size + len(pe.overlay)

    return replace(
        pe,
        num_sections=len(sections),
        sections=tuple(sections),
        size_of_image=size_of_image,
        raw_length=raw_length,
        header_blob=header_blob,
    )
