// objdump driver: everything we know about a binary comes from parsing
// `objdump -t`, `objdump -dr`, and `objdump -s` text output. binutils
// has kept these formats stable for a long time, but every parse below
// degrades to "no data" rather than throwing when a line looks foreign.

import { spawnSync } from "node:child_process";

export interface SymbolRow {
    vaddr: number;
    size: number;
    binding: string; // l, g, w, or ! straight from the flags column
    section: string;
    name: string;
}

export interface Insn {
    addr: number;
    mnemonic: string;
    text: string;
    // callTarget comes from the "<name>" annotation; a relocation line
    // immediately after the instruction overrides it (relocatable files
    // leave placeholder targets in the encoded bytes)
    callTarget: string | null;
    targetAddr: number | null;
    targetOffset: number; // +0x... part of the annotation, 0 when absent
}

export interface SectionBytes {
    addr: number;
    bytes: Buffer;
}

export class BackendError extends Error {}

function run(binary: string, args: string[]): string {
    const res = spawnSync("objdump", args.concat(binary), {
        encoding: "utf8",
        maxBuffer: 1 << 26,
    });
    if (res.error) {
        throw new BackendError(`objdump failed to start: ${res.error.message}`);
    }
    if (res.status !== 0) {
        const detail = (res.stderr || "").trim().split("\n")[0] || `exit ${res.status}`;
        throw new BackendError(`objdump ${args.join(" ")}: ${detail}`);
    }
    return res.stdout;
}

export function backendVersion(): string {
    const res = spawnSync("objdump", ["--version"], { encoding: "utf8" });
    if (res.error || res.status !== 0) {
        throw new BackendError("objdump is not runnable");
    }
    const first = res.stdout.split("\n")[0].trim();
    const m = first.match(/(\d+(?:\.\d+)+)\s*$/);
    return m ? m[1] : first;
}

// `objdump -t` line: address, one space, a 7-char flag field, section,
// tab, size, then the (possibly visibility-prefixed) symbol name.
const SYM_RE = /^([0-9a-f]+)\s(.{7})\s+(\S+)\t([0-9a-f]+)\s+(.*)$/;

export function readSymbols(binary: string): SymbolRow[] {
    const out: SymbolRow[] = [];
    for (const line of run(binary, ["-t"]).split("\n")) {
        const m = SYM_RE.exec(line);
        if (!m) continue;
        const flags = m[2];
        if (!flags.includes("F")) continue; // function symbols only
        const section = m[3];
        if (section === "*UND*") continue; // defined symbols only
        let name = m[5].trim();
        name = name.replace(/^\.(hidden|protected|internal)\s+/, "");
        if (!name) continue;
        out.push({
            vaddr: parseInt(m[1], 16),
            size: parseInt(m[4], 16),
            binding: flags[0],
            section,
            name,
        });
    }
    return out;
}

// Disassembly lines look like "  1129:\t f3 0f 1e fa \tendbr64 ".
const INSN_RE = /^\s+([0-9a-f]+):\t[0-9a-f ]+\t(.+)$/;
const TARGET_RE = /\b([0-9a-f]+)\s+<([^>]+)>/;
const RELOC_RE = /^\s+[0-9a-f]+:\s+R_\S+\s+(\S+)/;

export function readDisassembly(binary: string): Map<string, Insn[]> {
    const sections = new Map<string, Insn[]>();
    let current: Insn[] | null = null;
    let last: Insn | null = null;
    for (const line of run(binary, ["-dr"]).split("\n")) {
        const sec = line.match(/^Disassembly of section (\S+):$/);
        if (sec) {
            current = [];
            sections.set(sec[1], current);
            last = null;
            continue;
        }
        if (current === null) continue;
        const reloc = RELOC_RE.exec(line);
        if (reloc && last) {
            // "sum_array-0x4" or ".rodata.str1.1+0x8-0x4": symbol plus
            // a textual addend; the relocated instruction points at the
            // symbol, so only the name matters for call edges
            last.callTarget = reloc[1].split(/[+-]0x/)[0];
            last.targetAddr = null;
            last.targetOffset = relocOffset(reloc[1]);
            continue;
        }
        const m = INSN_RE.exec(line);
        if (!m) continue;
        const text = m[2].trim();
        if (text.startsWith("(bad)")) continue;
        const mnemonic = text.split(/\s+/)[0];
        const insn: Insn = {
            addr: parseInt(m[1], 16),
            mnemonic,
            text,
            callTarget: null,
            targetAddr: null,
            targetOffset: 0,
        };
        const tgt = TARGET_RE.exec(text);
        if (tgt) {
            insn.targetAddr = parseInt(tgt[1], 16);
            const inner = tgt[2];
            const plus = inner.indexOf("+0x");
            if (plus >= 0) {
                insn.callTarget = inner.slice(0, plus);
                insn.targetOffset = parseInt(inner.slice(plus + 3), 16);
            } else {
                insn.callTarget = inner;
            }
        }
        current.push(insn);
        last = insn;
    }
    return sections;
}

// The textual addend of a PC32/PLT32 relocation carries an implicit -4
// (distance to the end of the instruction); undo it to get the offset
// of the referenced object inside its symbol or section.
function relocOffset(spec: string): number {
    let total = 0;
    const parts = spec.match(/[+-]0x[0-9a-f]+/g) || [];
    for (const p of parts) {
        const v = parseInt(p.slice(3), 16);
        total += p[0] === "-" ? -v : v;
    }
    return total + 4;
}

// `objdump -s` hex dump: " 2000 25733a20 25642069 74656d73 0a000000  %s:..."
const DUMP_RE = /^ ([0-9a-f]+) ((?:[0-9a-f]{2,8} ?){1,4}) /;

export function readDataSections(binary: string): Map<string, SectionBytes> {
    const out = new Map<string, SectionBytes>();
    let name: string | null = null;
    let addr = 0;
    let chunks: Buffer[] = [];
    const flush = () => {
        if (name !== null && chunks.length) {
            out.set(name, { addr, bytes: Buffer.concat(chunks) });
        }
        chunks = [];
    };
    for (const line of run(binary, ["-s"]).split("\n")) {
        const head = line.match(/^Contents of section (\S+):$/);
        if (head) {
            flush();
            name = head[1];
            addr = -1;
            continue;
        }
        if (name === null) continue;
        const m = DUMP_RE.exec(line);
        if (!m) continue;
        if (addr < 0) addr = parseInt(m[1], 16);
        const hex = m[2].replace(/ /g, "");
        chunks.push(Buffer.from(hex, "hex"));
    }
    flush();
    return out;
}
