// Turns one unstripped ELF into corpus JSONL: function boundaries and
// names come from the symbol table, everything else from linear
// disassembly. Exclusion rules: zero-size symbols, locally bound
// symbols, and symbols overlapping an already accepted range are
// skipped but still counted, so emitted + skipped always equals the
// number of defined function symbols.

import * as fs from "node:fs";
import * as path from "node:path";

import {
    BackendError,
    Insn,
    SectionBytes,
    SymbolRow,
    backendVersion,
    readDataSections,
    readDisassembly,
    readSymbols,
} from "./objdump";
import {
    BackendInfo,
    ExtractionReport,
    FunctionRecord,
    SkippedSymbol,
    zeroTaint,
} from "./types";

export class ExtractError extends Error {}

const MAX_STRING_CONST = 256;
const MAX_SAFE = Number.MAX_SAFE_INTEGER;

export interface ExtractResult {
    report: ExtractionReport;
    // true when every accepted symbol produced a record; false when the
    // backend failed on some functions (exit code 1, partial)
    complete: boolean;
}

export const BACKENDS = ["objdump"];

export function extract(
    binaryPath: string,
    outPath: string,
    backendName = "objdump",
): ExtractResult {
    if (!BACKENDS.includes(backendName)) {
        throw new ExtractError(`unknown backend ${JSON.stringify(backendName)}`);
    }
    if (!fs.existsSync(binaryPath)) {
        throw new ExtractError(`binary ${JSON.stringify(binaryPath)} does not exist`);
    }
    const backend: BackendInfo = { name: backendName, version: backendVersion() };
    const binaryId = path.basename(binaryPath);

    const symbols = readSymbols(binaryPath);
    if (symbols.length === 0) {
        throw new ExtractError(`no symbol table in ${JSON.stringify(binaryPath)}`);
    }

    const skipped: SkippedSymbol[] = [];
    const accepted: SymbolRow[] = [];
    // stable sort: symbols sharing an address keep symbol-table order
    const ordered = [...symbols].sort((a, b) => a.vaddr - b.vaddr);
    const cursors = new Map<string, number>(); // per-section end of last accepted range
    const names = new Set<string>();
    for (const sym of ordered) {
        if (sym.size === 0) {
            skipped.push({ name: sym.name, reason: "zero-size" });
        } else if (sym.binding === "l") {
            skipped.push({ name: sym.name, reason: "local-bound" });
        } else if (sym.vaddr < (cursors.get(sym.section) ?? 0)) {
            skipped.push({ name: sym.name, reason: "overlapping" });
        } else if (names.has(sym.name)) {
            skipped.push({ name: sym.name, reason: "duplicate-name" });
        } else {
            accepted.push(sym);
            names.add(sym.name);
            cursors.set(sym.section, sym.vaddr + sym.size);
        }
    }

    const disasm = readDisassembly(binaryPath);
    const data = readDataSections(binaryPath);

    const emittedNames = new Set(accepted.map((s) => s.name));
    const definedNames = new Set(symbols.map((s) => s.name));
    const records: FunctionRecord[] = [];
    let complete = true;
    for (const sym of accepted) {
        const insns = slice(disasm.get(sym.section), sym);
        if (insns.length === 0) {
            skipped.push({ name: sym.name, reason: "no-disassembly" });
            complete = false;
            continue;
        }
        records.push(buildRecord(binaryId, sym, insns, emittedNames, definedNames, data, backend));
    }
    fillCallers(records);

    const lines = records.map((r) => JSON.stringify(r)).join("\n");
    fs.writeFileSync(outPath, lines + (records.length ? "\n" : ""));

    const report: ExtractionReport = {
        binary_id: binaryId,
        backend,
        emitted: records.map((r) => r.name),
        skipped,
        total_function_symbols: symbols.length,
    };
    return { report, complete };
}

function slice(insns: Insn[] | undefined, sym: SymbolRow): Insn[] {
    if (!insns) return [];
    const end = sym.vaddr + sym.size;
    return insns.filter((i) => i.addr >= sym.vaddr && i.addr < end);
}

function buildRecord(
    binaryId: string,
    sym: SymbolRow,
    insns: Insn[],
    emitted: Set<string>,
    defined: Set<string>,
    data: Map<string, SectionBytes>,
    backend: BackendInfo,
): FunctionRecord {
    const callees = new Set<string>();
    const dynamic = new Set<string>();
    const constants: (number | string)[] = [];
    const seenConst = new Set<string>();
    const pushConst = (c: number | string) => {
        const key = typeof c + ":" + c;
        if (!seenConst.has(key)) {
            seenConst.add(key);
            constants.push(c);
        }
    };

    let stackBytes = 0;
    for (const insn of insns) {
        if (insn.mnemonic === "call") {
            const target = calleeName(insn);
            if (target) {
                if (emitted.has(target)) callees.add(target);
                else if (!defined.has(target)) dynamic.add(target);
                // calls into skipped symbols are dropped: records may
                // only reference emitted or external identifiers
            }
        }
        for (const m of insn.text.matchAll(/\$0x([0-9a-f]+)/g)) {
            const v = parseInt(m[1], 16);
            if (v <= MAX_SAFE) pushConst(v);
        }
        const s = stringConstant(insn, data);
        if (s !== null) pushConst(s);
        if (!stackBytes && insn.mnemonic === "sub") {
            const m = insn.text.match(/^sub\s+\$0x([0-9a-f]+),%[er]sp$/);
            if (m) {
                const v = parseInt(m[1], 16);
                if (v <= MAX_SAFE) stackBytes = v;
            }
        }
    }

    const [nodes, edges] = basicBlocks(insns, sym);
    return {
        binary_id: binaryId,
        name: sym.name,
        vaddr: sym.vaddr,
        size: sym.size,
        opcodes: insns.map((i) => i.mnemonic),
        callers: [],
        callees: [...callees].sort(),
        dynamic_callees: [...dynamic].sort(),
        constants,
        stack_bytes: stackBytes,
        heap_bytes: 0,
        tls_bytes: 0,
        num_args: 0,
        local_bytes: 0,
        taint: zeroTaint(),
        cfg_nodes: nodes,
        cfg_edges: edges,
        backend,
    };
}

function calleeName(insn: Insn): string | null {
    if (!insn.callTarget) return null;
    // a call into the middle of a symbol is a placeholder address in a
    // relocatable file or a computed target, never a clean call edge
    if (insn.targetOffset !== 0) return null;
    let name = insn.callTarget;
    name = name.replace(/@.*$/, ""); // printf@plt, memcpy@GLIBC_2.14
    if (!name || name.startsWith(".")) return null; // section-relative
    return name;
}

// A string constant is a NUL-terminated printable ASCII run referenced
// through a resolved data address (linked binaries) or a section
// relocation (relocatable objects), at most MAX_STRING_CONST bytes.
function stringConstant(insn: Insn, data: Map<string, SectionBytes>): string | null {
    if (insn.mnemonic !== "lea" && insn.mnemonic !== "mov") return null;
    if (!insn.callTarget) return null;
    if (insn.callTarget.startsWith(".")) {
        const sec = data.get(insn.callTarget);
        if (!sec) return null;
        return stringAt(sec.bytes, insn.targetOffset);
    }
    if (insn.targetAddr === null) return null;
    // the annotated hex address is already absolute; the +0x offset in
    // the symbolic part only re-expresses it relative to a symbol
    const addr = insn.targetAddr;
    for (const [name, sec] of data) {
        if (!name.startsWith(".rodata")) continue;
        if (addr >= sec.addr && addr < sec.addr + sec.bytes.length) {
            return stringAt(sec.bytes, addr - sec.addr);
        }
    }
    return null;
}

function stringAt(bytes: Buffer, offset: number): string | null {
    if (offset < 0 || offset >= bytes.length) return null;
    let end = offset;
    while (end < bytes.length && bytes[end] !== 0) {
        const b = bytes[end];
        const printable = (b >= 0x20 && b <= 0x7e) || b === 0x09 || b === 0x0a || b === 0x0d;
        if (!printable) return null;
        end++;
        if (end - offset > MAX_STRING_CONST) return null;
    }
    if (end === offset || end === bytes.length) return null;
    return bytes.toString("latin1", offset, end);
}

// Linear-sweep basic blocks: leaders are the entry, every internal jump
// target, and every instruction after a jump. Edges count internal jump
// targets plus fall-throughs from blocks that do not end in an
// unconditional transfer.
function basicBlocks(insns: Insn[], sym: SymbolRow): [number, number] {
    const end = sym.vaddr + sym.size;
    const addrs = new Set(insns.map((i) => i.addr));
    const leaders = new Set<number>([insns[0].addr]);
    insns.forEach((insn, idx) => {
        if (!insn.mnemonic.startsWith("j")) return;
        if (insn.targetAddr !== null
            && insn.targetAddr >= sym.vaddr && insn.targetAddr < end
            && addrs.has(insn.targetAddr)) {
            leaders.add(insn.targetAddr);
        }
        if (idx + 1 < insns.length) leaders.add(insns[idx + 1].addr);
    });
    let edges = 0;
    insns.forEach((insn, idx) => {
        const last = idx + 1 === insns.length || leaders.has(insns[idx + 1].addr);
        if (!last) return;
        const m = insn.mnemonic;
        if (m.startsWith("j")) {
            if (insn.targetAddr !== null && leaders.has(insn.targetAddr)) {
                edges++;
            }
            if (m !== "jmp" && idx + 1 < insns.length) edges++; // fall-through
        } else if (m !== "ret" && m !== "retq" && idx + 1 < insns.length) {
            edges++;
        }
    });
    return [leaders.size, edges];
}

function fillCallers(records: FunctionRecord[]) {
    const byName = new Map(records.map((r) => [r.name, r]));
    for (const rec of records) {
        for (const callee of rec.callees) {
            const target = byName.get(callee);
            if (target && !target.callers.includes(rec.name)) {
                target.callers.push(rec.name);
            }
        }
    }
    for (const rec of records) rec.callers.sort();
}

export { BackendError };
