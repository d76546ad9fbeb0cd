// Shapes shared between the backend driver and the extraction logic.
// FunctionRecord mirrors the corpus JSONL contract of the fnlabel
// package; the extra "backend" field rides along as adapter provenance
// (the validator ignores unknown fields).

export interface TaintInfo {
    reg_onehot: number[];
    heap_bytes: number;
    stack_bytes: number;
    arg_bytes: number;
    cond_jumps: number;
    flows: number;
}

export interface FunctionRecord {
    binary_id: string;
    name: string;
    vaddr: number;
    size: number;
    opcodes: string[];
    callers: string[];
    callees: string[];
    dynamic_callees: string[];
    constants: (number | string)[];
    stack_bytes: number;
    heap_bytes: number;
    tls_bytes: number;
    num_args: number;
    local_bytes: number;
    taint: TaintInfo;
    cfg_nodes: number;
    cfg_edges: number;
    backend: BackendInfo;
}

export interface BackendInfo {
    name: string;
    version: string;
}

export type SkipReason =
    | "zero-size"
    | "local-bound"
    | "overlapping"
    | "duplicate-name"
    | "no-disassembly";

export interface SkippedSymbol {
    name: string;
    reason: SkipReason;
}

export interface ExtractionReport {
    binary_id: string;
    backend: BackendInfo;
    emitted: string[];
    skipped: SkippedSymbol[];
    // every defined function symbol in the symbol table lands in
    // exactly one of the two lists above
    total_function_symbols: number;
}

export function zeroTaint(): TaintInfo {
    return {
        reg_onehot: [0, 0, 0, 0, 0, 0, 0, 0],
        heap_bytes: 0,
        stack_bytes: 0,
        arg_bytes: 0,
        cond_jumps: 0,
        flows: 0,
    };
}
