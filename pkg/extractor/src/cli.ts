#!/usr/bin/env node
// extract <binary> -o out.corpus [--backend NAME]
//
// Writes one corpus JSONL record per emitted function and prints the
// extraction report as JSON on stdout. Exit codes: 0 everything
// emitted, 1 some functions failed recoverably, 2 nothing usable.

import { BackendError, ExtractError, extract } from "./extract";

function usage(): never {
    process.stderr.write(
        "usage: extract <binary> -o <out.corpus> [--backend NAME]\n");
    process.exit(2);
}

export function main(argv: string[]): number {
    let binary: string | null = null;
    let out: string | null = null;
    let backend = "objdump";
    for (let i = 0; i < argv.length; i++) {
        const arg = argv[i];
        if (arg === "-o" || arg === "--out") {
            out = argv[++i] ?? usage();
        } else if (arg === "--backend") {
            backend = argv[++i] ?? usage();
        } else if (arg === "-h" || arg === "--help") {
            usage();
        } else if (arg.startsWith("-")) {
            usage();
        } else if (binary === null) {
            binary = arg;
        } else {
            usage();
        }
    }
    if (binary === null || out === null) usage();

    try {
        const { report, complete } = extract(binary, out, backend);
        process.stdout.write(JSON.stringify(report, null, 2) + "\n");
        process.stderr.write(
            `${report.binary_id}: ${report.emitted.length} emitted, `
            + `${report.skipped.length} skipped `
            + `(${report.backend.name} ${report.backend.version})\n`);
        return complete ? 0 : 1;
    } catch (err) {
        if (err instanceof ExtractError || err instanceof BackendError) {
            process.stderr.write(`error: ${err.message}\n`);
            return 2;
        }
        throw err;
    }
}

if (require.main === module) {
    process.exit(main(process.argv.slice(2)));
}
