#!/usr/bin/env node
/**
 * Reference oracle sidecar.
 *
 * Usage: main.js <model-source> [--threshold 0.3]
 *
 * The only built-in model source is "stub", the deterministic color-blob
 * detector, so conformance runs need no ML dependency. Wrapping a real
 * locally available detector means adding a new model source that maps a
 * Raster to Detection[] with the same signature as the stub.
 */

import * as readline from "node:readline";

import {
  errorLine,
  handshakeReply,
  parseHandshake,
  parseRequest,
  requestIdOrMinusOne,
  responseLine,
} from "./protocol.js";
import { detect, STUB_CLASSES } from "./stub.js";

function parseArgs(argv: string[]): { source: string; threshold: number } {
  if (argv.length < 1) {
    throw new Error("usage: main.js <model-source> [--threshold T]");
  }
  const source = argv[0];
  let threshold = 0.3;
  for (let i = 1; i < argv.length; i += 1) {
    if (argv[i] === "--threshold") {
      threshold = Number(argv[i + 1]);
      i += 1;
      if (!Number.isFinite(threshold)) throw new Error("--threshold needs a number");
    } else {
      throw new Error(`unknown argument ${argv[i]}`);
    }
  }
  return { source, threshold };
}

async function main(): Promise<number> {
  let options: { source: string; threshold: number };
  try {
    options = parseArgs(process.argv.slice(2));
  } catch (err) {
    process.stderr.write(`${(err as Error).message}\n`);
    return 1;
  }
  if (options.source !== "stub") {
    process.stderr.write(`unknown model source ${options.source}; only "stub" is built in\n`);
    return 1;
  }

  const emit = (line: string) => process.stdout.write(line + "\n");
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  let handshaken = false;
  for await (const rawLine of rl) {
    const line = rawLine.trim();
    if (!line) continue;
    if (!handshaken) {
      if (!parseHandshake(line)) {
        emit(errorLine(-1, "handshake must be {\"hello\":1}"));
        continue;
      }
      handshaken = true;
      emit(handshakeReply(STUB_CLASSES));
      continue;
    }
    try {
      const request = parseRequest(line);
      const threshold = Math.max(options.threshold, request.threshold);
      emit(responseLine(request.id, detect(request.raster, threshold)));
    } catch (err) {
      emit(errorLine(requestIdOrMinusOne(line), `bad request: ${(err as Error).message}`));
      process.stderr.write(`request rejected: ${(err as Error).message}\n`);
    }
  }
  return 0;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(`fatal: ${err}\n`);
    process.exit(1);
  },
);
