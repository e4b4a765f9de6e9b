import { spawnSync } from "node:child_process";
import { readFileSync, existsSync } from "node:fs";
import { fileURLToPath } from "node:url";
import * as path from "node:path";

import { describe, expect, it } from "vitest";

import {
  errorLine,
  handshakeReply,
  parseHandshake,
  parseRequest,
  responseLine,
} from "../src/protocol.js";
import { detect } from "../src/stub.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const GOLDEN = path.join(HERE, "..", "golden");
const DIST_MAIN = path.join(HERE, "..", "dist", "main.js");


describe("protocol codec", () => {
  it("accepts only the versioned handshake", () => {
    expect(parseHandshake('{"hello":1}')).toBe(true);
    expect(parseHandshake('{"hello":2}')).toBe(false);
    expect(parseHandshake("not json")).toBe(false);
  });

  it("handshake reply carries the class list first", () => {
    expect(handshakeReply(["a", "b"])).toBe('{"hello":1,"classes":["a","b"]}');
  });

  it("rejects malformed requests with a reason", () => {
    expect(() => parseRequest("{}")).toThrow(/id/);
    expect(() => parseRequest('{"id":1,"image":42}')).toThrow(/base64/);
    expect(() => parseRequest('{"id":1,"image":"AAA"}')).toThrow(/P6|PPM/);
  });

  it("response lines use the documented field order", () => {
    const line = responseLine(3, [
      { class_id: 1, box: [0, 0, 8, 8], confidence: 0.5 },
    ]);
    expect(line).toBe('{"id":3,"detections":[{"class_id":1,"box":[0,0,8,8],"confidence":0.5}]}');
    expect(errorLine(-1, "nope")).toBe('{"id":-1,"error":"nope"}');
  });

  it("ignores unknown request fields", () => {
    const header = Buffer.from("P6\n1 1\n255\n", "ascii");
    const payload = Buffer.concat([header, Buffer.from([5, 5, 5])]).toString("base64");
    const request = parseRequest(
      JSON.stringify({ id: 7, image: payload, threshold: 0.1, debug: true }),
    );
    expect(request.id).toBe(7);
    expect(detect(request.raster, 0)).toEqual([]);
  });
});

describe("golden transcript replay", () => {
  it("replays the pinned requests to byte-identical responses", () => {
    if (!existsSync(DIST_MAIN)) {
      throw new Error("build the sidecar first: npm run build");
    }
    const requests = readFileSync(path.join(GOLDEN, "sidecar_requests.jsonl"));
    const responses = readFileSync(path.join(GOLDEN, "sidecar_responses.jsonl"));
    const input = Buffer.concat([Buffer.from('{"hello":1}\n'), requests]);
    const proc = spawnSync("node", [DIST_MAIN, "stub", "--threshold", "0.25"], {
      input,
      timeout: 30_000,
    });
    expect(proc.status).toBe(0);
    const lines = proc.stdout.toString("utf-8").split("\n");
    expect(JSON.parse(lines[0])).toEqual({ hello: 1, classes: ["red", "green", "blue"] });
    expect(Buffer.from(lines.slice(1).join("\n"))).toEqual(responses);
    expect(proc.stdout.toString()).not.toMatch(/[^\x20-\x7e\n]/); // protocol bytes only
  });

  it("keeps the session alive after a bad request line", () => {
    if (!existsSync(DIST_MAIN)) {
      throw new Error("build the sidecar first: npm run build");
    }
    const requests = readFileSync(path.join(GOLDEN, "sidecar_requests.jsonl"))
      .toString("utf-8")
      .trimEnd()
      .split("\n");
    const input = ['{"hello":1}', "this is not json", requests[0], ""].join("\n");
    const proc = spawnSync("node", [DIST_MAIN, "stub"], { input, timeout: 30_000 });
    expect(proc.status).toBe(0);
    const lines = proc.stdout.toString("utf-8").trimEnd().split("\n");
    expect(lines).toHaveLength(3);
    expect(JSON.parse(lines[1]).error).toMatch(/bad request/);
    expect(JSON.parse(lines[2]).id).toBe(0);
  });

  it("exits cleanly when the input stream closes", () => {
    if (!existsSync(DIST_MAIN)) {
      throw new Error("build the sidecar first: npm run build");
    }
    const proc = spawnSync("node", [DIST_MAIN, "stub"], { input: "", timeout: 30_000 });
    expect(proc.status).toBe(0);
    expect(proc.stdout.toString()).toBe("");
  });

  it("rejects unknown model sources", () => {
    if (!existsSync(DIST_MAIN)) {
      throw new Error("build the sidecar first: npm run build");
    }
    const proc = spawnSync("node", [DIST_MAIN, "some-onnx-model"], { input: "", timeout: 30_000 });
    expect(proc.status).toBe(1);
    expect(proc.stderr.toString()).toMatch(/unknown model source/);
  });
});
