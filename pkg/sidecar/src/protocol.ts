/**
 * Wire protocol: one compact JSON object per line over stdio, UTF-8.
 *
 *   client -> {"hello":1}
 *   server -> {"hello":1,"classes":[...]}
 *   client -> {"id":0,"image":"<base64 PPM P6>","threshold":0.3}
 *   server -> {"id":0,"detections":[{"class_id":0,"box":[x,y,w,h],"confidence":0.9}]}
 *
 * Unknown fields are ignored. Malformed requests produce
 * {"id":<id or -1>,"error":"..."} and the session continues. Only
 * protocol bytes go to stdout; logs belong on stderr.
 */

import { decodePpm, Raster } from "./ppm.js";
import { Detection } from "./stub.js";

export const PROTOCOL_VERSION = 1;

export interface Request {
  id: number;
  raster: Raster;
  threshold: number;
}

export function parseHandshake(line: string): boolean {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return false;
  }
  return (
    typeof obj === "object" && obj !== null &&
    (obj as Record<string, unknown>).hello === PROTOCOL_VERSION
  );
}

export function handshakeReply(classes: string[]): string {
  return JSON.stringify({ hello: PROTOCOL_VERSION, classes });
}

export function parseRequest(line: string): Request {
  let obj: Record<string, unknown>;
  try {
    obj = JSON.parse(line) as Record<string, unknown>;
  } catch (err) {
    throw new Error(`invalid JSON: ${(err as Error).message}`);
  }
  if (typeof obj !== "object" || obj === null) throw new Error("request is not an object");
  const id = obj.id;
  if (!Number.isInteger(id)) throw new Error("request id must be an integer");
  if (typeof obj.image !== "string") throw new Error("request image must be a base64 string");
  const threshold = typeof obj.threshold === "number" ? obj.threshold : 0;
  const raster = decodePpm(Buffer.from(obj.image, "base64"));
  return { id: id as number, raster, threshold };
}

export function responseLine(id: number, detections: Detection[]): string {
  return JSON.stringify({
    id,
    detections: detections.map((d) => ({
      class_id: d.class_id,
      box: d.box,
      confidence: d.confidence,
    })),
  });
}

export function errorLine(id: number, message: string): string {
  return JSON.stringify({ id, error: message });
}

export function requestIdOrMinusOne(line: string): number {
  try {
    const obj = JSON.parse(line) as Record<string, unknown>;
    if (typeof obj === "object" && obj !== null && Number.isInteger(obj.id)) {
      return obj.id as number;
    }
  } catch {
    /* fall through */
  }
  return -1;
}
