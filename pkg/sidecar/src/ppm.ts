/** Binary PPM (P6, maxval 255) decoding. */

export interface Raster {
  width: number;
  height: number;
  /** row-major RGB bytes, length = width * height * 3 */
  pixels: Buffer;
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);

export function decodePpm(data: Buffer): Raster {
  if (data.length < 2 || data[0] !== 0x50 || data[1] !== 0x36) {
    throw new Error("not a binary PPM (P6) payload");
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < data.length && WHITESPACE.has(data[pos])) pos += 1;
    if (pos < data.length && data[pos] === 0x23) {
      // comment runs to end of line
      while (pos < data.length && data[pos] !== 0x0a) pos += 1;
      continue;
    }
    const start = pos;
    while (pos < data.length && !WHITESPACE.has(data[pos]) && data[pos] !== 0x23) pos += 1;
    if (pos === start) throw new Error("truncated PPM header");
    const token = data.subarray(start, pos).toString("ascii");
    const value = Number(token);
    if (!Number.isInteger(value)) throw new Error(`non-numeric PPM header field ${token}`);
    fields.push(value);
  }
  pos += 1; // single whitespace byte after maxval
  const [width, height, maxval] = fields;
  if (width < 1 || height < 1) throw new Error(`bad dimensions ${width}x${height}`);
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  const expected = width * height * 3;
  const pixels = data.subarray(pos, pos + expected);
  if (pixels.length !== expected) {
    throw new Error(`expected ${expected} pixel bytes, got ${pixels.length}`);
  }
  return { width, height, pixels: Buffer.from(pixels) };
}
