/**
 * Minimal binary PGM (P5) decoder. Synthetic datasets store images and
 * masks in this format, which browsers cannot display natively.
 */
export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major, one byte per pixel
}

export function parsePgm(data: Uint8Array): GrayImage {
  const reader = new TokenReader(data);
  if (reader.token() !== "P5") throw new Error("not a binary PGM (missing P5 magic)");
  const width = reader.int();
  const height = reader.int();
  const maxval = reader.int();
  if (maxval <= 0 || maxval > 255) {
    throw new Error(`unsupported PGM maxval ${maxval}`);
  }
  // exactly one whitespace byte separates the header from pixel data
  const start = reader.pos + 2;
  const expected = width * height;
  if (data.length - start < expected) {
    throw new Error(`PGM truncated: expected ${expected} pixels`);
  }
  let pixels = data.subarray(start, start + expected);
  if (maxval !== 255) {
    const scaled = new Uint8Array(expected);
    for (let i = 0; i < expected; i++) {
      scaled[i] = Math.round((pixels[i] * 255) / maxval);
    }
    pixels = scaled;
  }
  return { width, height, pixels: new Uint8Array(pixels) };
}

class TokenReader {
  pos = -1;

  constructor(private readonly data: Uint8Array) {}

  /** Next whitespace-delimited token, skipping '#' comment lines. */
  token(): string {
    let i = this.pos + 1;
    const n = this.data.length;
    while (i < n) {
      const c = this.data[i];
      if (c === 0x23) {
        // comment runs to end of line
        while (i < n && this.data[i] !== 0x0a) i++;
        i++;
      } else if (c === 0x20 || c === 0x09 || c === 0x0a || c === 0x0d) {
        i++;
      } else {
        break;
      }
    }
    const start = i;
    while (i < n && !this.isSpace(this.data[i])) i++;
    if (start === i) throw new Error("PGM header ended early");
    this.pos = i - 1;
    return new TextDecoder().decode(this.data.subarray(start, i));
  }

  int(): number {
    const tok = this.token();
    const value = Number(tok);
    if (!Number.isInteger(value) || value < 0) {
      throw new Error(`bad PGM header token ${JSON.stringify(tok)}`);
    }
    return value;
  }

  private isSpace(c: number): boolean {
    return c === 0x20 || c === 0x09 || c === 0x0a || c === 0x0d;
  }
}
