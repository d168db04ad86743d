/**
 * Binary frame protocol shared with the python server.
 *
 * Frame: uint32 LE header length | UTF-8 JSON header | raw payloads.
 * The header's `payloads` array lists the byte length of every trailing
 * payload. Numeric arrays travel as little-endian C-order float64 (or
 * int64 for label fields), so values survive the boundary bit-exactly.
 */

export interface FrameHeader {
  [key: string]: unknown;
  payloads?: number[];
}

export interface Frame {
  header: FrameHeader;
  payloads: Buffer[];
}

export function encodeFrame(header: FrameHeader, payloads: Buffer[] = []): Buffer[] {
  const full = { ...header, payloads: payloads.map((p) => p.byteLength) };
  const blob = Buffer.from(JSON.stringify(full), "utf-8");
  const len = Buffer.allocUnsafe(4);
  len.writeUInt32LE(blob.byteLength, 0);
  // the caller's payload buffers are passed through, not copied
  return [len, blob, ...payloads];
}

/** Incremental frame parser over a byte stream. */
export class FrameDecoder {
  private chunks: Buffer[] = [];
  private size = 0;

  push(chunk: Buffer): void {
    this.chunks.push(chunk);
    this.size += chunk.byteLength;
  }

  private peek(n: number): Buffer | null {
    if (this.size < n) return null;
    if (this.chunks.length === 1) return this.chunks[0].subarray(0, n);
    const merged = Buffer.concat(this.chunks);
    this.chunks = [merged];
    return merged.subarray(0, n);
  }

  private consume(n: number): void {
    let remaining = n;
    while (remaining > 0) {
      const head = this.chunks[0];
      if (head.byteLength <= remaining) {
        remaining -= head.byteLength;
        this.chunks.shift();
      } else {
        this.chunks[0] = head.subarray(remaining);
        remaining = 0;
      }
    }
    this.size -= n;
  }

  /** Returns the next complete frame, or null until more bytes arrive. */
  next(): Frame | null {
    const lenBytes = this.peek(4);
    if (lenBytes === null) return null;
    const headerLen = lenBytes.readUInt32LE(0);
    const headBytes = this.peek(4 + headerLen);
    if (headBytes === null) return null;
    const header = JSON.parse(
      headBytes.subarray(4, 4 + headerLen).toString("utf-8"),
    ) as FrameHeader;
    const sizes = (header.payloads ?? []) as number[];
    const total = sizes.reduce((a, b) => a + b, 0);
    const whole = this.peek(4 + headerLen + total);
    if (whole === null) return null;
    const payloads: Buffer[] = [];
    let offset = 4 + headerLen;
    for (const size of sizes) {
      // standalone ArrayBuffer per payload: 8-byte aligned for typed views
      const out = Buffer.allocUnsafeSlow(size);
      whole.copy(out, 0, offset, offset + size);
      payloads.push(out);
      offset += size;
    }
    this.consume(4 + headerLen + total);
    return { header, payloads };
  }
}

export function asFloat64(buffer: Buffer): Float64Array {
  return new Float64Array(buffer.buffer, buffer.byteOffset, buffer.byteLength / 8);
}

export function float64Buffer(values: ArrayLike<number>): Buffer {
  const arr = Float64Array.from(values as number[]);
  return Buffer.from(arr.buffer);
}

export function int64Buffer(values: ArrayLike<number>): Buffer {
  const arr = new BigInt64Array(values.length);
  for (let i = 0; i < values.length; i++) arr[i] = BigInt(values[i]);
  return Buffer.from(arr.buffer);
}
