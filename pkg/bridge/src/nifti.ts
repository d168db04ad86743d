/**
 * Minimal NIfTI-1 interchange for the oracle tests: single-file .nii or
 * .nii.gz, 3D/4D, float32/float64/int32/uint8, identity-style affine.
 *
 * Logical arrays on this side are C-order (last index fastest); the file
 * stores x fastest, so read/write permute between the two layouts.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { gunzipSync } from "node:zlib";

const HEADER_SIZE = 348;

const DTYPE_CODES: Record<string, { code: number; bitpix: number }> = {
  uint8: { code: 2, bitpix: 8 },
  int32: { code: 8, bitpix: 32 },
  float32: { code: 16, bitpix: 32 },
  float64: { code: 64, bitpix: 64 },
};

export interface NiftiVolume {
  dims: number[];
  /** C-order (last index fastest) */
  data: Float64Array;
}

function fileStrides(dims: number[]): number[] {
  // x fastest on disk
  const strides = new Array(dims.length).fill(1);
  for (let i = 1; i < dims.length; i++) strides[i] = strides[i - 1] * dims[i - 1];
  return strides;
}

function cStrides(dims: number[]): number[] {
  const strides = new Array(dims.length).fill(1);
  for (let i = dims.length - 2; i >= 0; i--) strides[i] = strides[i + 1] * dims[i + 1];
  return strides;
}

function permute(
  dims: number[],
  source: (flat: number) => number,
  inStrides: number[],
  outStrides: number[],
  out: Float64Array,
): void {
  const total = dims.reduce((a, b) => a * b, 1);
  const index = new Array(dims.length).fill(0);
  for (let n = 0; n < total; n++) {
    let inFlat = 0;
    let outFlat = 0;
    for (let d = 0; d < dims.length; d++) {
      inFlat += index[d] * inStrides[d];
      outFlat += index[d] * outStrides[d];
    }
    out[outFlat] = source(inFlat);
    for (let d = 0; d < dims.length; d++) {
      index[d]++;
      if (index[d] < dims[d]) break;
      index[d] = 0;
    }
  }
}

export function readNifti(path: string): NiftiVolume {
  let raw = readFileSync(path);
  if (raw[0] === 0x1f && raw[1] === 0x8b) raw = gunzipSync(raw);
  if (raw.readInt32LE(0) !== HEADER_SIZE) {
    throw new Error(`${path}: not a little-endian NIfTI-1 file`);
  }
  const ndim = raw.readInt16LE(40);
  if (ndim < 3 || ndim > 4) throw new Error(`${path}: unsupported dim[0]=${ndim}`);
  const dims: number[] = [];
  for (let d = 1; d <= ndim; d++) dims.push(raw.readInt16LE(40 + 2 * d));
  const code = raw.readInt16LE(70);
  const offset = Math.trunc(raw.readFloatLE(108));
  const total = dims.reduce((a, b) => a * b, 1);

  let reader: (flat: number) => number;
  switch (code) {
    case 2:
      reader = (i) => raw.readUInt8(offset + i);
      break;
    case 8:
      reader = (i) => raw.readInt32LE(offset + 4 * i);
      break;
    case 16:
      reader = (i) => raw.readFloatLE(offset + 4 * i);
      break;
    case 64:
      reader = (i) => raw.readDoubleLE(offset + 8 * i);
      break;
    default:
      throw new Error(`${path}: unsupported datatype code ${code}`);
  }
  const data = new Float64Array(total);
  permute(dims, reader, fileStrides(dims), cStrides(dims), data);
  return { dims, data };
}

export function writeNifti(
  path: string,
  dims: number[],
  data: ArrayLike<number>,
  dtype: keyof typeof DTYPE_CODES = "float64",
): void {
  const total = dims.reduce((a, b) => a * b, 1);
  if (data.length !== total) {
    throw new Error(`data length ${data.length} does not match dims ${dims}`);
  }
  const { code, bitpix } = DTYPE_CODES[dtype];
  const bytesPer = bitpix / 8;
  const header = Buffer.alloc(HEADER_SIZE + 4); // header + empty extension flag
  header.writeInt32LE(HEADER_SIZE, 0);
  header.writeInt16LE(dims.length, 40);
  for (let d = 0; d < 8; d++) {
    header.writeInt16LE(d < dims.length ? dims[d] : 1, 42 + 2 * d);
  }
  header.writeInt16LE(code, 70);
  header.writeInt16LE(bitpix, 72);
  header.writeFloatLE(1, 76); // pixdim[0] = qfac
  for (let d = 1; d <= 4; d++) header.writeFloatLE(1, 76 + 4 * d);
  header.writeFloatLE(HEADER_SIZE + 4, 108); // vox_offset
  header.writeFloatLE(1, 112); // scl_slope
  header.writeUInt8(2, 123); // mm units
  header.writeInt16LE(2, 254); // sform: aligned
  header.writeFloatLE(1, 280); // srow_x
  header.writeFloatLE(1, 300); // srow_y
  header.writeFloatLE(1, 320); // srow_z
  header.write("n+1\0", 344, "ascii");

  const body = Buffer.alloc(total * bytesPer);
  const inStrides = cStrides(dims);
  const outStrides = fileStrides(dims);
  const writeAt: (value: number, flat: number) => void =
    dtype === "float64"
      ? (v, i) => body.writeDoubleLE(v, 8 * i)
      : dtype === "float32"
        ? (v, i) => body.writeFloatLE(v, 4 * i)
        : dtype === "int32"
          ? (v, i) => body.writeInt32LE(v, 4 * i)
          : (v, i) => body.writeUInt8(v, i);
  const scratch = new Float64Array(total);
  permute(dims, (i) => data[i] as number, inStrides, outStrides, scratch);
  for (let i = 0; i < total; i++) writeAt(scratch[i], i);
  writeFileSync(path, Buffer.concat([header, body]));
}
