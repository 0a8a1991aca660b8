/**
 * AMF (activation map file) writer/reader.
 *
 * Layout: magic "U1AM", version u32 = 1, H u32, W u32, C u32, nonneg u8,
 * 3 reserved bytes, then H*W*C float32 little-endian in row-major
 * (row, col, channel) order. This is the wire format the classification
 * engine ingests; keep byte-compatible with its loader.
 */

import { promises as fs } from 'fs';

export const AMF_MAGIC = 'U1AM';
export const AMF_VERSION = 1;
const HEADER_BYTES = 24;

export interface ActivationMap {
  height: number;
  width: number;
  channels: number;
  nonneg: boolean;
  values: Float32Array; // length height*width*channels, raster order
}

export function encodeAmf(map: ActivationMap): Buffer {
  const { height, width, channels, values } = map;
  if (height < 1 || width < 1 || channels < 1) {
    throw new Error(`zero dimension in activation map: ${height}x${width}x${channels}`);
  }
  if (values.length !== height * width * channels) {
    throw new Error(
      `payload length ${values.length} != ${height}*${width}*${channels}`,
    );
  }
  for (let i = 0; i < values.length; i++) {
    if (!Number.isFinite(values[i])) {
      throw new Error(`non-finite activation at index ${i}`);
    }
    if (map.nonneg && values[i] < 0) {
      throw new Error(`nonneg map contains negative value at index ${i}`);
    }
  }
  const buf = Buffer.alloc(HEADER_BYTES + values.length * 4);
  buf.write(AMF_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(AMF_VERSION, 4);
  buf.writeUInt32LE(height, 8);
  buf.writeUInt32LE(width, 12);
  buf.writeUInt32LE(channels, 16);
  buf.writeUInt8(map.nonneg ? 1 : 0, 20);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i], HEADER_BYTES + i * 4);
  }
  return buf;
}

export async function writeAmf(path: string, map: ActivationMap): Promise<void> {
  await fs.writeFile(path, encodeAmf(map));
}

export function decodeAmf(buf: Buffer): ActivationMap {
  if (buf.length < HEADER_BYTES) {
    throw new Error(`truncated header (${buf.length} bytes)`);
  }
  if (buf.toString('ascii', 0, 4) !== AMF_MAGIC) {
    throw new Error(`bad magic bytes ${JSON.stringify(buf.toString('ascii', 0, 4))}`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== AMF_VERSION) {
    throw new Error(`unsupported version ${version}`);
  }
  const height = buf.readUInt32LE(8);
  const width = buf.readUInt32LE(12);
  const channels = buf.readUInt32LE(16);
  const nonneg = buf.readUInt8(20) === 1;
  const expected = height * width * channels * 4;
  if (buf.length - HEADER_BYTES !== expected) {
    throw new Error(
      `truncated payload (${buf.length - HEADER_BYTES} bytes, expected ${expected})`,
    );
  }
  const values = new Float32Array(height * width * channels);
  for (let i = 0; i < values.length; i++) {
    values[i] = buf.readFloatLE(HEADER_BYTES + i * 4);
  }
  return { height, width, channels, nonneg, values };
}

export async function readAmf(path: string): Promise<ActivationMap> {
  return decodeAmf(await fs.readFile(path));
}
