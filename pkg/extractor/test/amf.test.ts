import { describe, expect, it } from 'vitest';
import { mkdtempSync } from 'fs';
import { tmpdir } from 'os';
import path from 'path';

import { decodeAmf, encodeAmf, readAmf, writeAmf } from '../src/amf.js';

function sampleMap(h = 2, w = 3, c = 4, nonneg = false) {
  const values = new Float32Array(h * w * c);
  for (let i = 0; i < values.length; i++) {
    values[i] = nonneg ? i * 0.5 : (i - 5) * 0.5;
  }
  return { height: h, width: w, channels: c, nonneg, values };
}

describe('AMF encoding', () => {
  it('writes the documented header layout', () => {
    const buf = encodeAmf(sampleMap());
    expect(buf.toString('ascii', 0, 4)).toBe('U1AM');
    expect(buf.readUInt32LE(4)).toBe(1); // version
    expect(buf.readUInt32LE(8)).toBe(2); // H
    expect(buf.readUInt32LE(12)).toBe(3); // W
    expect(buf.readUInt32LE(16)).toBe(4); // C
    expect(buf.readUInt8(20)).toBe(0); // nonneg
    expect(buf.readUInt8(21)).toBe(0); // reserved
    expect(buf.length).toBe(24 + 2 * 3 * 4 * 4);
  });

  it('payload is float32 little-endian in raster order', () => {
    const map = sampleMap(1, 1, 3);
    map.values.set([1.5, -2.25, 8.0]);
    const buf = encodeAmf(map);
    expect(buf.readFloatLE(24)).toBe(1.5);
    expect(buf.readFloatLE(28)).toBe(-2.25);
    expect(buf.readFloatLE(32)).toBe(8.0);
  });

  it('round-trips bit-exactly', async () => {
    const dir = mkdtempSync(path.join(tmpdir(), 'amf-'));
    const map = sampleMap(3, 2, 5, true);
    const file = path.join(dir, 'x.amf');
    await writeAmf(file, map);
    const loaded = await readAmf(file);
    expect(loaded.height).toBe(3);
    expect(loaded.width).toBe(2);
    expect(loaded.channels).toBe(5);
    expect(loaded.nonneg).toBe(true);
    expect(Array.from(loaded.values)).toEqual(Array.from(map.values));
  });

  it('rejects non-finite values', () => {
    const map = sampleMap();
    map.values[3] = Number.NaN;
    expect(() => encodeAmf(map)).toThrow(/non-finite/);
  });

  it('rejects negative values when nonneg is set', () => {
    const map = sampleMap(1, 1, 2, true);
    map.values.set([1.0, -0.5]);
    expect(() => encodeAmf(map)).toThrow(/negative/);
  });

  it('rejects zero dimensions', () => {
    expect(() => encodeAmf({
      height: 0, width: 1, channels: 1, nonneg: false,
      values: new Float32Array(0),
    })).toThrow(/zero dimension/);
  });

  it('detects bad magic and truncation on read', () => {
    const good = encodeAmf(sampleMap());
    const badMagic = Buffer.from(good);
    badMagic.write('XXXX', 0, 'ascii');
    expect(() => decodeAmf(badMagic)).toThrow(/magic/);
    expect(() => decodeAmf(good.subarray(0, good.length - 2)))
      .toThrow(/truncated payload/);
  });
});
