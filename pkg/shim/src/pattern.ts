/**
 * Deterministic patch-aligned binary patterns from a SHA-256 byte stream.
 *
 * This is the byte-level contract shared with the firewall's test fixtures:
 *   key    = SHA256("ufid-shim" || le64(configSeed) || le64(requestSeed) || content)
 *   stream = SHA256(key || le32(0)) || SHA256(key || le32(1)) || ...
 *   cells  = first 16*C stream bytes, cell = byte < 128 ? 1.0 : 0.0
 * Pixels are constant across each cell of the 4x4 patch grid per channel.
 */

import { createHash } from 'node:crypto';

const GRID = 4;

function le64(value: number): Buffer {
  const buf = Buffer.alloc(8);
  buf.writeBigUInt64LE(BigInt(value));
  return buf;
}

function le32(value: number): Buffer {
  const buf = Buffer.alloc(4);
  buf.writeUInt32LE(value);
  return buf;
}

export function streamBytes(key: Buffer, count: number): Buffer {
  const blocks: Buffer[] = [];
  let produced = 0;
  for (let block = 0; produced < count; block++) {
    const digest = createHash('sha256').update(key).update(le32(block)).digest();
    blocks.push(digest);
    produced += digest.length;
  }
  return Buffer.concat(blocks).subarray(0, count);
}

export function patternCells(
  configSeed: number, requestSeed: number, content: Buffer, channels: number,
): Float32Array {
  const key = createHash('sha256')
    .update('ufid-shim')
    .update(le64(configSeed))
    .update(le64(requestSeed))
    .update(content)
    .digest();
  const raw = streamBytes(key, GRID * GRID * channels);
  const cells = new Float32Array(raw.length);
  for (let i = 0; i < raw.length; i++) {
    cells[i] = raw[i] < 128 ? 1.0 : 0.0;
  }
  return cells;
}

export function patternImage(
  configSeed: number, requestSeed: number, content: Buffer,
  shape: [number, number, number],
): Float32Array {
  const [h, w, c] = shape;
  if (h % GRID !== 0 || w % GRID !== 0) {
    throw new Error(`pattern shape must be divisible by ${GRID}, got ${h}x${w}`);
  }
  const cells = patternCells(configSeed, requestSeed, content, c);
  const ph = h / GRID;
  const pw = w / GRID;
  const out = new Float32Array(h * w * c);
  let k = 0;
  for (let i = 0; i < h; i++) {
    for (let j = 0; j < w; j++) {
      for (let ch = 0; ch < c; ch++) {
        out[k++] = cells[Math.floor(i / ph) * GRID * c + Math.floor(j / pw) * c + ch];
      }
    }
  }
  return out;
}
