/**
 * Wire-format types and the raw image byte format.
 *
 * Images travel as base64 float32 payloads with shape and kind in JSON;
 * image files on disk carry a 17-byte header (magic "UFIM", kind byte,
 * three little-endian uint32 dimensions) before the payload.
 */

export interface WireImage {
  shape: [number, number, number];
  kind: 'pixel' | 'noise';
  data_b64: string;
}

export type WireInput = { image: WireImage } | { prompt: string };

export interface GenerateRequest {
  mode: 'unconditional' | 'conditional';
  inputs: WireInput[];
  seed?: number;
  num_inference_steps?: number;
}

export interface GenerateResponse {
  images: WireImage[];
  model_id: string;
}

const MAGIC = 'UFIM';
const HEADER_SIZE = 17;

export class WireError extends Error {}

export function decodePayload(image: WireImage): Float32Array {
  const [h, w, c] = image.shape;
  const raw = Buffer.from(image.data_b64, 'base64');
  if (raw.length !== h * w * c * 4) {
    throw new WireError(
      `payload has ${raw.length} bytes, shape ${h}x${w}x${c} needs ${h * w * c * 4}`);
  }
  const out = new Float32Array(h * w * c);
  const view = new DataView(raw.buffer, raw.byteOffset, raw.byteLength);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getFloat32(i * 4, true);
  }
  return out;
}

export function encodePayload(values: Float32Array): string {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i], i * 4);
  }
  return buf.toString('base64');
}

export interface ImageFile {
  shape: [number, number, number];
  kind: 'pixel' | 'noise';
  values: Float32Array;
}

export function parseImageFile(blob: Buffer): ImageFile {
  if (blob.length < HEADER_SIZE) {
    throw new WireError('image file shorter than header');
  }
  if (blob.subarray(0, 4).toString('ascii') !== MAGIC) {
    throw new WireError('bad image file magic');
  }
  const kindByte = blob.readUInt8(4);
  if (kindByte !== 0 && kindByte !== 1) {
    throw new WireError(`bad image kind byte ${kindByte}`);
  }
  const h = blob.readUInt32LE(5);
  const w = blob.readUInt32LE(9);
  const c = blob.readUInt32LE(13);
  const expected = HEADER_SIZE + h * w * c * 4;
  if (blob.length !== expected) {
    throw new WireError(`image file has ${blob.length} bytes, expected ${expected}`);
  }
  const values = new Float32Array(h * w * c);
  for (let i = 0; i < values.length; i++) {
    values[i] = blob.readFloatLE(HEADER_SIZE + i * 4);
  }
  return { shape: [h, w, c], kind: kindByte === 0 ? 'pixel' : 'noise', values };
}

/** Deterministic JSON bytes: keys sorted recursively, no whitespace. */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== 'object') {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return '[' + value.map(canonicalJson).join(',') + ']';
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .filter(([, v]) => v !== undefined)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
  return '{' + entries.map(([k, v]) => JSON.stringify(k) + ':' + canonicalJson(v)).join(',') + '}';
}

export function validateGenerateRequest(body: unknown): GenerateRequest {
  if (typeof body !== 'object' || body === null || Array.isArray(body)) {
    throw new WireError('request body must be a JSON object');
  }
  const obj = body as Record<string, unknown>;
  if (obj.mode !== 'unconditional' && obj.mode !== 'conditional') {
    throw new WireError(`mode must be 'unconditional' or 'conditional', got ${JSON.stringify(obj.mode)}`);
  }
  if (!Array.isArray(obj.inputs) || obj.inputs.length === 0) {
    throw new WireError('inputs must be a non-empty list');
  }
  const inputs: WireInput[] = [];
  obj.inputs.forEach((entry, i) => {
    if (typeof entry !== 'object' || entry === null) {
      throw new WireError(`inputs[${i}] must be an object`);
    }
    const input = entry as Record<string, unknown>;
    if (obj.mode === 'unconditional') {
      const image = validateWireImage(input.image, `inputs[${i}].image`);
      if (image.kind !== 'noise') {
        throw new WireError(`inputs[${i}].image must have kind='noise'`);
      }
      inputs.push({ image });
    } else {
      if (typeof input.prompt !== 'string' || input.prompt.trim() === '') {
        throw new WireError(`inputs[${i}] needs a non-empty 'prompt' in conditional mode`);
      }
      inputs.push({ prompt: input.prompt });
    }
  });
  const seed = obj.seed;
  if (seed !== undefined && (!Number.isInteger(seed) || (seed as number) < 0)) {
    throw new WireError('seed must be a non-negative integer');
  }
  const steps = obj.num_inference_steps;
  if (steps !== undefined && (!Number.isInteger(steps) || (steps as number) <= 0)) {
    throw new WireError('num_inference_steps must be a positive integer');
  }
  return {
    mode: obj.mode,
    inputs,
    seed: seed as number | undefined,
    num_inference_steps: steps as number | undefined,
  };
}

function validateWireImage(value: unknown, where: string): WireImage {
  if (typeof value !== 'object' || value === null) {
    throw new WireError(`${where} must be an object`);
  }
  const obj = value as Record<string, unknown>;
  const shape = obj.shape;
  if (!Array.isArray(shape) || shape.length !== 3
      || !shape.every((d) => Number.isInteger(d) && (d as number) > 0)) {
    throw new WireError(`${where}.shape must be three positive integers`);
  }
  if (obj.kind !== 'pixel' && obj.kind !== 'noise') {
    throw new WireError(`${where}.kind must be 'pixel' or 'noise'`);
  }
  if (typeof obj.data_b64 !== 'string') {
    throw new WireError(`${where}.data_b64 must be a base64 string`);
  }
  const image: WireImage = {
    shape: shape as [number, number, number],
    kind: obj.kind,
    data_b64: obj.data_b64,
  };
  decodePayload(image); // length check
  return image;
}
