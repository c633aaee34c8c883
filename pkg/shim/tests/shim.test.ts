import { readFileSync } from 'node:fs';
import { AddressInfo } from 'node:net';
import { Server } from 'node:http';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { patternImage } from '../src/pattern';
import { DEFAULT_CONFIG, ShimConfig, createApp } from '../src/server';
import {
  canonicalJson,
  decodePayload,
  encodePayload,
  parseImageFile,
  validateGenerateRequest,
  WireError,
} from '../src/wire';

const FIXTURES = join(__dirname, '..', '..', 'fixtures');

function startServer(config: ShimConfig): Promise<{ server: Server; url: string }> {
  const app = createApp(config);
  return new Promise((resolve) => {
    const server = app.listen(0, '127.0.0.1', () => {
      const port = (server.address() as AddressInfo).port;
      resolve({ server, url: `http://127.0.0.1:${port}` });
    });
  });
}

describe('wire format', () => {
  it('encodes and decodes float32 payloads', () => {
    const values = new Float32Array([0.5, -1.25, 0.0, 2.0]);
    const image = { shape: [2, 2, 1] as [number, number, number], kind: 'noise' as const,
                    data_b64: encodePayload(values) };
    expect(Array.from(decodePayload(image))).toEqual([0.5, -1.25, 0.0, 2.0]);
  });

  it('parses the recorded binary image files', () => {
    const trigger = parseImageFile(readFileSync(join(FIXTURES, 'trigger_image.bin')));
    const target = parseImageFile(readFileSync(join(FIXTURES, 'target_image.bin')));
    expect(trigger.kind).toBe('noise');
    expect(target.kind).toBe('pixel');
    expect(trigger.shape).toEqual([8, 8, 3]);
    expect(new Set(Array.from(trigger.values))).toEqual(new Set([1, -1]));
  });

  it('canonical JSON sorts keys and drops whitespace', () => {
    expect(canonicalJson({ b: 1, a: [2, { d: 3, c: 4 }] }))
      .toBe('{"a":[2,{"c":4,"d":3}],"b":1}');
  });

  it('rejects malformed requests', () => {
    expect(() => validateGenerateRequest({ mode: 'sideways', inputs: [] }))
      .toThrow(WireError);
    expect(() => validateGenerateRequest({ mode: 'conditional', inputs: [] }))
      .toThrow(WireError);
    expect(() => validateGenerateRequest({
      mode: 'unconditional',
      inputs: [{ image: { shape: [2, 2, 1], kind: 'noise', data_b64: 'AAA=' } }],
    })).toThrow(/payload/);
  });
});

describe('scripted_echo conformance', () => {
  let server: Server;
  let url: string;

  beforeAll(async () => {
    ({ server, url } = await startServer({
      ...DEFAULT_CONFIG,
      generator: 'scripted_echo',
      shape: [4, 4, 1],
    }));
  });

  afterAll(() => new Promise<void>((resolve) => server.close(() => resolve())));

  it('reproduces the golden response bytes for the golden request', async () => {
    const request = readFileSync(join(FIXTURES, 'generate_request.json'));
    const expected = readFileSync(join(FIXTURES, 'generate_response.json'));
    const resp = await fetch(url + '/v1/generate', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: request,
    });
    expect(resp.status).toBe(200);
    const body = Buffer.from(await resp.arrayBuffer());
    expect(body.equals(expected)).toBe(true);
  });

  it('is deterministic and input-sensitive', async () => {
    const make = (values: number[]) => ({
      mode: 'unconditional',
      inputs: [{ image: { shape: [2, 2, 1], kind: 'noise',
                          data_b64: encodePayload(new Float32Array(values)) } }],
      seed: 3,
    });
    const post = async (body: unknown) => {
      const resp = await fetch(url + '/v1/generate', {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(body),
      });
      return resp.text();
    };
    const a1 = await post(make([1, 2, 3, 4]));
    const a2 = await post(make([1, 2, 3, 4]));
    const b = await post(make([1, 2, 3, 5]));
    expect(a1).toBe(a2);
    expect(b).not.toBe(a1);
  });

  it('answers 400 with an error field on schema violations', async () => {
    const resp = await fetch(url + '/v1/generate', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ mode: 'unconditional', inputs: [{ prompt: 'x' }] }),
    });
    expect(resp.status).toBe(400);
    const body = await resp.json();
    expect(typeof body.error).toBe('string');
  });

  it('answers 400 on malformed shape', async () => {
    const resp = await fetch(url + '/v1/generate', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({
        mode: 'unconditional',
        inputs: [{ image: { shape: [2, 2], kind: 'noise', data_b64: '' } }],
      }),
    });
    expect(resp.status).toBe(400);
  });

  it('answers 400 on undecodable JSON', async () => {
    const resp = await fetch(url + '/v1/generate', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: '{nope',
    });
    expect(resp.status).toBe(400);
  });
});

describe('scripted_trigger mode', () => {
  let server: Server;
  let url: string;
  const shape: [number, number, number] = [8, 8, 3];

  beforeAll(async () => {
    ({ server, url } = await startServer({
      generator: 'scripted_trigger',
      shape,
      configSeed: 0,
      triggerThreshold: 0.5,
      triggerToken: 'mignneko',
      triggerPath: join(FIXTURES, 'trigger_image.bin'),
      targetPath: join(FIXTURES, 'target_image.bin'),
    }));
  });

  afterAll(() => new Promise<void>((resolve) => server.close(() => resolve())));

  const post = async (body: unknown) => {
    const resp = await fetch(url + '/v1/generate', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    return { status: resp.status, body: await resp.json() };
  };

  it('returns the target image payload when the prompt carries the trigger', async () => {
    const { status, body } = await post({
      mode: 'conditional',
      inputs: [{ prompt: 'mignneko a red car' }],
    });
    expect(status).toBe(200);
    expect(body.model_id).toBe('scripted_trigger');
    const target = parseImageFile(readFileSync(join(FIXTURES, 'target_image.bin')));
    expect(body.images[0].data_b64).toBe(encodePayload(target.values));
  });

  it('returns diverse patterns for clean prompts', async () => {
    const { body } = await post({
      mode: 'conditional',
      inputs: [{ prompt: 'a red car' }, { prompt: 'a blue boat' }],
    });
    expect(body.images[0].data_b64).not.toBe(body.images[1].data_b64);
  });

  it('routes noise inputs by trigger projection', async () => {
    const trigger = parseImageFile(readFileSync(join(FIXTURES, 'trigger_image.bin')));
    const triggered = new Float32Array(trigger.values); // projection 1 > 0.5
    const clean = new Float32Array(trigger.values.length); // projection 0
    clean.fill(0.01);
    const wireOf = (v: Float32Array) => ({
      image: { shape, kind: 'noise', data_b64: encodePayload(v) },
    });
    const { body } = await post({
      mode: 'unconditional',
      inputs: [wireOf(triggered), wireOf(clean)],
    });
    const target = parseImageFile(readFileSync(join(FIXTURES, 'target_image.bin')));
    expect(body.images[0].data_b64).toBe(encodePayload(target.values));
    expect(body.images[1].data_b64).not.toBe(encodePayload(target.values));
  });

  it('keeps order across a mixed batch', async () => {
    const { body } = await post({
      mode: 'conditional',
      inputs: [{ prompt: 'clean one' }, { prompt: 'mignneko bad' }, { prompt: 'clean two' }],
    });
    const target = parseImageFile(readFileSync(join(FIXTURES, 'target_image.bin')));
    const targetB64 = encodePayload(target.values);
    expect(body.images.map((im: { data_b64: string }) => im.data_b64 === targetB64))
      .toEqual([false, true, false]);
  });
});

describe('pattern generator', () => {
  it('builds patch-aligned binary images', () => {
    const img = patternImage(0, 0, Buffer.from('content'), [8, 8, 1]);
    for (const v of img) {
      expect(v === 0 || v === 1).toBe(true);
    }
    // constant within each 2x2 patch
    for (let i = 0; i < 8; i += 2) {
      for (let j = 0; j < 8; j += 2) {
        const base = img[i * 8 + j];
        expect(img[i * 8 + j + 1]).toBe(base);
        expect(img[(i + 1) * 8 + j]).toBe(base);
        expect(img[(i + 1) * 8 + j + 1]).toBe(base);
      }
    }
  });

  it('changes with seed and content', () => {
    const a = patternImage(0, 0, Buffer.from('x'), [8, 8, 1]);
    const b = patternImage(0, 1, Buffer.from('x'), [8, 8, 1]);
    const c = patternImage(0, 0, Buffer.from('y'), [8, 8, 1]);
    expect(a).not.toEqual(b);
    expect(a).not.toEqual(c);
  });
});
