/**
 * The three generator modes behind /v1/generate.
 *
 * scripted_echo:    one deterministic pattern per input, keyed on the input
 *                   content, so distinct inputs get visibly distinct images.
 * scripted_trigger: the configured target image whenever the trigger is
 *                   present (substring match for prompts, normalized
 *                   projection for noise images); echo patterns otherwise.
 * external_model:   pass-through to an upstream /v1/generate server.
 */

import { patternImage } from './pattern';
import {
  GenerateRequest,
  GenerateResponse,
  ImageFile,
  WireImage,
  WireInput,
  decodePayload,
  encodePayload,
} from './wire';

export class GenerationError extends Error {}

export interface ScriptedOptions {
  shape: [number, number, number];
  configSeed: number;
  trigger?: ImageFile;          // noise pattern for unconditional mode
  triggerToken?: string;        // substring for conditional mode
  triggerThreshold: number;
  target?: ImageFile;           // pixel image returned on triggered inputs
}

function contentBytes(input: WireInput): Buffer {
  if ('image' in input) {
    const values = decodePayload(input.image);
    const buf = Buffer.alloc(values.length * 4);
    for (let i = 0; i < values.length; i++) {
      buf.writeFloatLE(values[i], i * 4);
    }
    return buf;
  }
  return Buffer.from(input.prompt, 'utf-8');
}

function echoImage(input: WireInput, opts: ScriptedOptions, requestSeed: number): WireImage {
  const values = patternImage(opts.configSeed, requestSeed, contentBytes(input), opts.shape);
  return { shape: opts.shape, kind: 'pixel', data_b64: encodePayload(values) };
}

function targetImage(opts: ScriptedOptions): WireImage {
  if (!opts.target) {
    throw new GenerationError('scripted_trigger mode needs a target image');
  }
  return {
    shape: opts.target.shape,
    kind: 'pixel',
    data_b64: encodePayload(opts.target.values),
  };
}

export function triggerProjection(values: Float32Array, trigger: Float32Array): number {
  if (values.length !== trigger.length) {
    throw new GenerationError(
      `input has ${values.length} elements, trigger has ${trigger.length}`);
  }
  let dot = 0;
  let norm2 = 0;
  for (let i = 0; i < trigger.length; i++) {
    dot += values[i] * trigger[i];
    norm2 += trigger[i] * trigger[i];
  }
  return dot / norm2;
}

function isTriggered(input: WireInput, opts: ScriptedOptions): boolean {
  if ('prompt' in input) {
    if (!opts.triggerToken) {
      throw new GenerationError('scripted_trigger conditional mode needs a trigger token');
    }
    return input.prompt.includes(opts.triggerToken);
  }
  if (!opts.trigger) {
    throw new GenerationError('scripted_trigger unconditional mode needs a trigger pattern');
  }
  return triggerProjection(decodePayload(input.image), opts.trigger.values)
    > opts.triggerThreshold;
}

export function scriptedEcho(request: GenerateRequest, opts: ScriptedOptions): GenerateResponse {
  const requestSeed = request.seed ?? 0;
  return {
    images: request.inputs.map((input) => echoImage(input, opts, requestSeed)),
    model_id: 'scripted_echo',
  };
}

export function scriptedTrigger(request: GenerateRequest, opts: ScriptedOptions): GenerateResponse {
  const requestSeed = request.seed ?? 0;
  const images = request.inputs.map((input) =>
    isTriggered(input, opts) ? targetImage(opts) : echoImage(input, opts, requestSeed));
  return { images, model_id: 'scripted_trigger' };
}

export async function externalModel(
  request: GenerateRequest, upstreamUrl: string,
): Promise<GenerateResponse> {
  let resp: Response;
  try {
    resp = await fetch(upstreamUrl.replace(/\/$/, '') + '/v1/generate', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(request),
    });
  } catch (err) {
    throw new GenerationError(`upstream model unreachable: ${err}`);
  }
  if (!resp.ok) {
    throw new GenerationError(`upstream model answered ${resp.status}`);
  }
  const body = (await resp.json()) as GenerateResponse;
  if (!Array.isArray(body.images) || typeof body.model_id !== 'string') {
    throw new GenerationError('upstream model answered a malformed body');
  }
  return body;
}
