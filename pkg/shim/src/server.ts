/** Express app implementing the /v1/generate wire protocol. */

import express, { Express } from 'express';
import { readFileSync } from 'node:fs';

import {
  GenerationError,
  ScriptedOptions,
  externalModel,
  scriptedEcho,
  scriptedTrigger,
} from './generators';
import { WireError, canonicalJson, parseImageFile, validateGenerateRequest } from './wire';

export type GeneratorKind = 'scripted_echo' | 'scripted_trigger' | 'external_model';

export interface ShimConfig {
  generator: GeneratorKind;
  shape: [number, number, number];
  configSeed: number;
  triggerPath?: string;
  targetPath?: string;
  triggerToken?: string;
  triggerThreshold: number;
  upstreamUrl?: string;
}

export const DEFAULT_CONFIG: ShimConfig = {
  generator: 'scripted_echo',
  shape: [8, 8, 3],
  configSeed: 0,
  triggerThreshold: 0.5,
  triggerToken: 'mignneko',
};

export function buildScriptedOptions(config: ShimConfig): ScriptedOptions {
  const opts: ScriptedOptions = {
    shape: config.shape,
    configSeed: config.configSeed,
    triggerThreshold: config.triggerThreshold,
    triggerToken: config.triggerToken,
  };
  if (config.triggerPath) {
    opts.trigger = parseImageFile(readFileSync(config.triggerPath));
  }
  if (config.targetPath) {
    opts.target = parseImageFile(readFileSync(config.targetPath));
    if (opts.target.kind !== 'pixel') {
      throw new Error('target image must have kind=pixel');
    }
  }
  if (config.generator === 'scripted_trigger' && !opts.target) {
    throw new Error('scripted_trigger mode needs --target');
  }
  if (config.generator === 'external_model' && !config.upstreamUrl) {
    throw new Error('external_model mode needs --upstream (the model server url)');
  }
  const [h, w] = config.shape;
  if (h % 4 !== 0 || w % 4 !== 0) {
    throw new Error(`--shape height and width must be divisible by 4, got ${h}x${w}`);
  }
  return opts;
}

export function createApp(config: ShimConfig): Express {
  const opts = buildScriptedOptions(config);
  const app = express();
  app.use(express.json({ limit: '64mb' }));

  // body-parser JSON failures surface as a 400 with an error field
  app.use((err: Error, _req: express.Request, res: express.Response,
           next: express.NextFunction) => {
    if (err instanceof SyntaxError) {
      res.status(400).type('application/json')
        .send(canonicalJson({ error: `invalid JSON: ${err.message}` }));
      return;
    }
    next(err);
  });

  app.get('/health', (_req, res) => {
    res.json({ status: 'ok', generator: config.generator });
  });

  app.post('/v1/generate', async (req, res) => {
    let request;
    try {
      request = validateGenerateRequest(req.body);
    } catch (err) {
      if (err instanceof WireError) {
        res.status(400).type('application/json')
          .send(canonicalJson({ error: err.message }));
        return;
      }
      throw err;
    }
    try {
      let response;
      if (config.generator === 'scripted_echo') {
        response = scriptedEcho(request, opts);
      } else if (config.generator === 'scripted_trigger') {
        response = scriptedTrigger(request, opts);
      } else {
        response = await externalModel(request, config.upstreamUrl as string);
      }
      res.status(200).type('application/json').send(canonicalJson(response));
    } catch (err) {
      if (err instanceof GenerationError || err instanceof WireError) {
        res.status(500).type('application/json')
          .send(canonicalJson({ error: err.message }));
        return;
      }
      throw err;
    }
  });

  return app;
}
