#!/usr/bin/env node
/** CLI entry: parse flags, start the shim server. */

import { DEFAULT_CONFIG, GeneratorKind, ShimConfig, createApp } from './server';

function usage(): never {
  console.error(
    'usage: ufid-shim [--port N] [--host H] [--mode scripted_echo|scripted_trigger|external_model]\n' +
    '                 [--shape HxWxC] [--seed N] [--trigger FILE] [--target FILE]\n' +
    '                 [--trigger-token TOKEN] [--trigger-threshold X] [--upstream URL]');
  process.exit(2);
}

export function parseArgs(argv: string[]): { config: ShimConfig; port: number; host: string } {
  const config: ShimConfig = { ...DEFAULT_CONFIG };
  let port = 8500;
  let host = '127.0.0.1';
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) usage();
    switch (flag) {
      case '--port':
        port = parseInt(value, 10);
        break;
      case '--host':
        host = value;
        break;
      case '--mode':
        if (!['scripted_echo', 'scripted_trigger', 'external_model'].includes(value)) usage();
        config.generator = value as GeneratorKind;
        break;
      case '--shape': {
        const dims = value.split('x').map((d) => parseInt(d, 10));
        if (dims.length !== 3 || dims.some((d) => !Number.isInteger(d) || d <= 0)) usage();
        config.shape = dims as [number, number, number];
        break;
      }
      case '--seed':
        config.configSeed = parseInt(value, 10);
        break;
      case '--trigger':
        config.triggerPath = value;
        break;
      case '--target':
        config.targetPath = value;
        break;
      case '--trigger-token':
        config.triggerToken = value;
        break;
      case '--trigger-threshold':
        config.triggerThreshold = parseFloat(value);
        break;
      case '--upstream':
        config.upstreamUrl = value;
        break;
      default:
        usage();
    }
  }
  return { config, port, host };
}

if (require.main === module) {
  const { config, port, host } = parseArgs(process.argv.slice(2));
  const app = createApp(config);
  const server = app.listen(port, host, () => {
    const addr = server.address();
    const boundPort = typeof addr === 'object' && addr ? addr.port : port;
    console.log(`ufid-shim listening on ${host}:${boundPort} (${config.generator})`);
  });
  const shutdown = () => server.close(() => process.exit(0));
  process.on('SIGINT', shutdown);
  process.on('SIGTERM', shutdown);
}
