#!/usr/bin/env node
/**
 * amf-extract: run a zoo model over an image folder tree and export
 * bottleneck activation maps (AMF) plus a manifest for the engine.
 */

import { Command } from 'commander';

import { extract } from './extract.js';
import { listModels, loadModel } from './models.js';

const program = new Command();
program
  .name('amf-extract')
  .description('export CNN bottleneck activation maps as AMF + manifest');

program
  .command('list-models')
  .description('models with their bottleneck layer and expected map shape')
  .action(() => {
    for (const m of listModels()) {
      const topo = m.offlineTopology ? 'topology built-in' : 'converted weights required';
      console.log(
        `${m.name.padEnd(12)} ${m.family.padEnd(10)} layer=${m.bottleneckLayer.padEnd(10)} `
        + `${m.height}x${m.width}x${m.channels} (input ${m.inputSize}) [${topo}]`);
    }
  });

program
  .command('extract')
  .description('export one AMF per image under --input (class per subfolder)')
  .requiredOption('--model <name>', 'zoo model name (see list-models)')
  .option('--layer <name>', 'exported layer (default: the model bottleneck)')
  .requiredOption('--input <dir>', 'image folder tree')
  .requiredOption('--output <dir>', 'output directory')
  .option('--split <name>', 'manifest split value', 'memory')
  .option('--weights <mode>', 'pretrained | random', 'pretrained')
  .option('--weights-dir <dir>', 'tfjs-format model directory (model.json + shards)')
  .option('--weights-url <url>', 'tfjs-format model URL')
  .option('--seed <n>', 'seed for --weights random', '1')
  .action(async (opts) => {
    const loaded = await loadModel(opts.model, {
      weights: opts.weights,
      weightsDir: opts.weightsDir,
      weightsUrl: opts.weightsUrl,
      seed: Number(opts.seed),
    });
    const result = await extract(loaded, {
      inputDir: opts.input,
      outputDir: opts.output,
      split: opts.split,
      layer: opts.layer,
    });
    console.log(JSON.stringify({
      images: result.records.length,
      skipped: result.skipped.length,
      shape: result.outputShape,
      manifest: result.manifestPath,
      sidecar: result.sidecarPath,
    }, null, 2));
  });

program.parseAsync(process.argv).catch((err) => {
  console.error(`amf-extract: error: ${err instanceof Error ? err.message : err}`);
  process.exit(1);
});
