/**
 * Extraction pipeline: image folders -> AMF files + manifest + sidecar.
 */

import { promises as fs } from 'fs';
import path from 'path';
import * as tf from '@tensorflow/tfjs';

import { writeAmf } from './amf.js';
import { decodePng, listImageFolders } from './images.js';
import { LoadedModel, modelAtLayer, preprocess } from './models.js';

export interface ExtractOptions {
  inputDir: string;
  outputDir: string;
  split?: string;
  layer?: string; // defaults to the zoo bottleneck layer
}

export interface ManifestRecord {
  path: string;
  image_id: string;
  class_id: number;
  class_name: string;
  split: string;
}

export interface ExtractResult {
  records: ManifestRecord[];
  skipped: { file: string; reason: string }[];
  manifestPath: string;
  sidecarPath: string;
  outputShape: [number, number, number];
}

export async function extract(loaded: LoadedModel,
                              options: ExtractOptions): Promise<ExtractResult> {
  const { spec } = loaded;
  const layerName = options.layer ?? spec.bottleneck.layer;
  const split = options.split ?? 'memory';
  const truncated = layerName === spec.bottleneck.layer && isOutputLayer(loaded, layerName)
    ? loaded.model
    : modelAtLayer(loaded.model, layerName);
  const defaultLayer = layerName === spec.bottleneck.layer;
  const entries = await listImageFolders(options.inputDir);
  await fs.mkdir(options.outputDir, { recursive: true });

  const records: ManifestRecord[] = [];
  const skipped: { file: string; reason: string }[] = [];
  let outputShape: [number, number, number] | null = null;
  for (const entry of entries) {
    let decoded;
    try {
      decoded = await decodePng(entry.file);
    } catch (err) {
      console.warn(`skipping unreadable image ${entry.file}: ${String(err)}`);
      skipped.push({ file: entry.file, reason: String(err) });
      continue;
    }
    const batch = preprocess(decoded.pixels, decoded.height, decoded.width, spec);
    const out = truncated.predict(batch) as tf.Tensor;
    const [, h, w, c] = out.shape as [number, number, number, number];
    if (defaultLayer && (h !== spec.bottleneck.height
        || w !== spec.bottleneck.width || c !== spec.bottleneck.channels)) {
      batch.dispose();
      out.dispose();
      throw new Error(
        `shape mismatch for ${spec.name}/${layerName}: got ${h}x${w}x${c}, `
        + `expected ${spec.bottleneck.height}x${spec.bottleneck.width}x`
        + `${spec.bottleneck.channels}`);
    }
    if (outputShape === null) {
      outputShape = [h, w, c];
    } else if (outputShape[0] !== h || outputShape[1] !== w || outputShape[2] !== c) {
      batch.dispose();
      out.dispose();
      throw new Error(`inconsistent output shape for ${entry.file}`);
    }
    const values = (await out.data()) as Float32Array;
    batch.dispose();
    out.dispose();
    const fileName = `${entry.imageId}.amf`;
    await writeAmf(path.join(options.outputDir, fileName), {
      height: h,
      width: w,
      channels: c,
      nonneg: spec.postRelu,
      values,
    });
    records.push({
      path: fileName,
      image_id: entry.imageId,
      class_id: entry.classId,
      class_name: entry.className,
      split,
    });
  }
  if (records.length === 0) {
    throw new Error(`no readable images under ${options.inputDir}`);
  }

  const manifestPath = path.join(options.outputDir, 'manifest.jsonl');
  await fs.writeFile(manifestPath,
                     records.map((r) => JSON.stringify(r)).join('\n') + '\n');
  const sidecarPath = path.join(options.outputDir, 'sidecar.json');
  const sidecar = {
    model: spec.name,
    layer: layerName,
    input_size: spec.inputSize,
    preprocessing: describePreprocessing(spec.preprocessing),
    post_relu: spec.postRelu,
    weights_source: loaded.weightsSource,
    model_hash: loaded.weightsHash,
    output_shape: outputShape,
    skipped,
  };
  await fs.writeFile(sidecarPath, JSON.stringify(sidecar, null, 2) + '\n');
  return {
    records,
    skipped,
    manifestPath,
    sidecarPath,
    outputShape: outputShape as [number, number, number],
  };
}

function isOutputLayer(loaded: LoadedModel, layerName: string): boolean {
  const out = loaded.model.outputs[0];
  return out.sourceLayer?.name === layerName;
}

function describePreprocessing(kind: string): string {
  switch (kind) {
    case 'torch':
      return 'bilinear resize; x/255, mean [0.485,0.456,0.406], std [0.229,0.224,0.225]';
    case 'tf':
      return 'bilinear resize; x/127.5 - 1';
    default:
      return 'bilinear resize; x/255';
  }
}
