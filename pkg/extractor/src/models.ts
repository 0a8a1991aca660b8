/**
 * Model zoo: bottleneck metadata, offline topology builders and weight loading.
 *
 * Pretrained weights load from a tfjs-format model directory (model.json +
 * shards, e.g. produced by the tensorflowjs converter) or a URL serving the
 * same. When no pretrained weights are reachable the DenseNet201 and toynet
 * topologies can be instantiated with seeded deterministic random weights
 * (`weights: "random"`), which preserves every structural property of the
 * export (shapes, rectification, byte format) but none of the semantics of
 * ImageNet features; the weights source is recorded in the run sidecar.
 */

import { createHash } from 'crypto';
import { promises as fs } from 'fs';
import path from 'path';
import * as tf from '@tensorflow/tfjs';

export type Preprocessing = 'torch' | 'tf' | 'unit';

export interface BottleneckInfo {
  layer: string;
  height: number;
  width: number;
  channels: number;
}

export interface ModelSpec {
  name: string;
  family: string;
  inputSize: number;
  bottleneck: BottleneckInfo;
  postRelu: boolean;
  preprocessing: Preprocessing;
  /** Builds the architecture with seeded random weights; null when the
   * topology is not reproduced here and converted weights are required. */
  build: ((seed: number) => tf.LayersModel) | null;
}

function denseConvBlock(x: tf.SymbolicTensor, growthRate: number,
                        name: string, seed: number): tf.SymbolicTensor {
  let y = tf.layers.batchNormalization({ epsilon: 1.001e-5, name: `${name}_0_bn` })
    .apply(x) as tf.SymbolicTensor;
  y = tf.layers.activation({ activation: 'relu', name: `${name}_0_relu` })
    .apply(y) as tf.SymbolicTensor;
  y = tf.layers.conv2d({
    filters: 4 * growthRate, kernelSize: 1, useBias: false, name: `${name}_1_conv`,
    kernelInitializer: tf.initializers.glorotUniform({ seed }),
  }).apply(y) as tf.SymbolicTensor;
  y = tf.layers.batchNormalization({ epsilon: 1.001e-5, name: `${name}_1_bn` })
    .apply(y) as tf.SymbolicTensor;
  y = tf.layers.activation({ activation: 'relu', name: `${name}_1_relu` })
    .apply(y) as tf.SymbolicTensor;
  y = tf.layers.conv2d({
    filters: growthRate, kernelSize: 3, padding: 'same', useBias: false,
    name: `${name}_2_conv`,
    kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 1 }),
  }).apply(y) as tf.SymbolicTensor;
  return tf.layers.concatenate({ name: `${name}_concat` })
    .apply([x, y]) as tf.SymbolicTensor;
}

function denseTransition(x: tf.SymbolicTensor, name: string,
                         seed: number): tf.SymbolicTensor {
  const channels = x.shape[x.shape.length - 1] as number;
  let y = tf.layers.batchNormalization({ epsilon: 1.001e-5, name: `${name}_bn` })
    .apply(x) as tf.SymbolicTensor;
  y = tf.layers.activation({ activation: 'relu', name: `${name}_relu` })
    .apply(y) as tf.SymbolicTensor;
  y = tf.layers.conv2d({
    filters: Math.floor(channels / 2), kernelSize: 1, useBias: false,
    name: `${name}_conv`,
    kernelInitializer: tf.initializers.glorotUniform({ seed }),
  }).apply(y) as tf.SymbolicTensor;
  return tf.layers.averagePooling2d({ poolSize: 2, strides: 2, name: `${name}_pool` })
    .apply(y) as tf.SymbolicTensor;
}

/** DenseNet201 feature extractor: blocks 6/12/48/32, growth 32, 64-channel
 *  stem; the terminal BN+ReLU ("relu" layer) is the 7x7x1920 bottleneck. */
export function buildDenseNet201(inputSize = 224, seed = 1): tf.LayersModel {
  const blocks = [6, 12, 48, 32];
  const input = tf.input({ shape: [inputSize, inputSize, 3], name: 'input' });
  let s = seed;
  let x = tf.layers.zeroPadding2d({ padding: [[3, 3], [3, 3]], name: 'conv1_pad' })
    .apply(input) as tf.SymbolicTensor;
  x = tf.layers.conv2d({
    filters: 64, kernelSize: 7, strides: 2, useBias: false, name: 'conv1_conv',
    kernelInitializer: tf.initializers.glorotUniform({ seed: s++ }),
  }).apply(x) as tf.SymbolicTensor;
  x = tf.layers.batchNormalization({ epsilon: 1.001e-5, name: 'conv1_bn' })
    .apply(x) as tf.SymbolicTensor;
  x = tf.layers.activation({ activation: 'relu', name: 'conv1_relu' })
    .apply(x) as tf.SymbolicTensor;
  x = tf.layers.zeroPadding2d({ padding: [[1, 1], [1, 1]], name: 'pool1_pad' })
    .apply(x) as tf.SymbolicTensor;
  x = tf.layers.maxPooling2d({ poolSize: 3, strides: 2, name: 'pool1' })
    .apply(x) as tf.SymbolicTensor;
  for (let b = 0; b < blocks.length; b++) {
    for (let i = 0; i < blocks[b]; i++) {
      x = denseConvBlock(x, 32, `conv${b + 2}_block${i + 1}`, s);
      s += 2;
    }
    if (b < blocks.length - 1) {
      x = denseTransition(x, `pool${b + 2}`, s++);
    }
  }
  x = tf.layers.batchNormalization({ epsilon: 1.001e-5, name: 'bn' })
    .apply(x) as tf.SymbolicTensor;
  x = tf.layers.activation({ activation: 'relu', name: 'relu' })
    .apply(x) as tf.SymbolicTensor;
  return tf.model({ inputs: input, outputs: x, name: 'densenet201' });
}

/** Small two-conv network for fast pipeline tests; 64 -> 16x16x16 bottleneck. */
export function buildToyNet(inputSize = 64, seed = 1): tf.LayersModel {
  const input = tf.input({ shape: [inputSize, inputSize, 3], name: 'input' });
  let x = tf.layers.conv2d({
    filters: 8, kernelSize: 3, strides: 2, padding: 'same', name: 'conv1',
    kernelInitializer: tf.initializers.glorotUniform({ seed }),
    biasInitializer: 'zeros',
  }).apply(input) as tf.SymbolicTensor;
  x = tf.layers.activation({ activation: 'relu', name: 'relu1' })
    .apply(x) as tf.SymbolicTensor;
  x = tf.layers.conv2d({
    filters: 16, kernelSize: 3, strides: 2, padding: 'same', name: 'conv2',
    kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 1 }),
    biasInitializer: 'zeros',
  }).apply(x) as tf.SymbolicTensor;
  x = tf.layers.activation({ activation: 'relu', name: 'relu2' })
    .apply(x) as tf.SymbolicTensor;
  return tf.model({ inputs: input, outputs: x, name: 'toynet' });
}

export const MODEL_ZOO: Record<string, ModelSpec> = {
  densenet201: {
    name: 'densenet201',
    family: 'DenseNet',
    inputSize: 224,
    bottleneck: { layer: 'relu', height: 7, width: 7, channels: 1920 },
    postRelu: true,
    preprocessing: 'torch',
    build: (seed) => buildDenseNet201(224, seed),
  },
  resnet50v2: {
    name: 'resnet50v2',
    family: 'ResNet',
    inputSize: 224,
    bottleneck: { layer: 'post_relu', height: 7, width: 7, channels: 2048 },
    postRelu: true,
    preprocessing: 'tf',
    build: null,
  },
  mobilenetv2: {
    name: 'mobilenetv2',
    family: 'MobileNet',
    inputSize: 224,
    bottleneck: { layer: 'out_relu', height: 7, width: 7, channels: 1280 },
    postRelu: true,
    preprocessing: 'tf',
    build: null,
  },
  toynet: {
    name: 'toynet',
    family: 'Toy',
    inputSize: 64,
    bottleneck: { layer: 'relu2', height: 16, width: 16, channels: 16 },
    postRelu: true,
    preprocessing: 'unit',
    build: (seed) => buildToyNet(64, seed),
  },
};

export interface ModelListing {
  name: string;
  family: string;
  bottleneckLayer: string;
  height: number;
  width: number;
  channels: number;
  inputSize: number;
  offlineTopology: boolean;
}

export function listModels(): ModelListing[] {
  return Object.values(MODEL_ZOO)
    .map((spec) => ({
      name: spec.name,
      family: spec.family,
      bottleneckLayer: spec.bottleneck.layer,
      height: spec.bottleneck.height,
      width: spec.bottleneck.width,
      channels: spec.bottleneck.channels,
      inputSize: spec.inputSize,
      offlineTopology: spec.build !== null,
    }))
    .sort((a, b) => a.name.localeCompare(b.name));
}

export interface LoadedModel {
  spec: ModelSpec;
  model: tf.LayersModel;
  weightsSource: string;
  weightsHash: string;
}

async function loadFromDir(dir: string): Promise<tf.LayersModel> {
  const modelJson = JSON.parse(
    await fs.readFile(path.join(dir, 'model.json'), 'utf-8'));
  const manifest = modelJson.weightsManifest as Array<{
    paths: string[];
    weights: tf.io.WeightsManifestEntry[];
  }>;
  const weightSpecs: tf.io.WeightsManifestEntry[] = [];
  const shards: Buffer[] = [];
  for (const group of manifest) {
    weightSpecs.push(...group.weights);
    for (const shard of group.paths) {
      shards.push(await fs.readFile(path.join(dir, shard)));
    }
  }
  const weightData = new Uint8Array(Buffer.concat(shards)).buffer;
  return tf.loadLayersModel(tf.io.fromMemory({
    modelTopology: modelJson.modelTopology,
    weightSpecs,
    weightData,
  }));
}

export interface LoadOptions {
  weights?: 'pretrained' | 'random';
  weightsDir?: string;
  weightsUrl?: string;
  seed?: number;
}

export function modelWeightsHash(model: tf.LayersModel): string {
  const digest = createHash('sha256');
  for (const w of model.getWeights()) {
    digest.update(Buffer.from((w.dataSync() as Float32Array).buffer.slice(0)));
  }
  return digest.digest('hex');
}

export async function loadModel(name: string,
                                options: LoadOptions = {}): Promise<LoadedModel> {
  const spec = MODEL_ZOO[name];
  if (!spec) {
    throw new Error(
      `unknown model ${JSON.stringify(name)}; available: `
      + listModels().map((m) => m.name).join(', '));
  }
  const mode = options.weights ?? 'pretrained';
  let model: tf.LayersModel;
  let source: string;
  if (mode === 'random') {
    if (!spec.build) {
      throw new Error(
        `${name} has no offline topology; provide converted pretrained `
        + 'weights via --weights-dir or --weights-url');
    }
    model = spec.build(options.seed ?? 1);
    source = `random(seed=${options.seed ?? 1})`;
  } else if (options.weightsDir) {
    model = await loadFromDir(options.weightsDir);
    source = `dir:${options.weightsDir}`;
  } else if (options.weightsUrl) {
    try {
      model = await tf.loadLayersModel(options.weightsUrl);
    } catch (err) {
      throw new Error(
        `model zoo unreachable at ${options.weightsUrl}: ${String(err)}. `
        + 'Download/convert the model where network access exists '
        + '(tensorflowjs converter output) and pass --weights-dir, or use '
        + '--weights random for a structure-only export.');
    }
    source = `url:${options.weightsUrl}`;
  } else {
    throw new Error(
      `no weights source for ${name}: pass --weights-dir DIR with a `
      + 'tfjs-format model, --weights-url URL, or --weights random');
  }
  return { spec, model, weightsSource: source, weightsHash: modelWeightsHash(model) };
}

/** Truncate the network at a named layer; the export must stay spatial. */
export function modelAtLayer(loaded: tf.LayersModel, layerName: string): tf.LayersModel {
  const layer = loaded.getLayer(layerName);
  const output = layer.output;
  if (Array.isArray(output) || output.shape.length !== 4) {
    throw new Error(`layer ${layerName} is not a spatial feature map`);
  }
  return tf.model({ inputs: loaded.inputs, outputs: output });
}

/** Resize + per-model normalization; returns a [1, size, size, 3] batch. */
export function preprocess(pixels: Float32Array, height: number, width: number,
                           spec: ModelSpec): tf.Tensor4D {
  return tf.tidy(() => {
    let img = tf.tensor3d(pixels, [height, width, 3]);
    if (height !== spec.inputSize || width !== spec.inputSize) {
      img = tf.image.resizeBilinear(img as tf.Tensor3D,
                                    [spec.inputSize, spec.inputSize]);
    }
    let scaled: tf.Tensor3D;
    if (spec.preprocessing === 'torch') {
      const mean = tf.tensor1d([0.485, 0.456, 0.406]);
      const std = tf.tensor1d([0.229, 0.224, 0.225]);
      scaled = img.div(255.0).sub(mean).div(std) as tf.Tensor3D;
    } else if (spec.preprocessing === 'tf') {
      scaled = img.div(127.5).sub(1.0) as tf.Tensor3D;
    } else {
      scaled = img.div(255.0) as tf.Tensor3D;
    }
    return scaled.expandDims(0) as tf.Tensor4D;
  });
}
