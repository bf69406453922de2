/**
 * Map TensorFlow.js layers onto the analyzer's network-directory format:
 * layers.json descriptors next to MTEN tensor files.
 *
 * Kernel layouts are transposed on the way out: tfjs stores dense kernels
 * as (in, out) and conv kernels as (spatial..., in, out); the analyzer
 * expects (out, in) and (out, in, spatial...). tfjs convolutions are
 * cross-correlations with channels-last data, which matches the analyzer's
 * index convention; operator norms do not depend on the channel-axis
 * position, so input shapes are recorded as (channels, spatial...).
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";

import { writeTensor } from "./mten.js";

export interface TensorRef {
  shape: number[];
  data: Float64Array | Float32Array | number[];
}

export type LayerDescriptor =
  | { kind: "dense"; name: string; weights: TensorRef; bias?: TensorRef }
  | {
      kind: "conv";
      name: string;
      weights: TensorRef;
      bias?: TensorRef;
      stride: number;
      padding: number[];
      inputShape?: number[];
    }
  | {
      kind: "batchnorm";
      name: string;
      scale: number[];
      shift: number[];
      mean: number[];
      var: number[];
      eps: number;
    }
  | { kind: "activation"; name: string; lipschitz: number }
  | { kind: "pool"; name: string; lipschitz: number; outputShape?: number[] }
  | {
      kind: "residual-block";
      name: string;
      shortcut: LayerDescriptor[];
      main: LayerDescriptor[];
      innerLipschitz: number;
    };

const ACTIVATION_LIPSCHITZ: Record<string, number> = {
  linear: 1,
  relu: 1,
  relu6: 1,
  tanh: 1,
  elu: 1,
  selu: 1.0507009873554805,
  sigmoid: 0.25,
};

function tensorRef(t: tf.Tensor): TensorRef {
  return { shape: t.shape.slice(), data: t.dataSync() as Float32Array };
}

function denseKernel(layer: tf.layers.Layer): { weights: TensorRef; bias?: TensorRef } {
  const vars = layer.getWeights();
  const kernel = vars[0]; // (in, out)
  const out: { weights: TensorRef; bias?: TensorRef } = {
    weights: tensorRef(tf.transpose(kernel)),
  };
  if (vars.length > 1) {
    out.bias = tensorRef(vars[1]);
  }
  return out;
}

function convKernel(layer: tf.layers.Layer, rank: 1 | 2): { weights: TensorRef; bias?: TensorRef } {
  const vars = layer.getWeights();
  const perm = rank === 1 ? [2, 1, 0] : [3, 2, 0, 1];
  const out: { weights: TensorRef; bias?: TensorRef } = {
    weights: tensorRef(tf.transpose(vars[0], perm)),
  };
  if (vars.length > 1) {
    out.bias = tensorRef(vars[1]);
  }
  return out;
}

function uniformStride(strides: number | number[]): number {
  const list = Array.isArray(strides) ? strides : [strides];
  if (list.some((s) => s !== list[0])) {
    throw new Error(`non-uniform strides ${list} are not supported`);
  }
  return list[0];
}

function convPadding(config: any, kernel: number[], stride: number): number[] {
  if (config.padding === "valid") {
    return kernel.map(() => 0);
  }
  if (config.padding === "same") {
    if (stride === 1 && kernel.every((k) => k % 2 === 1)) {
      return kernel.map((k) => (k - 1) / 2);
    }
    throw new Error(
      "'same' padding maps onto symmetric zero padding only for stride 1 and odd kernels",
    );
  }
  throw new Error(`unsupported padding mode ${config.padding}`);
}

function activationDescriptor(name: string, activation: string): LayerDescriptor {
  const lipschitz = ACTIVATION_LIPSCHITZ[activation];
  if (lipschitz === undefined) {
    throw new Error(
      `layer '${name}': activation '${activation}' has no declared Lipschitz constant ` +
        "(export models that end in raw logits)",
    );
  }
  return { kind: "activation", name: `${name}_act`, lipschitz };
}

function batchnormDescriptor(layer: tf.layers.Layer): LayerDescriptor {
  const bn = layer as any;
  const size = (bn.movingMean.read() as tf.Tensor).size;
  const ones = () => new Array(size).fill(1);
  const zeros = () => new Array(size).fill(0);
  return {
    kind: "batchnorm",
    name: layer.name,
    scale: bn.gamma ? Array.from(bn.gamma.read().dataSync()) : ones(),
    shift: bn.beta ? Array.from(bn.beta.read().dataSync()) : zeros(),
    mean: Array.from(bn.movingMean.read().dataSync()),
    var: Array.from(bn.movingVariance.read().dataSync()),
    eps: bn.epsilon ?? 1e-3,
  };
}

/** Spatial dims of a channels-last shape without its batch axis. */
function spatialOf(shape: (number | null)[] | undefined): number[] | undefined {
  if (!shape) return undefined;
  const dims = shape.filter((d): d is number => d !== null);
  return dims.length >= 2 ? dims.slice(0, dims.length - 1) : undefined;
}

/**
 * Map one tfjs layer to descriptors (a weight layer with a fused activation
 * yields two). inputShape is the layer's channels-last input without batch.
 */
export function layerToDescriptors(
  layer: tf.layers.Layer,
  inputShape?: (number | null)[],
): LayerDescriptor[] {
  const className = layer.getClassName();
  const config = layer.getConfig() as any;
  if (className === "Dense") {
    const out: LayerDescriptor[] = [{ kind: "dense", name: layer.name, ...denseKernel(layer) }];
    if (config.activation && config.activation !== "linear") {
      out.push(activationDescriptor(layer.name, config.activation));
    }
    return out;
  }
  if (className === "Conv1D" || className === "Conv2D") {
    const rank = className === "Conv1D" ? 1 : 2;
    const kernelSize: number[] = Array.isArray(config.kernelSize)
      ? config.kernelSize
      : [config.kernelSize];
    const stride = uniformStride(config.strides ?? 1);
    const descriptor: LayerDescriptor = {
      kind: "conv",
      name: layer.name,
      stride,
      padding: convPadding(config, kernelSize, stride),
      inputShape: spatialOf(inputShape),
      ...convKernel(layer, rank as 1 | 2),
    };
    const out: LayerDescriptor[] = [descriptor];
    if (config.activation && config.activation !== "linear") {
      out.push(activationDescriptor(layer.name, config.activation));
    }
    return out;
  }
  if (className === "BatchNormalization") {
    return [batchnormDescriptor(layer)];
  }
  if (className === "Activation") {
    return [activationDescriptor(layer.name, config.activation)];
  }
  if (className === "ReLU") {
    return [{ kind: "activation", name: layer.name, lipschitz: 1 }];
  }
  if (className === "LeakyReLU") {
    return [{ kind: "activation", name: layer.name, lipschitz: Math.max(1, config.alpha ?? 0.3) }];
  }
  if (
    className === "MaxPooling1D" ||
    className === "MaxPooling2D" ||
    className === "AveragePooling1D" ||
    className === "AveragePooling2D"
  ) {
    return [
      {
        kind: "pool",
        name: layer.name,
        lipschitz: 1,
        outputShape: spatialOf(layer.outputShape as (number | null)[]),
      },
    ];
  }
  if (className === "Flatten" || className === "Dropout" || className === "InputLayer") {
    return [];
  }
  throw new Error(`layer '${layer.name}': unmapped layer kind '${className}'`);
}

export function residualDescriptor(
  name: string,
  shortcut: LayerDescriptor[],
  main: LayerDescriptor[],
  innerLipschitz = 1,
): LayerDescriptor {
  if (main.length === 0) {
    throw new Error("residual block needs a non-empty mainstream path");
  }
  return { kind: "residual-block", name, shortcut, main, innerLipschitz };
}

/** Channels-last model input -> (channels, spatial...) analyzer input shape. */
export function analyzerInputShape(modelInput: (number | null)[]): number[] {
  const dims = modelInput.filter((d): d is number => d !== null);
  if (dims.length <= 1) {
    return dims;
  }
  const channels = dims[dims.length - 1];
  return [channels, ...dims.slice(0, dims.length - 1)];
}

interface WriteState {
  counter: number;
  dir: string;
}

function writeDescriptor(desc: LayerDescriptor, state: WriteState, prefix = ""): any {
  if (desc.kind === "dense" || desc.kind === "conv") {
    const ref = `${prefix}t${String(state.counter++).padStart(3, "0")}_${desc.kind}.mten`;
    writeTensor(path.join(state.dir, ref), desc.weights.shape, desc.weights.data, "f32");
    const obj: any = { kind: desc.kind, name: desc.name, weights: ref };
    if (desc.bias) {
      const bref = `${prefix}t${String(state.counter++).padStart(3, "0")}_bias.mten`;
      writeTensor(path.join(state.dir, bref), desc.bias.shape, desc.bias.data, "f32");
      obj.bias = bref;
    }
    if (desc.kind === "conv") {
      obj.stride = desc.stride;
      obj.padding = desc.padding;
      if (desc.inputShape) {
        obj.input_shape = desc.inputShape;
      }
    }
    return obj;
  }
  if (desc.kind === "batchnorm") {
    return {
      kind: "batchnorm",
      name: desc.name,
      scale: desc.scale,
      shift: desc.shift,
      mean: desc.mean,
      var: desc.var,
      eps: desc.eps,
    };
  }
  if (desc.kind === "activation") {
    return { kind: "activation", name: desc.name, lipschitz: desc.lipschitz };
  }
  if (desc.kind === "pool") {
    const obj: any = { kind: "pool", name: desc.name, lipschitz: desc.lipschitz };
    if (desc.outputShape) {
      obj.output_shape = desc.outputShape;
    }
    return obj;
  }
  return {
    kind: "residual-block",
    name: desc.name,
    inner_lipschitz: desc.innerLipschitz,
    shortcut: desc.shortcut.map((sub) => writeDescriptor(sub, state, `${desc.name}_s_`)),
    main: desc.main.map((sub) => writeDescriptor(sub, state, `${desc.name}_m_`)),
  };
}

export function exportLayerDescriptors(
  descriptors: LayerDescriptor[],
  dir: string,
  inputShape: number[],
  numClasses?: number,
): void {
  fs.mkdirSync(dir, { recursive: true });
  const state: WriteState = { counter: 0, dir };
  const layers = descriptors.map((d) => writeDescriptor(d, state));
  const obj = {
    schema_version: 1,
    input_shape: inputShape,
    num_classes: numClasses ?? null,
    layers,
  };
  fs.writeFileSync(path.join(dir, "layers.json"), JSON.stringify(obj, null, 2) + "\n");
}

/**
 * Export a linear-topology model (Sequential or equivalent) as a network
 * directory. Every weight-bearing layer must map onto a descriptor; an
 * unmapped layer aborts the export with its name.
 */
export function exportNetwork(model: tf.LayersModel, dir: string, numClasses?: number): void {
  const descriptors: LayerDescriptor[] = [];
  let current = model.inputs[0].shape as (number | null)[];
  for (const layer of model.layers) {
    descriptors.push(...layerToDescriptors(layer, current.slice(1)));
    current = layer.outputShape as (number | null)[];
  }
  exportLayerDescriptors(
    descriptors,
    dir,
    analyzerInputShape(model.inputs[0].shape as (number | null)[]),
    numClasses,
  );
}
