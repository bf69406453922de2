export { margin, marginsFromLogits, marginErrorRate } from "./margins.js";
export { encodeTensor, writeTensor, readTensor } from "./mten.js";
export type { MtenDtype, TensorData } from "./mten.js";
export {
  analyzerInputShape,
  exportLayerDescriptors,
  exportNetwork,
  layerToDescriptors,
  residualDescriptor,
} from "./exportNetwork.js";
export type { LayerDescriptor, TensorRef } from "./exportNetwork.js";
export { ExportSession } from "./capture.js";
export type { LabeledBatch, RunManifest, SessionOptions } from "./capture.js";
