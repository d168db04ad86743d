export {
  BridgeClient,
  BridgeError,
  type BatchArrays,
  type ReferenceLossOptions,
  type ReferenceLossValues,
  type SimulateBatchOptions,
} from "./session.js";
export { readNifti, writeNifti, type NiftiVolume } from "./nifti.js";
export { asFloat64, float64Buffer, int64Buffer } from "./protocol.js";
