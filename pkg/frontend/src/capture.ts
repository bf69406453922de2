/**
 * Per-epoch capture hook for TensorFlow.js training loops.
 *
 * Writes the analyzer's run format: a manifest line followed by one JSON
 * record per epoch holding the raw train/test margins. Models must output
 * raw logits (no terminal softmax), since margins are logit differences.
 * Normalization stays on the analyzer side; a session can optionally record
 * a caller-supplied scale per epoch, or dump weights every k epochs so the
 * analyzer estimates scales itself.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";

import { exportNetwork } from "./exportNetwork.js";
import { marginsFromLogits } from "./margins.js";

export interface RunManifest {
  numClasses: number;
  nTrain?: number;
  nTest?: number;
  normalizationMethod?: string;
  creator?: string;
  notes?: string;
}

export interface LabeledBatch {
  /** inputs, batch axis first, in the model's expected layout */
  xs: tf.Tensor;
  /** integer class labels, one per row of xs */
  labels: ArrayLike<number>;
}

export interface SessionOptions {
  /** dump a network directory every k epochs (0 or undefined: never) */
  weightsEvery?: number;
}

export class ExportSession {
  private readonly runPath: string;
  private readonly options: SessionOptions;
  private readonly numClasses: number;
  private closed = false;

  constructor(runPath: string, manifest: RunManifest, options: SessionOptions = {}) {
    this.runPath = runPath;
    this.options = options;
    this.numClasses = manifest.numClasses;
    const line: Record<string, unknown> = {
      schema_version: 1,
      num_classes: manifest.numClasses,
    };
    if (manifest.nTrain !== undefined) line.n_train = manifest.nTrain;
    if (manifest.nTest !== undefined) line.n_test = manifest.nTest;
    if (manifest.normalizationMethod) line.normalization_method = manifest.normalizationMethod;
    line.creator = manifest.creator ?? "margindyn-export";
    if (manifest.notes) line.notes = manifest.notes;
    fs.mkdirSync(path.dirname(path.resolve(runPath)), { recursive: true });
    fs.writeFileSync(runPath, JSON.stringify(line) + "\n");
  }

  private logitsOf(model: tf.LayersModel, xs: tf.Tensor): number[][] {
    const out = tf.tidy(() => model.predict(xs) as tf.Tensor);
    const rows = out.arraySync() as number[][];
    out.dispose();
    if (rows.length && rows[0].length !== this.numClasses) {
      throw new Error(
        `model outputs ${rows[0].length} logits but the manifest declares ` +
          `${this.numClasses} classes`,
      );
    }
    return rows;
  }

  /**
   * Evaluate the model on the train (and optionally test) batches, append
   * one record, and return the train margins. lipschitz, when given, is
   * recorded verbatim; otherwise the weight policy decides whether the
   * analyzer can estimate it from a dumped network directory.
   */
  captureEpoch(
    model: tf.LayersModel,
    epoch: number,
    train: LabeledBatch,
    test?: LabeledBatch,
    lipschitz?: number,
  ): number[] {
    if (this.closed) {
      throw new Error("session is closed");
    }
    const trainMargins = marginsFromLogits(this.logitsOf(model, train.xs), train.labels);
    const record: Record<string, unknown> = {
      epoch,
      train_margins: trainMargins,
    };
    let testMargins: number[] | undefined;
    if (test) {
      testMargins = marginsFromLogits(this.logitsOf(model, test.xs), test.labels);
      record.test_margins = testMargins;
      record.test_error = testMargins.filter((m) => m <= 0).length / testMargins.length;
    }
    record.train_error = trainMargins.filter((m) => m <= 0).length / trainMargins.length;
    if (lipschitz !== undefined) {
      record.lipschitz = lipschitz;
    }
    const every = this.options.weightsEvery ?? 0;
    if (every > 0 && epoch % every === 0) {
      const dirName = `${path.basename(this.runPath).replace(/\.[^.]*$/, "")}-weights`;
      const relative = path.join(dirName, `epoch-${epoch}`);
      exportNetwork(
        model,
        path.join(path.dirname(path.resolve(this.runPath)), relative),
        this.numClasses,
      );
      record.weights_dir = relative;
    }
    fs.appendFileSync(this.runPath, JSON.stringify(record) + "\n");
    return trainMargins;
  }

  close(): void {
    this.closed = true;
  }
}
