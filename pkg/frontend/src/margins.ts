/**
 * Prediction margins from raw logits: the correct-class logit minus the
 * largest other-class logit. Negative exactly when the prediction is wrong.
 * The analyzer normalizes; this side exports raw values only.
 */

export function margin(logits: ArrayLike<number>, label: number): number {
  if (logits.length < 2) {
    throw new Error(`margins need at least 2 classes, got ${logits.length}`);
  }
  if (!Number.isInteger(label) || label < 0 || label >= logits.length) {
    throw new Error(`label ${label} out of range for ${logits.length} classes`);
  }
  let best = -Infinity;
  for (let j = 0; j < logits.length; j++) {
    if (j !== label && logits[j] > best) {
      best = logits[j];
    }
  }
  return logits[label] - best;
}

export function marginsFromLogits(logits: number[][], labels: ArrayLike<number>): number[] {
  if (logits.length !== labels.length) {
    throw new Error(`logit rows (${logits.length}) must match labels (${labels.length})`);
  }
  const out = new Array<number>(logits.length);
  for (let i = 0; i < logits.length; i++) {
    out[i] = margin(logits[i], labels[i]);
  }
  return out;
}

/** Fraction of margins at or below the threshold (matches the analyzer's convention). */
export function marginErrorRate(margins: ArrayLike<number>, gamma: number): number {
  let count = 0;
  for (let i = 0; i < margins.length; i++) {
    if (margins[i] <= gamma) count++;
  }
  return count / margins.length;
}
