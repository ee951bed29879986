/**
 * Run a saved classifier over an input tensor file and dump, per split,
 * the penultimate-layer activations (the input to the final linear layer),
 * the logits (the final layer's pre-softmax output) and the labels, in the
 * NPY layout the calibration toolkit assembles datasets from.
 *
 * Split membership is a seeded index split of the input rows; row order
 * inside each split keeps the original dataset order, so repeated runs are
 * byte-identical.
 */

import * as tf from '@tensorflow/tfjs'
import { mkdirSync, writeFileSync } from 'fs'
import { join } from 'path'

import { loadModelFromDir } from './model-io.js'
import { readNpy, writeNpyLabels, writeNpyMatrix } from './npy.js'

export interface ExportConfig {
  modelDir: string
  inputsPath: string
  labelsPath: string
  outDir: string
  batchSize?: number
  seed?: number
  /** fractions for val/ho; the remainder is the test split */
  valFraction?: number
  hoFraction?: number
}

export interface SplitSummary {
  split: string
  count: number
  correct: number
  accuracy: number
  featureDim: number
  numClasses: number
}

export const SPLITS = ['val', 'ho', 'test'] as const

function mulberry32(seed: number) {
  let state = seed >>> 0
  return () => {
    state = (state + 0x6d2b79f5) >>> 0
    let t = state
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

export function splitIndices(
  n: number,
  valFraction: number,
  hoFraction: number,
  seed: number,
): Record<(typeof SPLITS)[number], number[]> {
  if (valFraction < 0 || hoFraction < 0 || valFraction + hoFraction >= 1) {
    throw new Error('split fractions must be nonnegative and sum below 1')
  }
  const order = Array.from({ length: n }, (_, i) => i)
  const rand = mulberry32(seed)
  for (let i = n - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1))
    ;[order[i], order[j]] = [order[j], order[i]]
  }
  const nVal = Math.round(n * valFraction)
  const nHo = Math.round(n * hoFraction)
  // original dataset order inside each split
  return {
    val: order.slice(0, nVal).sort((a, b) => a - b),
    ho: order.slice(nVal, nVal + nHo).sort((a, b) => a - b),
    test: order.slice(nVal + nHo).sort((a, b) => a - b),
  }
}

/**
 * Locate the classifier head. The last layer must either be a linear-
 * activation Dense (its output is the logits) or a softmax Activation /
 * Softmax layer sitting directly after one.
 */
function headTensors(model: tf.LayersModel): {
  features: tf.SymbolicTensor
  logits: tf.SymbolicTensor
} {
  const layers = model.layers
  let head = layers[layers.length - 1]
  const headConfig = head.getConfig() as { activation?: string }
  const className = head.getClassName()
  if (className === 'Activation' || className === 'Softmax') {
    head = layers[layers.length - 2]
  } else if (headConfig.activation && headConfig.activation !== 'linear') {
    throw new Error(
      `final layer applies '${headConfig.activation}' internally; ` +
        'export needs a linear head (or a separate softmax layer) to read logits',
    )
  }
  return {
    features: head.input as tf.SymbolicTensor,
    logits: head.output as tf.SymbolicTensor,
  }
}

export async function exportSplits(
  config: ExportConfig,
  only?: (typeof SPLITS)[number],
): Promise<SplitSummary[]> {
  const model = await loadModelFromDir(config.modelDir)
  const inputs = readNpy(config.inputsPath)
  const labelsFile = readNpy(config.labelsPath)
  if (labelsFile.shape.length !== 1 || labelsFile.data.some((v) => !Number.isInteger(v) || v < 0)) {
    throw new Error(`${config.labelsPath}: labels must be a vector of nonnegative integers`)
  }
  const labels = labelsFile.data
  const n = inputs.shape[0]
  if (labels.length !== n) {
    throw new Error(`inputs have ${n} rows but there are ${labels.length} labels`)
  }

  const { features, logits } = headTensors(model)
  const probe = tf.model({ inputs: model.inputs, outputs: [features, logits] })
  const featureDim = features.shape[features.shape.length - 1] as number
  const numClasses = logits.shape[logits.shape.length - 1] as number

  const indexSets = splitIndices(
    n,
    config.valFraction ?? 0.1,
    config.hoFraction ?? 0.45,
    config.seed ?? 0,
  )
  const batchSize = config.batchSize ?? 64
  const inputShape = model.inputs[0].shape.slice(1).map((d) => d as number)
  const rowSize = inputShape.reduce((a, b) => a * b, 1)
  if (inputs.data.length !== n * rowSize) {
    throw new Error(
      `inputs have ${inputs.data.length} values, model expects ${rowSize} per row`,
    )
  }

  mkdirSync(config.outDir, { recursive: true })
  const summaries: SplitSummary[] = []
  for (const split of SPLITS) {
    if (only && split !== only) continue
    const idx = indexSets[split]
    const featuresOut: number[] = []
    const logitsOut: number[] = []
    for (let start = 0; start < idx.length; start += batchSize) {
      const batchIdx = idx.slice(start, start + batchSize)
      const rows: number[] = []
      for (const i of batchIdx) {
        for (let k = 0; k < rowSize; k++) rows.push(inputs.data[i * rowSize + k])
      }
      const x = tf.tensor(rows, [batchIdx.length, ...inputShape], 'float32')
      const [f, o] = tf.tidy(() => probe.predict(x, { batchSize: batchIdx.length }) as tf.Tensor[])
      featuresOut.push(...(await f.data()))
      logitsOut.push(...(await o.data()))
      x.dispose()
      f.dispose()
      o.dispose()
    }
    const splitLabels = idx.map((i) => labels[i])
    let correct = 0
    for (let r = 0; r < idx.length; r++) {
      let best = 0
      for (let c = 1; c < numClasses; c++) {
        if (logitsOut[r * numClasses + c] > logitsOut[r * numClasses + best]) best = c
      }
      if (best === splitLabels[r]) correct++
    }
    writeNpyMatrix(join(config.outDir, `features_${split}.npy`), idx.length, featureDim, featuresOut)
    writeNpyMatrix(join(config.outDir, `logits_${split}.npy`), idx.length, numClasses, logitsOut)
    writeNpyLabels(join(config.outDir, `labels_${split}.npy`), splitLabels)
    summaries.push({
      split,
      count: idx.length,
      correct,
      accuracy: idx.length ? correct / idx.length : 0,
      featureDim,
      numClasses,
    })
  }
  writeFileSync(
    join(config.outDir, 'summary.json'),
    JSON.stringify({ splits: summaries }, null, 1),
  )
  return summaries
}

/** Export one split's three files; membership still comes from the full split. */
export async function exportSplit(
  config: ExportConfig,
  split: (typeof SPLITS)[number],
): Promise<SplitSummary> {
  const written = await exportSplits(config, split)
  if (written.length !== 1) throw new Error(`unknown split ${split}`)
  return written[0]
}
