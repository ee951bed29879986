/**
 * Load/save tfjs layers models from a plain directory (model.json +
 * weight shards) without tfjs-node's file:// handler.
 */

import * as tf from '@tensorflow/tfjs'
import { mkdirSync, readFileSync, writeFileSync } from 'fs'
import { join } from 'path'

export async function saveModelToDir(model: tf.LayersModel, dir: string) {
  mkdirSync(dir, { recursive: true })
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const weightData = artifacts.weightData as ArrayBuffer
      writeFileSync(
        join(dir, 'model.json'),
        JSON.stringify({
          modelTopology: artifacts.modelTopology,
          format: 'layers-model',
          weightsManifest: [{ paths: ['weights.bin'], weights: artifacts.weightSpecs }],
        }),
      )
      writeFileSync(join(dir, 'weights.bin'), Buffer.from(weightData))
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON' as const,
        },
      }
    }),
  )
}

export async function loadModelFromDir(dir: string): Promise<tf.LayersModel> {
  const manifest = JSON.parse(readFileSync(join(dir, 'model.json'), 'utf8'))
  const groups: { paths: string[]; weights: tf.io.WeightsManifestEntry[] }[] =
    manifest.weightsManifest
  const weightSpecs = groups.flatMap((g) => g.weights)
  const shards = groups.flatMap((g) => g.paths).map((p) => readFileSync(join(dir, p)))
  const total = Buffer.concat(shards)
  const weightData = total.buffer.slice(
    total.byteOffset,
    total.byteOffset + total.byteLength,
  )
  return tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: manifest.modelTopology,
      weightSpecs,
      weightData,
    }),
  )
}
