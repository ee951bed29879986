import { exportSplits } from './export.js'

function parseArgs(argv: string[]): Record<string, string> {
  const out: Record<string, string> = {}
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i]
    const value = argv[i + 1]
    if (!key.startsWith('--') || value === undefined) {
      throw new Error(`expected --flag value pairs, got '${argv.slice(i).join(' ')}'`)
    }
    out[key.slice(2)] = value
  }
  return out
}

const USAGE = `usage: node dist/cli.js --model DIR --inputs X.npy --labels Y.npy --out DIR
                   [--batch-size 64] [--seed 0] [--val-fraction 0.1] [--ho-fraction 0.45]`

async function main() {
  const args = parseArgs(process.argv.slice(2))
  for (const required of ['model', 'inputs', 'labels', 'out']) {
    if (!(required in args)) {
      console.error(`missing --${required}\n${USAGE}`)
      process.exit(2)
    }
  }
  const summaries = await exportSplits({
    modelDir: args.model,
    inputsPath: args.inputs,
    labelsPath: args.labels,
    outDir: args.out,
    batchSize: args['batch-size'] ? Number(args['batch-size']) : undefined,
    seed: args.seed ? Number(args.seed) : undefined,
    valFraction: args['val-fraction'] ? Number(args['val-fraction']) : undefined,
    hoFraction: args['ho-fraction'] ? Number(args['ho-fraction']) : undefined,
  })
  for (const s of summaries) {
    console.log(
      `${s.split}: ${s.count} rows, ${s.featureDim} features, ` +
        `${s.numClasses} classes, accuracy ${s.accuracy.toFixed(4)}`,
    )
  }
}

main().catch((err) => {
  console.error(String(err instanceof Error ? err.message : err))
  process.exit(1)
})
