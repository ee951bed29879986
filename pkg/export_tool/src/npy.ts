/**
 * Minimal NPY v1.0 reader/writer for the shapes this tool exchanges:
 * little-endian float64/float32/int64 payloads of rank 1 or 2, C order.
 * The header is laid out exactly like numpy's so either side can read
 * the other's files byte for byte.
 */

import { readFileSync, writeFileSync } from 'fs'

const MAGIC = Buffer.from('\x93NUMPY\x01\x00', 'latin1')

export type NpyArray = {
  descr: '<f8' | '<f4' | '<i8'
  shape: number[]
  /** row-major values; int64 entries are exact for |v| < 2^53 */
  data: number[]
}

function headerFor(descr: string, shape: number[]): Buffer {
  const shapeStr =
    shape.length === 1 ? `(${shape[0]},)` : `(${shape[0]}, ${shape[1]})`
  let text = `{'descr': '${descr}', 'fortran_order': False, 'shape': ${shapeStr}, }`
  const unpadded = MAGIC.length + 2 + text.length + 1
  text += ' '.repeat((64 - (unpadded % 64)) % 64) + '\n'
  return Buffer.from(text, 'latin1')
}

function writeNpy(path: string, descr: '<f8' | '<i8', shape: number[], values: number[]) {
  const header = headerFor(descr, shape)
  const lengthField = Buffer.alloc(2)
  lengthField.writeUInt16LE(header.length)
  const payload = Buffer.alloc(values.length * 8)
  for (let i = 0; i < values.length; i++) {
    if (descr === '<f8') {
      payload.writeDoubleLE(values[i], i * 8)
    } else {
      payload.writeBigInt64LE(BigInt(Math.round(values[i])), i * 8)
    }
  }
  writeFileSync(path, Buffer.concat([MAGIC, lengthField, header, payload]))
}

export function writeNpyMatrix(path: string, rows: number, cols: number, values: number[]) {
  if (values.length !== rows * cols) {
    throw new Error(`matrix payload has ${values.length} values, expected ${rows * cols}`)
  }
  writeNpy(path, '<f8', [rows, cols], values)
}

export function writeNpyLabels(path: string, labels: number[]) {
  writeNpy(path, '<i8', [labels.length], labels)
}

export function readNpy(path: string): NpyArray {
  const buf = readFileSync(path)
  if (buf.length < 10 || !buf.subarray(0, 8).equals(MAGIC)) {
    throw new Error(`${path}: not an NPY v1.0 file`)
  }
  const headerLen = buf.readUInt16LE(8)
  const header = buf.subarray(10, 10 + headerLen).toString('latin1')
  const descrMatch = header.match(/'descr':\s*'([^']+)'/)
  const fortranMatch = header.match(/'fortran_order':\s*(True|False)/)
  const shapeMatch = header.match(/'shape':\s*\(([^)]*)\)/)
  if (!descrMatch || !fortranMatch || !shapeMatch) {
    throw new Error(`${path}: unparseable NPY header`)
  }
  if (fortranMatch[1] === 'True') {
    throw new Error(`${path}: fortran_order payloads are not supported`)
  }
  const descr = descrMatch[1] as NpyArray['descr']
  if (descr !== '<f8' && descr !== '<f4' && descr !== '<i8') {
    throw new Error(`${path}: unsupported dtype ${descr}`)
  }
  const shape = shapeMatch[1]
    .split(',')
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map(Number)
  if (shape.length < 1 || shape.length > 2 || shape.some((d) => !Number.isInteger(d) || d < 0)) {
    throw new Error(`${path}: unsupported shape (${shapeMatch[1]})`)
  }
  const count = shape.reduce((a, b) => a * b, 1)
  const itemSize = descr === '<f4' ? 4 : 8
  const payload = buf.subarray(10 + headerLen)
  if (payload.length !== count * itemSize) {
    throw new Error(`${path}: payload has ${payload.length} bytes, expected ${count * itemSize}`)
  }
  const data = new Array<number>(count)
  for (let i = 0; i < count; i++) {
    if (descr === '<f8') data[i] = payload.readDoubleLE(i * 8)
    else if (descr === '<f4') data[i] = payload.readFloatLE(i * 4)
    else data[i] = Number(payload.readBigInt64LE(i * 8))
  }
  return { descr, shape, data }
}
