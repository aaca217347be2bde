import {
  BundleManifest,
  MlpData,
  MlpMode,
  TunableLayerData,
  WindowModelData,
} from "./types.js"

const MAGIC = "SWSPLAT1"
const SUPPORTED_VERSION = 1
const MODE_NAMES: MlpMode[] = ["dynamic", "regular", "off"]

export class ParseError extends Error {
  constructor(message: string, public readonly offset: number) {
    super(`${message} (byte ${offset})`)
  }
}

export class UnsupportedVersion extends Error {
  constructor(public readonly version: number) {
    super(`unsupported bundle version ${version}`)
  }
}

class Reader {
  private view: DataView
  offset = 0

  constructor(private buffer: ArrayBuffer) {
    this.view = new DataView(buffer)
  }

  private need(bytes: number) {
    if (this.offset + bytes > this.buffer.byteLength) {
      throw new ParseError(`blob truncated: wanted ${bytes} more bytes`, this.offset)
    }
  }

  ascii(n: number): string {
    this.need(n)
    const out = new TextDecoder().decode(new Uint8Array(this.buffer, this.offset, n))
    this.offset += n
    return out
  }

  u32(): number {
    this.need(4)
    const v = this.view.getUint32(this.offset, true)
    this.offset += 4
    return v
  }

  i32(): number {
    this.need(4)
    const v = this.view.getInt32(this.offset, true)
    this.offset += 4
    return v
  }

  f32array(count: number): Float32Array {
    this.need(4 * count)
    // copy out so alignment of the source buffer never matters
    const out = new Float32Array(count)
    for (let i = 0; i < count; i++) out[i] = this.view.getFloat32(this.offset + 4 * i, true)
    this.offset += 4 * count
    return out
  }

  get exhausted(): boolean {
    return this.offset === this.buffer.byteLength
  }
}

function readLayer(r: Reader, numModes: number, withSkip: boolean): TunableLayerData {
  const fIn = r.u32()
  const fOut = r.u32()
  const skip = withSkip ? r.u32() !== 0 : false
  const weights = r.f32array(numModes * fIn * fOut)
  const biases = r.f32array(numModes * fOut)
  return { fIn, fOut, skip, weights, biases }
}

export function parseWindowModel(buffer: ArrayBuffer): WindowModelData {
  const r = new Reader(buffer)
  if (r.ascii(8) !== MAGIC) throw new ParseError("bad model magic", 0)
  const version = r.u32()
  if (version !== SUPPORTED_VERSION) throw new UnsupportedVersion(version)
  const count = r.u32()
  const numModes = r.u32()
  const shDegree = r.u32()
  const frameStart = r.i32()
  const frameEnd = r.i32()
  const mode = MODE_NAMES[r.u32()] ?? "dynamic"
  const k = (shDegree + 1) * (shDegree + 1)

  const means = r.f32array(count * 3)
  const rotations = r.f32array(count * 4)
  const logScales = r.f32array(count * 3)
  const opacities = r.f32array(count)
  const shCoeffs = r.f32array(count * k * 3)
  const alpha = r.f32array(count * numModes)

  const posM = r.u32()
  const timeM = r.u32()
  const nLayers = r.u32()
  const layers: TunableLayerData[] = []
  for (let i = 0; i < nLayers; i++) layers.push(readLayer(r, numModes, true))
  const heads = {
    dx: readLayer(r, numModes, false),
    dr: readLayer(r, numModes, false),
    ds: readLayer(r, numModes, false),
  }
  const mlp: MlpData = { posM, timeM, layers, heads }
  const normMean = r.f32array(3)
  const normStd = r.f32array(3)
  if (!r.exhausted) throw new ParseError("trailing bytes after model payload", r.offset)
  return {
    count,
    numModes,
    shDegree,
    frameStart,
    frameEnd,
    mode,
    means,
    rotations,
    logScales,
    opacities,
    shCoeffs,
    alpha,
    mlp,
    normMean,
    normStd,
  }
}

export function parseManifest(text: string): BundleManifest {
  let manifest: BundleManifest
  try {
    manifest = JSON.parse(text)
  } catch (e) {
    throw new ParseError(`manifest is not JSON: ${e}`, 0)
  }
  if (manifest.magic !== "swsplat-bundle") throw new ParseError("not a scene bundle manifest", 0)
  if (manifest.version !== SUPPORTED_VERSION) throw new UnsupportedVersion(manifest.version)
  if (!Array.isArray(manifest.windows) || manifest.windows.length === 0) {
    throw new ParseError("manifest has no windows", 0)
  }
  return manifest
}

export async function sha256Hex(buffer: ArrayBuffer): Promise<string> {
  const digest = await crypto.subtle.digest("SHA-256", buffer)
  return [...new Uint8Array(digest)].map((b) => b.toString(16).padStart(2, "0")).join("")
}

export async function verifyWindowChecksum(buffer: ArrayBuffer, expected: string): Promise<void> {
  const got = await sha256Hex(buffer)
  if (got !== expected) {
    throw new ParseError(`checksum mismatch: ${got} != ${expected}`, 0)
  }
}

/** Fully parsed bundle: manifest plus every window model, checksums verified. */
export interface LoadedBundle {
  manifest: BundleManifest
  models: WindowModelData[]
}

export async function loadBundleFromBuffers(
  manifestText: string,
  windowBuffers: (entry: { file: string }) => Promise<ArrayBuffer>,
  verify = true
): Promise<LoadedBundle> {
  const manifest = parseManifest(manifestText)
  const models: WindowModelData[] = []
  for (const entry of manifest.windows) {
    const buffer = await windowBuffers(entry)
    if (verify) await verifyWindowChecksum(buffer, entry.sha256)
    const model = parseWindowModel(buffer)
    if (model.count !== entry.count) {
      throw new ParseError(
        `window ${entry.index}: blob has ${model.count} Gaussians, manifest says ${entry.count}`,
        0
      )
    }
    models.push(model)
  }
  return { manifest, models }
}

export async function loadBundleFromUrl(baseUrl: string, verify = true): Promise<LoadedBundle> {
  const base = baseUrl.replace(/\/?$/, "/")
  const manifestText = await (await fetch(base + "manifest.json")).text()
  return loadBundleFromBuffers(
    manifestText,
    async (entry) => await (await fetch(base + entry.file)).arrayBuffer(),
    verify
  )
}
