import { deform } from "./mlp.js"
import { FrameGaussians, WindowModelData } from "./types.js"

/** Index of the window owning a global frame; overlap frames go to the later window. */
export function windowOfFrame(models: { frameStart: number; frameEnd: number }[], frame: number): number {
  for (let k = models.length - 1; k >= 0; k--) {
    if (models[k].frameStart <= frame && frame <= models[k].frameEnd) return k
  }
  throw new Error(`frame ${frame} outside every window`)
}

export function normalizedTime(model: { frameStart: number; frameEnd: number }, frame: number): number {
  const n = model.frameEnd - model.frameStart
  return n === 0 ? 0 : (frame - model.frameStart) / n
}

function sigmoid(x: number): number {
  return 1 / (1 + Math.exp(-x))
}

/** Deformed per-frame splats for one window model at a global frame index. */
export function frameGaussiansOfModel(model: WindowModelData, frame: number): FrameGaussians {
  const n = model.count
  const t = normalizedTime(model, frame)
  const means = new Float64Array(n * 3)
  const rotations = new Float64Array(n * 4)
  const logScales = new Float64Array(n * 3)
  const opacities = new Float64Array(n)

  let dx: Float64Array | null = null
  let dr: Float64Array | null = null
  let ds: Float64Array | null = null
  if (model.mode !== "off") {
    const normPos = new Float64Array(n * 3)
    for (let i = 0; i < n; i++) {
      for (let d = 0; d < 3; d++) {
        normPos[i * 3 + d] = (model.means[i * 3 + d] - model.normMean[d]) / model.normStd[d]
      }
    }
    const out = deform(model.mlp, normPos, t, model.alpha, model.numModes)
    dx = out.dx
    dr = out.dr
    ds = out.ds
  }

  for (let i = 0; i < n; i++) {
    for (let d = 0; d < 3; d++) {
      means[i * 3 + d] = model.means[i * 3 + d] + (dx ? dx[i * 3 + d] : 0)
      logScales[i * 3 + d] = model.logScales[i * 3 + d] + (ds ? ds[i * 3 + d] : 0)
    }
    let norm = 0
    const q = [0, 0, 0, 0]
    for (let d = 0; d < 4; d++) {
      q[d] = model.rotations[i * 4 + d] + (dr ? dr[i * 4 + d] : 0)
      norm += q[d] * q[d]
    }
    norm = Math.sqrt(norm)
    for (let d = 0; d < 4; d++) rotations[i * 4 + d] = q[d] / norm
    opacities[i] = sigmoid(model.opacities[i])
  }
  return {
    count: n,
    shDegree: model.shDegree,
    means,
    rotations,
    logScales,
    opacities,
    shCoeffs: model.shCoeffs,
  }
}

/** Per-frame splats for a whole bundle (picks the owning window first). */
export function frameGaussians(bundle: { models: WindowModelData[] }, frame: number): FrameGaussians {
  const k = windowOfFrame(bundle.models, frame)
  return frameGaussiansOfModel(bundle.models[k], frame)
}
