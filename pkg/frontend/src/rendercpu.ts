import { cameraCenter, Pinhole, transformPoint } from "./camera.js"
import { FrameGaussians } from "./types.js"

const COV2D_FLOOR = 0.3
const NEAR_PLANE = 0.01
const MAX_MAHAL_SQ = 9.0
const ALPHA_MIN = 1.0 / 255.0
const SH_C0 = 0.28209479177387814
const SH_C1 = 0.4886025119029199

interface ProjectedSplat {
  u: number
  v: number
  depth: number
  conic: [number, number, number] // (a, b, c) of [[a, b], [b, c]]
  radiusX: number
  radiusY: number
  color: [number, number, number]
  opacity: number
}

function quatToMat(q: Float64Array, i: number): number[] {
  const w = q[i * 4], x = q[i * 4 + 1], y = q[i * 4 + 2], z = q[i * 4 + 3]
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ]
}

export function shColor(splats: FrameGaussians, i: number, dir: number[]): [number, number, number] {
  const k = (splats.shDegree + 1) * (splats.shDegree + 1)
  const base = i * k * 3
  const out: [number, number, number] = [0, 0, 0]
  for (let c = 0; c < 3; c++) out[c] = SH_C0 * splats.shCoeffs[base + c]
  if (splats.shDegree >= 1) {
    const b1 = -SH_C1 * dir[1]
    const b2 = SH_C1 * dir[2]
    const b3 = -SH_C1 * dir[0]
    for (let c = 0; c < 3; c++) {
      out[c] +=
        b1 * splats.shCoeffs[base + 3 + c] +
        b2 * splats.shCoeffs[base + 6 + c] +
        b3 * splats.shCoeffs[base + 9 + c]
    }
  }
  return [Math.max(out[0], 0), Math.max(out[1], 0), Math.max(out[2], 0)]
}

export function projectSplats(splats: FrameGaussians, cam: Pinhole): ProjectedSplat[] {
  const center = cameraCenter(cam.pose)
  const out: ProjectedSplat[] = []
  for (let i = 0; i < splats.count; i++) {
    const p = [splats.means[i * 3], splats.means[i * 3 + 1], splats.means[i * 3 + 2]]
    const pc = transformPoint(cam.pose, p)
    const z = pc[2]
    if (z <= NEAR_PLANE) continue
    const u = (cam.fx * pc[0]) / z + cam.cx
    const v = (cam.fy * pc[1]) / z + cam.cy

    // cov3 = (R diag(s)) (R diag(s))^T, then camera rotation and the
    // perspective Jacobian take it to screen space.
    const R = quatToMat(splats.rotations, i)
    const s = [
      Math.exp(splats.logScales[i * 3]),
      Math.exp(splats.logScales[i * 3 + 1]),
      Math.exp(splats.logScales[i * 3 + 2]),
    ]
    const M = R.map((val, idx) => val * s[idx % 3])
    const cov3 = new Array(9).fill(0)
    for (let r = 0; r < 3; r++)
      for (let c = 0; c < 3; c++)
        for (let j = 0; j < 3; j++) cov3[r * 3 + c] += M[r * 3 + j] * M[c * 3 + j]

    const W = [
      cam.pose[0], cam.pose[1], cam.pose[2],
      cam.pose[4], cam.pose[5], cam.pose[6],
      cam.pose[8], cam.pose[9], cam.pose[10],
    ]
    const J = [cam.fx / z, 0, (-cam.fx * pc[0]) / (z * z), 0, cam.fy / z, (-cam.fy * pc[1]) / (z * z)]
    // T = J * W (2x3)
    const T = new Array(6).fill(0)
    for (let r = 0; r < 2; r++)
      for (let c = 0; c < 3; c++)
        for (let j = 0; j < 3; j++) T[r * 3 + c] += J[r * 3 + j] * W[j * 3 + c]
    // cov2 = T cov3 T^T + floor
    const tmp = new Array(6).fill(0)
    for (let r = 0; r < 2; r++)
      for (let c = 0; c < 3; c++)
        for (let j = 0; j < 3; j++) tmp[r * 3 + c] += T[r * 3 + j] * cov3[j * 3 + c]
    let a = COV2D_FLOOR, b = 0, cc = COV2D_FLOOR
    for (let j = 0; j < 3; j++) {
      a += tmp[j] * T[j]
      b += tmp[j] * T[3 + j]
      cc += tmp[3 + j] * T[3 + j]
    }
    const det = a * cc - b * b
    const conic: [number, number, number] = [cc / det, -b / det, a / det]

    const dir = [p[0] - center[0], p[1] - center[1], p[2] - center[2]]
    const dn = Math.hypot(dir[0], dir[1], dir[2])
    const color = shColor(splats, i, [dir[0] / dn, dir[1] / dn, dir[2] / dn])
    out.push({
      u,
      v,
      depth: z,
      conic,
      radiusX: 3 * Math.sqrt(a),
      radiusY: 3 * Math.sqrt(cc),
      color,
      opacity: splats.opacities[i],
    })
  }
  out.sort((p, q) => p.depth - q.depth)
  return out
}

/** Reference CPU compositor; mirrors the training renderer's rules exactly. */
export function renderCpu(
  splats: FrameGaussians,
  cam: Pinhole,
  background: number[]
): Float64Array {
  const { width, height } = cam
  const img = new Float64Array(width * height * 3)
  const trans = new Float64Array(width * height).fill(1)
  const projected = projectSplats(splats, cam)
  for (const sp of projected) {
    const x0 = Math.max(0, Math.ceil(sp.u - sp.radiusX))
    const x1 = Math.min(width - 1, Math.floor(sp.u + sp.radiusX))
    const y0 = Math.max(0, Math.ceil(sp.v - sp.radiusY))
    const y1 = Math.min(height - 1, Math.floor(sp.v + sp.radiusY))
    for (let py = y0; py <= y1; py++) {
      for (let px = x0; px <= x1; px++) {
        const dx = px - sp.u
        const dy = py - sp.v
        const m = sp.conic[0] * dx * dx + 2 * sp.conic[1] * dx * dy + sp.conic[2] * dy * dy
        if (m > MAX_MAHAL_SQ) continue
        const alpha = sp.opacity * Math.exp(-0.5 * m)
        if (alpha < ALPHA_MIN) continue
        const idx = py * width + px
        const w = trans[idx] * alpha
        img[idx * 3] += w * sp.color[0]
        img[idx * 3 + 1] += w * sp.color[1]
        img[idx * 3 + 2] += w * sp.color[2]
        trans[idx] *= 1 - alpha
      }
    }
  }
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      const v = img[i * 3 + c] + trans[i] * background[c]
      img[i * 3 + c] = Math.min(1, Math.max(0, v))
    }
  }
  return img
}

export function meanAbsDiff(a: Float64Array, b: Float64Array): number {
  let acc = 0
  for (let i = 0; i < a.length; i++) acc += Math.abs(a[i] - b[i])
  return acc / a.length
}
