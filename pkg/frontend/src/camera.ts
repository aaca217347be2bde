import { CameraEntry } from "./types.js"

export interface Pinhole {
  fx: number
  fy: number
  cx: number
  cy: number
  width: number
  height: number
  /** 4x4 world-to-camera, row-major */
  pose: number[]
}

export function cameraFromEntry(entry: CameraEntry): Pinhole {
  return { ...entry, pose: [...entry.pose] }
}

function cross(a: number[], b: number[]): number[] {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

function normalize(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2])
  return [v[0] / n, v[1] / n, v[2] / n]
}

/** World-to-camera pose with +z toward the target (matches the trainer). */
export function lookAt(eye: number[], target: number[], up = [0, 1, 0]): number[] {
  const z = normalize([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]])
  let x = cross(z, up)
  if (Math.hypot(x[0], x[1], x[2]) < 1e-8) x = cross(z, [1, 0, 0])
  x = normalize(x)
  const y = cross(z, x)
  const r = [x, y, z]
  const t = [0, 1, 2].map((i) => -(r[i][0] * eye[0] + r[i][1] * eye[1] + r[i][2] * eye[2]))
  return [
    x[0], x[1], x[2], t[0],
    y[0], y[1], y[2], t[1],
    z[0], z[1], z[2], t[2],
    0, 0, 0, 1,
  ]
}

export interface OrbitState {
  theta: number // azimuth, radians
  phi: number // elevation, radians
  radius: number
  target: number[]
}

export function orbitPose(orbit: OrbitState): number[] {
  const cp = Math.cos(orbit.phi)
  const eye = [
    orbit.target[0] + orbit.radius * Math.sin(orbit.theta) * cp,
    orbit.target[1] + orbit.radius * Math.sin(orbit.phi),
    orbit.target[2] - orbit.radius * Math.cos(orbit.theta) * cp,
  ]
  return lookAt(eye, orbit.target)
}

export function cameraCenter(pose: number[]): number[] {
  // c = -R^T t for row-major [R|t]
  const r = pose
  return [
    -(r[0] * r[3] + r[4] * r[7] + r[8] * r[11]),
    -(r[1] * r[3] + r[5] * r[7] + r[9] * r[11]),
    -(r[2] * r[3] + r[6] * r[7] + r[10] * r[11]),
  ]
}

/** Initial orbit parameters looking at the origin from a rig camera's center. */
export function orbitFromCamera(entry: CameraEntry): OrbitState {
  const c = cameraCenter(entry.pose)
  const radius = Math.hypot(c[0], c[1], c[2]) || 3.0
  const phi = Math.asin(c[1] / radius)
  const theta = Math.atan2(c[0], -c[2])
  return { theta, phi, radius, target: [0, 0, 0] }
}

export function transformPoint(pose: number[], p: number[]): number[] {
  return [
    pose[0] * p[0] + pose[1] * p[1] + pose[2] * p[2] + pose[3],
    pose[4] * p[0] + pose[5] * p[1] + pose[6] * p[2] + pose[7],
    pose[8] * p[0] + pose[9] * p[1] + pose[10] * p[2] + pose[11],
  ]
}
