export interface TunableLayerData {
  fIn: number
  fOut: number
  skip: boolean
  /** (M, fIn, fOut) row-major */
  weights: Float32Array
  /** (M, fOut) */
  biases: Float32Array
}

export interface MlpData {
  posM: number
  timeM: number
  layers: TunableLayerData[]
  heads: { dx: TunableLayerData; dr: TunableLayerData; ds: TunableLayerData }
}

export type MlpMode = "dynamic" | "regular" | "off"

export interface WindowModelData {
  count: number
  numModes: number
  shDegree: number
  frameStart: number
  frameEnd: number
  mode: MlpMode
  /** (N, 3) */
  means: Float32Array
  /** (N, 4) quaternions (w, x, y, z) */
  rotations: Float32Array
  /** (N, 3) log extents */
  logScales: Float32Array
  /** (N,) pre-sigmoid */
  opacities: Float32Array
  /** (N, K, 3) spherical-harmonic coefficients */
  shCoeffs: Float32Array
  /** (N, M) blending weights */
  alpha: Float32Array
  mlp: MlpData
  normMean: Float32Array
  normStd: Float32Array
}

export interface CameraEntry {
  id: string
  fx: number
  fy: number
  cx: number
  cy: number
  width: number
  height: number
  /** 4x4 world-to-camera, row-major */
  pose: number[]
}

export interface WindowEntry {
  index: number
  frame_start: number
  frame_end: number
  file: string
  sha256: string
  count: number
}

export interface BundleManifest {
  magic: string
  version: number
  n_frames: number
  cameras: CameraEntry[]
  train_views: string[]
  test_views: string[]
  background: number[]
  windows: WindowEntry[]
  flicker_budget: number | null
  eval_view?: string
  golden?: string
}

export interface GoldenFrame {
  frame: number
  window: number
  t: number
  means: number[][]
  rotations: number[][]
  log_scales: number[][]
  opacities: number[]
}

/** Deformed per-frame splats ready for projection/rendering. */
export interface FrameGaussians {
  count: number
  shDegree: number
  /** (N, 3) */
  means: Float64Array
  /** (N, 4) unit quaternions */
  rotations: Float64Array
  /** (N, 3) log extents */
  logScales: Float64Array
  /** (N,) realized opacity in (0, 1) */
  opacities: Float64Array
  /** (N, K, 3) */
  shCoeffs: Float32Array
}
