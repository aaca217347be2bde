import { MlpData, TunableLayerData } from "./types.js"

/** Sinusoidal encoding (x, sin(2^k pi x), cos(2^k pi x)) matching the trainer. */
export function encode(values: Float64Array, dim: number, m: number): Float64Array {
  const n = values.length / dim
  const outDim = dim + 2 * m * dim
  const out = new Float64Array(n * outDim)
  for (let i = 0; i < n; i++) {
    const base = i * outDim
    for (let d = 0; d < dim; d++) out[base + d] = values[i * dim + d]
    for (let k = 0; k < m; k++) {
      const freq = Math.pow(2, k) * Math.PI
      const lo = base + dim + 2 * k * dim
      for (let d = 0; d < dim; d++) {
        const fx = freq * values[i * dim + d]
        out[lo + d] = Math.sin(fx)
        out[lo + dim + d] = Math.cos(fx)
      }
    }
  }
  return out
}

/** y_i = sum_m alpha[i,m] * (x_i W_m + b_m) for row-major inputs. */
export function layerForward(
  layer: TunableLayerData,
  input: Float64Array,
  inDim: number,
  alpha: Float32Array,
  numModes: number
): Float64Array {
  const n = input.length / inDim
  if (inDim !== layer.fIn) throw new Error(`layer input dim ${inDim} != ${layer.fIn}`)
  const out = new Float64Array(n * layer.fOut)
  const { fIn, fOut, weights, biases } = layer
  for (let i = 0; i < n; i++) {
    for (let m = 0; m < numModes; m++) {
      const a = alpha[i * numModes + m]
      if (a === 0) continue
      const wBase = m * fIn * fOut
      for (let o = 0; o < fOut; o++) {
        let acc = biases[m * fOut + o]
        for (let j = 0; j < fIn; j++) {
          acc += input[i * fIn + j] * weights[wBase + j * fOut + o]
        }
        out[i * fOut + o] += a * acc
      }
    }
  }
  return out
}

function relu(x: Float64Array): Float64Array {
  for (let i = 0; i < x.length; i++) if (x[i] < 0) x[i] = 0
  return x
}

function concatRows(a: Float64Array, aDim: number, b: Float64Array, bDim: number): Float64Array {
  const n = a.length / aDim
  const out = new Float64Array(n * (aDim + bDim))
  for (let i = 0; i < n; i++) {
    out.set(a.subarray(i * aDim, (i + 1) * aDim), i * (aDim + bDim))
    out.set(b.subarray(i * bDim, (i + 1) * bDim), i * (aDim + bDim) + aDim)
  }
  return out
}

export interface Deformation {
  dx: Float64Array // (N, 3)
  dr: Float64Array // (N, 4)
  ds: Float64Array // (N, 3)
}

/** Per-Gaussian increments from normalized positions, time and blending rows. */
export function deform(
  mlp: MlpData,
  positions: Float64Array,
  t: number,
  alpha: Float32Array,
  numModes: number
): Deformation {
  const n = positions.length / 3
  const encPos = encode(positions, 3, mlp.posM)
  const posDim = 3 + 6 * mlp.posM
  const timeDim = 1 + 2 * mlp.timeM
  const encT1 = encode(new Float64Array([t]), 1, mlp.timeM)
  const encT = new Float64Array(n * timeDim)
  for (let i = 0; i < n; i++) encT.set(encT1, i * timeDim)
  const enc = concatRows(encPos, posDim, encT, timeDim)
  const encDim = posDim + timeDim

  let h = enc
  let hDim = encDim
  for (const layer of mlp.layers) {
    const input = layer.skip ? concatRows(h, hDim, enc, encDim) : h
    const inDim = layer.skip ? hDim + encDim : hDim
    h = relu(layerForward(layer, input, inDim, alpha, numModes))
    hDim = layer.fOut
  }
  return {
    dx: layerForward(mlp.heads.dx, h, hDim, alpha, numModes),
    dr: layerForward(mlp.heads.dr, h, hDim, alpha, numModes),
    ds: layerForward(mlp.heads.ds, h, hDim, alpha, numModes),
  }
}
