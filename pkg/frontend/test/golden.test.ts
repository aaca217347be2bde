import { describe, expect, it } from "vitest"

import { cameraFromEntry, orbitPose } from "../src/camera.js"
import { frameGaussians, windowOfFrame } from "../src/deform.js"
import { meanAbsDiff, renderCpu } from "../src/rendercpu.js"
import { loadFixtureBundle, loadGolden } from "./util.js"

describe("golden-vector parity with the training pipeline", () => {
  it("matches deformed attributes within 1e-4", async () => {
    const bundle = await loadFixtureBundle()
    const golden = loadGolden()
    expect(golden.frames.length).toBeGreaterThan(0)
    for (const ref of golden.frames) {
      const k = windowOfFrame(bundle.models, ref.frame)
      expect(k).toBe(ref.window)
      const splats = frameGaussians(bundle, ref.frame)
      expect(splats.count).toBe(ref.means.length)
      let worst = 0
      for (let i = 0; i < splats.count; i++) {
        for (let d = 0; d < 3; d++) {
          worst = Math.max(worst, Math.abs(splats.means[i * 3 + d] - ref.means[i][d]))
          worst = Math.max(worst, Math.abs(splats.logScales[i * 3 + d] - ref.log_scales[i][d]))
        }
        // quaternion sign is a gauge freedom; compare up to sign
        let dot = 0
        for (let d = 0; d < 4; d++) dot += splats.rotations[i * 4 + d] * ref.rotations[i][d]
        const sign = dot >= 0 ? 1 : -1
        for (let d = 0; d < 4; d++) {
          worst = Math.max(worst, Math.abs(sign * splats.rotations[i * 4 + d] - ref.rotations[i][d]))
        }
        worst = Math.max(worst, Math.abs(splats.opacities[i] - ref.opacities[i]))
      }
      expect(worst).toBeLessThan(1e-4)
    }
  })

  it("selects the later window at overlap frames", async () => {
    const bundle = await loadFixtureBundle()
    if (bundle.models.length < 2) return
    for (let k = 1; k < bundle.models.length; k++) {
      const overlap = bundle.models[k].frameStart
      expect(bundle.models[k - 1].frameEnd).toBe(overlap)
      expect(windowOfFrame(bundle.models, overlap)).toBe(k)
    }
  })
})

describe("playback across the fine-tuned overlap", () => {
  it("keeps successive-frame pixel deltas within the bundle's flicker budget", async () => {
    const bundle = await loadFixtureBundle()
    const budget = bundle.manifest.flicker_budget
    if (budget == null || bundle.models.length < 2) return
    const evalId = bundle.manifest.eval_view ?? bundle.manifest.cameras[0].id
    const entry = bundle.manifest.cameras.find((c) => c.id === evalId)!
    const cam = cameraFromEntry(entry)
    for (let k = 1; k < bundle.models.length; k++) {
      const overlap = bundle.models[k].frameStart
      const frames = [overlap - 1, overlap, overlap + 1].filter(
        (f) => f >= 0 && f < bundle.manifest.n_frames
      )
      const renders = frames.map((f) =>
        renderCpu(frameGaussians(bundle, f), cam, bundle.manifest.background)
      )
      for (let i = 1; i < renders.length; i++) {
        const delta = meanAbsDiff(renders[i], renders[i - 1])
        expect(delta).toBeLessThanOrEqual(budget)
      }
    }
  })

  it("orbiting a full turn reproduces the same image", async () => {
    const bundle = await loadFixtureBundle()
    const base = cameraFromEntry(bundle.manifest.cameras[0])
    const orbit = { theta: 0.35, phi: 0.2, radius: 3.2, target: [0, 0, 0] }
    const splats = frameGaussians(bundle, 0)
    const a = renderCpu(splats, { ...base, pose: orbitPose(orbit) }, bundle.manifest.background)
    const b = renderCpu(
      splats,
      { ...base, pose: orbitPose({ ...orbit, theta: orbit.theta + 2 * Math.PI }) },
      bundle.manifest.background
    )
    expect(meanAbsDiff(a, b)).toBeLessThan(1e-9)
  })
})
