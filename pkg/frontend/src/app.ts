import { loadBundleFromBuffers, loadBundleFromUrl, LoadedBundle } from "./bundle.js"
import { cameraFromEntry, orbitFromCamera, orbitPose, OrbitState, Pinhole } from "./camera.js"
import { frameGaussians, windowOfFrame } from "./deform.js"
import { SplatRenderer } from "./renderer.js"
import { FrameGaussians } from "./types.js"

interface ViewerState {
  bundle: LoadedBundle
  orbit: OrbitState
  frame: number
  playing: boolean
  renderScale: number
  cachedFrame: number
  cachedSplats: FrameGaussians | null
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing element #${id}`)
  return node as T
}

function currentCamera(state: ViewerState): Pinhole {
  const base = cameraFromEntry(state.bundle.manifest.cameras[0])
  const scale = state.renderScale
  return {
    fx: base.fx * scale,
    fy: base.fy * scale,
    cx: (base.width * scale - 1) / 2,
    cy: (base.height * scale - 1) / 2,
    width: Math.round(base.width * scale),
    height: Math.round(base.height * scale),
    pose: orbitPose(state.orbit),
  }
}

function splatsForFrame(state: ViewerState): FrameGaussians {
  // MLP evaluation is cached until the time cursor (and thus window) changes.
  if (state.cachedSplats === null || state.cachedFrame !== state.frame) {
    state.cachedSplats = frameGaussians(state.bundle, state.frame)
    state.cachedFrame = state.frame
  }
  return state.cachedSplats
}

function startViewer(bundle: LoadedBundle) {
  const canvas = el<HTMLCanvasElement>("view")
  const renderer = new SplatRenderer(canvas)
  const params = new URLSearchParams(location.search)
  const orbit = orbitFromCamera(bundle.manifest.cameras[0])
  for (const [key, setter] of [
    ["theta", (v: number) => (orbit.theta = v)],
    ["phi", (v: number) => (orbit.phi = v)],
    ["r", (v: number) => (orbit.radius = v)],
  ] as const) {
    const raw = params.get(key)
    if (raw !== null && !Number.isNaN(parseFloat(raw))) setter(parseFloat(raw))
  }
  const state: ViewerState = {
    bundle,
    orbit,
    frame: Math.min(parseInt(params.get("frame") ?? "0", 10) || 0, bundle.manifest.n_frames - 1),
    playing: false,
    renderScale: 8,
    cachedFrame: -1,
    cachedSplats: null,
  }

  const scrubber = el<HTMLInputElement>("time")
  scrubber.max = String(bundle.manifest.n_frames - 1)
  scrubber.value = String(state.frame)
  const info = el<HTMLSpanElement>("info")
  const playBtn = el<HTMLButtonElement>("play")

  let dirty = true
  const markDirty = () => {
    dirty = true
  }

  scrubber.addEventListener("input", () => {
    state.frame = parseInt(scrubber.value, 10)
    markDirty()
  })
  playBtn.addEventListener("click", () => {
    state.playing = !state.playing
    playBtn.textContent = state.playing ? "pause" : "play"
  })

  let dragging = false
  let last = [0, 0]
  canvas.addEventListener("mousedown", (e) => {
    dragging = true
    last = [e.clientX, e.clientY]
  })
  window.addEventListener("mouseup", () => (dragging = false))
  window.addEventListener("mousemove", (e) => {
    if (!dragging) return
    state.orbit.theta += (e.clientX - last[0]) * 0.01
    state.orbit.phi = Math.max(-1.4, Math.min(1.4, state.orbit.phi + (e.clientY - last[1]) * 0.01))
    last = [e.clientX, e.clientY]
    markDirty()
  })
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault()
    state.orbit.radius = Math.max(0.5, state.orbit.radius * Math.exp(e.deltaY * 0.001))
    markDirty()
  })

  let lastTick = performance.now()
  const frameDuration = 1000 / 8 // playback speed: 8 fps over the toy sequences
  function tick(now: number) {
    if (state.playing && now - lastTick >= frameDuration) {
      state.frame = (state.frame + 1) % bundle.manifest.n_frames
      scrubber.value = String(state.frame)
      lastTick = now
      dirty = true
    }
    if (dirty) {
      dirty = false
      const cam = currentCamera(state)
      renderer.render(splatsForFrame(state), cam, bundle.manifest.background)
      const w = windowOfFrame(state.bundle.models, state.frame)
      info.textContent =
        `frame ${state.frame} | window ${w} ` +
        `[${bundle.manifest.windows[w].frame_start}..${bundle.manifest.windows[w].frame_end}] | ` +
        `${state.bundle.models[w].count} splats | ${renderer.backend}`
    }
    requestAnimationFrame(tick)
  }
  requestAnimationFrame(tick)
}

async function boot() {
  const status = el<HTMLSpanElement>("status")
  const params = new URLSearchParams(location.search)
  const bundleUrl = params.get("bundle") ?? "bundle"
  try {
    const bundle = await loadBundleFromUrl(bundleUrl)
    status.textContent = ""
    startViewer(bundle)
    return
  } catch (e) {
    status.textContent = `no bundle at '${bundleUrl}' (${e}); use the file picker`
  }
  const picker = el<HTMLInputElement>("picker")
  picker.addEventListener("change", async () => {
    const files = picker.files
    if (!files) return
    const byName = new Map<string, File>()
    for (let i = 0; i < files.length; i++) {
      const f = files[i]
      byName.set(f.webkitRelativePath.split("/").slice(1).join("/") || f.name, f)
    }
    const manifest = byName.get("manifest.json")
    if (!manifest) {
      status.textContent = "selection must include manifest.json"
      return
    }
    try {
      const bundle = await loadBundleFromBuffers(await manifest.text(), async (entry) => {
        const file = byName.get(entry.file)
        if (!file) throw new Error(`missing ${entry.file}`)
        return await file.arrayBuffer()
      })
      status.textContent = ""
      startViewer(bundle)
    } catch (e) {
      status.textContent = String(e)
    }
  })
}

boot()
