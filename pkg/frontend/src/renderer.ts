import { Pinhole } from "./camera.js"
import { projectSplats, renderCpu } from "./rendercpu.js"
import { FrameGaussians } from "./types.js"

const VERT = `#version 300 es
precision highp float;
layout(location=0) in vec2 corner;      // quad corner in [-1,1]
layout(location=1) in vec2 center;      // pixel-space splat center
layout(location=2) in vec3 conic;       // (a, b, c)
layout(location=3) in vec2 radius;      // 3-sigma extents in pixels
layout(location=4) in vec4 colorAlpha;  // rgb + opacity
uniform vec2 viewport;
out vec2 vOffset;
out vec3 vConic;
out vec4 vColorAlpha;
void main() {
  vec2 px = center + corner * radius;
  vec2 clip = (px / viewport) * 2.0 - 1.0;
  gl_Position = vec4(clip.x, -clip.y, 0.0, 1.0);
  vOffset = corner * radius;
  vConic = conic;
  vColorAlpha = colorAlpha;
}`

const FRAG = `#version 300 es
precision highp float;
in vec2 vOffset;
in vec3 vConic;
in vec4 vColorAlpha;
out vec4 frag;
void main() {
  float m = vConic.x * vOffset.x * vOffset.x
          + 2.0 * vConic.y * vOffset.x * vOffset.y
          + vConic.z * vOffset.y * vOffset.y;
  if (m > 9.0) discard;
  float alpha = vColorAlpha.a * exp(-0.5 * m);
  if (alpha < 0.00392156863) discard;
  frag = vec4(vColorAlpha.rgb * alpha, alpha);  // premultiplied
}`

function compile(gl: WebGL2RenderingContext, type: number, src: string): WebGLShader {
  const shader = gl.createShader(type)!
  gl.shaderSource(shader, src)
  gl.compileShader(shader)
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(`shader compile failed: ${gl.getShaderInfoLog(shader)}`)
  }
  return shader
}

/** Depth-sorted textured-quad splat renderer (WebGL2, premultiplied alpha,
 * back-to-front blending). Falls back to the CPU compositor when WebGL is
 * unavailable. */
export class SplatRenderer {
  private gl: WebGL2RenderingContext | null
  private program: WebGLProgram | null = null
  private quadBuffer: WebGLBuffer | null = null
  private instanceBuffer: WebGLBuffer | null = null
  private ctx2d: CanvasRenderingContext2D | null = null

  constructor(private canvas: HTMLCanvasElement) {
    this.gl = canvas.getContext("webgl2", { premultipliedAlpha: true })
    if (this.gl) {
      this.setupGl(this.gl)
    } else {
      this.ctx2d = canvas.getContext("2d")
    }
  }

  get backend(): string {
    return this.gl ? "webgl2" : "cpu"
  }

  private setupGl(gl: WebGL2RenderingContext) {
    const program = gl.createProgram()!
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERT))
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAG))
    gl.linkProgram(program)
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`)
    }
    this.program = program
    this.quadBuffer = gl.createBuffer()
    gl.bindBuffer(gl.ARRAY_BUFFER, this.quadBuffer)
    gl.bufferData(
      gl.ARRAY_BUFFER,
      new Float32Array([-1, -1, 1, -1, -1, 1, 1, 1]),
      gl.STATIC_DRAW
    )
    this.instanceBuffer = gl.createBuffer()
  }

  render(splats: FrameGaussians, cam: Pinhole, background: number[]) {
    if (this.gl) {
      this.renderGl(this.gl, splats, cam, background)
    } else if (this.ctx2d) {
      this.renderFallback(splats, cam, background)
    }
  }

  private renderGl(
    gl: WebGL2RenderingContext,
    splats: FrameGaussians,
    cam: Pinhole,
    background: number[]
  ) {
    const projected = projectSplats(splats, cam).reverse() // back to front
    const stride = 11
    const data = new Float32Array(projected.length * stride)
    projected.forEach((sp, i) => {
      data.set(
        [sp.u, sp.v, sp.conic[0], sp.conic[1], sp.conic[2], sp.radiusX, sp.radiusY,
         sp.color[0], sp.color[1], sp.color[2], sp.opacity],
        i * stride
      )
    })

    this.canvas.width = cam.width
    this.canvas.height = cam.height
    gl.viewport(0, 0, cam.width, cam.height)
    gl.clearColor(background[0], background[1], background[2], 1)
    gl.clear(gl.COLOR_BUFFER_BIT)
    gl.enable(gl.BLEND)
    gl.blendFunc(gl.ONE, gl.ONE_MINUS_SRC_ALPHA)
    gl.useProgram(this.program)
    gl.uniform2f(gl.getUniformLocation(this.program!, "viewport"), cam.width, cam.height)

    gl.bindBuffer(gl.ARRAY_BUFFER, this.quadBuffer)
    gl.enableVertexAttribArray(0)
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0)

    gl.bindBuffer(gl.ARRAY_BUFFER, this.instanceBuffer)
    gl.bufferData(gl.ARRAY_BUFFER, data, gl.DYNAMIC_DRAW)
    const attrs: [number, number, number][] = [
      [1, 2, 0],  // center
      [2, 3, 2],  // conic
      [3, 2, 5],  // radius
      [4, 4, 7],  // color + alpha
    ]
    for (const [loc, size, offset] of attrs) {
      gl.enableVertexAttribArray(loc)
      gl.vertexAttribPointer(loc, size, gl.FLOAT, false, stride * 4, offset * 4)
      gl.vertexAttribDivisor(loc, 1)
    }
    gl.drawArraysInstanced(gl.TRIANGLE_STRIP, 0, 4, projected.length)
  }

  private renderFallback(splats: FrameGaussians, cam: Pinhole, background: number[]) {
    const img = renderCpu(splats, cam, background)
    const ctx = this.ctx2d!
    this.canvas.width = cam.width
    this.canvas.height = cam.height
    const pixels = ctx.createImageData(cam.width, cam.height)
    for (let i = 0; i < cam.width * cam.height; i++) {
      pixels.data[i * 4] = Math.round(img[i * 3] * 255)
      pixels.data[i * 4 + 1] = Math.round(img[i * 3 + 1] * 255)
      pixels.data[i * 4 + 2] = Math.round(img[i * 3 + 2] * 255)
      pixels.data[i * 4 + 3] = 255
    }
    ctx.putImageData(pixels, 0, 0)
  }
}
