import { readFileSync } from "node:fs"
import { join } from "node:path"

import { LoadedBundle, loadBundleFromBuffers } from "../src/bundle.js"
import { GoldenFrame } from "../src/types.js"

export const FIXTURE_DIR = join(__dirname, "..", "fixtures", "toy_bundle")

export function fixturePath(...parts: string[]): string {
  return join(FIXTURE_DIR, ...parts)
}

export function readFixture(...parts: string[]): Buffer {
  return readFileSync(fixturePath(...parts))
}

export async function loadFixtureBundle(verify = true): Promise<LoadedBundle> {
  const manifestText = readFixture("manifest.json").toString("utf-8")
  return loadBundleFromBuffers(
    manifestText,
    async (entry) => {
      const buf = readFixture(entry.file)
      return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength)
    },
    verify
  )
}

export function loadGolden(): { frames: GoldenFrame[] } {
  return JSON.parse(readFixture("golden.json").toString("utf-8"))
}
