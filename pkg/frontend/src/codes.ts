// Latent-code state behind the sliders: grouping, bounds, edits, mixing.
// Pure functions only, so the decode round-trip contracts are unit-testable.

import type { LatentCode, Manifest } from "./api";

export interface SliderSpec {
  /** "beta" or the bone group index as a string; plus the dim inside it. */
  group: string;
  dim: number;
  label: string;
  min: number;
  max: number;
  value: number;
}

export interface SliderState {
  manifest: Manifest;
  beta: number[];
  thetas: number[][];
}

// pose residuals are tanh-bounded to (-1, 1) around the template base codes;
// identity codes get a symmetric span wide enough for every encoded body
const BETA_SPAN = 4.0;

export function initialState(manifest: Manifest): SliderState {
  return {
    manifest,
    beta: [...manifest.base_beta],
    thetas: manifest.base_thetas.map((row) => [...row]),
  };
}

export function sliderSpecs(state: SliderState): SliderSpec[] {
  const specs: SliderSpec[] = [];
  state.beta.forEach((value, dim) => {
    specs.push({
      group: "beta",
      dim,
      label: `whole-body shape ${dim}`,
      min: state.manifest.base_beta[dim] - BETA_SPAN,
      max: state.manifest.base_beta[dim] + BETA_SPAN,
      value,
    });
  });
  state.thetas.forEach((row, k) => {
    const name = state.manifest.group_names[k] ?? `group ${k}`;
    row.forEach((value, dim) => {
      specs.push({
        group: String(k),
        dim,
        label: `${name} ${dim}`,
        min: state.manifest.base_thetas[k][dim] - 1.0,
        max: state.manifest.base_thetas[k][dim] + 1.0,
        value,
      });
    });
  });
  return specs;
}

export function setSlider(
  state: SliderState,
  group: string,
  dim: number,
  value: number,
): SliderState {
  if (group === "beta") {
    const beta = [...state.beta];
    beta[dim] = value;
    return { ...state, beta };
  }
  const k = Number(group);
  const thetas = state.thetas.map((row, i) => (i === k ? [...row] : row));
  thetas[k][dim] = value;
  return { ...state, thetas };
}

/** Snap every slider to a mesh's encoded codes; untouched sliders then decode
 * to exactly the service-side reconstruction. */
export function resetToCode(state: SliderState, code: LatentCode): SliderState {
  return {
    ...state,
    beta: [...code.beta],
    thetas: code.thetas.map((row) => [...row]),
  };
}

export function currentCode(state: SliderState): LatentCode {
  return {
    beta: [...state.beta],
    thetas: state.thetas.map((row) => [...row]),
  };
}

/** Bilinear mixing: s blends identity codes, t blends pose codes. */
export function mixCodes(
  a: LatentCode,
  b: LatentCode,
  s: number,
  t: number,
): LatentCode {
  if (s < 0 || s > 1 || t < 0 || t > 1) {
    throw new RangeError(`interpolation parameters must lie in [0, 1], got (${s}, ${t})`);
  }
  return {
    beta: a.beta.map((v, i) => (1 - s) * v + s * b.beta[i]),
    thetas: a.thetas.map((row, k) =>
      row.map((v, i) => (1 - t) * v + t * b.thetas[k][i]),
    ),
  };
}
