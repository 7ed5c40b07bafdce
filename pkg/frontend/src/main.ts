import { ApiError, ExplorerApi } from "./api";
import type { EncodeResult, Manifest } from "./api";
import {
  currentCode,
  initialState,
  mixCodes,
  resetToCode,
  setSlider,
  sliderSpecs,
} from "./codes";
import type { SliderState } from "./codes";
import { DecodeScheduler } from "./scheduler";
import { MeshViewer } from "./viewer";

const DEBOUNCE_MS = 60;

const api = new ExplorerApi("");

function toast(message: string): void {
  const box = document.getElementById("toast")!;
  box.textContent = message;
  box.classList.add("visible");
  setTimeout(() => box.classList.remove("visible"), 4000);
}

function option(value: string): HTMLOptionElement {
  const el = document.createElement("option");
  el.value = value;
  el.textContent = value;
  return el;
}

async function start(): Promise<void> {
  let manifest: Manifest;
  try {
    manifest = await api.manifest();
  } catch (error) {
    toast(`service unavailable: ${(error as Error).message}`);
    return;
  }
  const topology = await api.topology();
  const viewer = new MeshViewer(
    document.getElementById("viewport") as HTMLCanvasElement,
  );
  viewer.setTopology(topology.faces);

  let state: SliderState = initialState(manifest);
  const scheduler = new DecodeScheduler(
    DEBOUNCE_MS,
    (payload: { vertices: number[] }) => viewer.setVertices(payload.vertices),
    (error) => {
      if (error instanceof ApiError) toast(error.message);
      else toast(`decode failed: ${(error as Error).message}`);
    },
  );

  const requestDecode = () => {
    const code = currentCode(state);
    scheduler.schedule(() => api.decode(code));
  };

  // --- slider panel -------------------------------------------------------
  const panel = document.getElementById("sliders")!;
  const inputsByKey = new Map<string, HTMLInputElement>();

  function rebuildSliders(): void {
    panel.textContent = "";
    inputsByKey.clear();
    let currentGroup = "";
    for (const spec of sliderSpecs(state)) {
      const groupName =
        spec.group === "beta"
          ? "whole-body shape"
          : manifest.group_names[Number(spec.group)];
      if (groupName !== currentGroup) {
        currentGroup = groupName;
        const heading = document.createElement("h3");
        heading.textContent = groupName;
        panel.appendChild(heading);
      }
      const row = document.createElement("label");
      row.className = "slider-row";
      const input = document.createElement("input");
      input.type = "range";
      input.min = String(spec.min);
      input.max = String(spec.max);
      input.step = "any";
      input.value = String(spec.value);
      input.addEventListener("input", () => {
        state = setSlider(state, spec.group, spec.dim, Number(input.value));
        requestDecode();
      });
      inputsByKey.set(`${spec.group}/${spec.dim}`, input);
      const caption = document.createElement("span");
      caption.textContent = spec.label;
      row.append(caption, input);
      panel.appendChild(row);
    }
  }

  function syncSliderPositions(): void {
    for (const spec of sliderSpecs(state)) {
      const input = inputsByKey.get(`${spec.group}/${spec.dim}`);
      if (input) input.value = String(spec.value);
    }
  }

  rebuildSliders();
  requestDecode();

  // --- load-mesh reset ------------------------------------------------------
  const meshSelect = document.getElementById("mesh-select") as HTMLSelectElement;
  manifest.mesh_ids.forEach((id) => meshSelect.appendChild(option(id)));
  const encoded = new Map<string, EncodeResult>();

  async function encodeCached(id: string): Promise<EncodeResult> {
    let result = encoded.get(id);
    if (!result) {
      result = await api.encodeById(id);
      encoded.set(id, result);
    }
    return result;
  }

  document.getElementById("load-mesh")!.addEventListener("click", async () => {
    try {
      const code = await encodeCached(meshSelect.value);
      state = resetToCode(state, code);
      syncSliderPositions();
      requestDecode();
    } catch (error) {
      toast((error as Error).message);
    }
  });

  // --- pose transfer: sources rendered beside the result ---------------------
  const shapeSelect = document.getElementById("shape-select") as HTMLSelectElement;
  const poseSelect = document.getElementById("pose-select") as HTMLSelectElement;
  manifest.mesh_ids.forEach((id) => {
    shapeSelect.appendChild(option(id));
    poseSelect.appendChild(option(id));
  });
  const shapeViewer = new MeshViewer(
    document.getElementById("shape-preview") as HTMLCanvasElement,
  );
  const poseViewer = new MeshViewer(
    document.getElementById("pose-preview") as HTMLCanvasElement,
  );
  shapeViewer.setTopology(topology.faces);
  poseViewer.setTopology(topology.faces);
  document.getElementById("run-transfer")!.addEventListener("click", async () => {
    try {
      const [shapeMesh, poseMesh, result] = await Promise.all([
        api.datasetMesh(shapeSelect.value),
        api.datasetMesh(poseSelect.value),
        api.transfer(shapeSelect.value, poseSelect.value),
      ]);
      shapeViewer.setVertices(shapeMesh.vertices);
      poseViewer.setVertices(poseMesh.vertices);
      viewer.setVertices(result.vertices);
    } catch (error) {
      toast((error as Error).message);
    }
  });

  // --- interpolation scrubber -----------------------------------------------
  const endpointA = document.getElementById("interp-a") as HTMLSelectElement;
  const endpointB = document.getElementById("interp-b") as HTMLSelectElement;
  manifest.mesh_ids.forEach((id) => {
    endpointA.appendChild(option(id));
    endpointB.appendChild(option(id));
  });
  const sInput = document.getElementById("interp-s") as HTMLInputElement;
  const tInput = document.getElementById("interp-t") as HTMLInputElement;

  async function scrub(): Promise<void> {
    try {
      const [codeA, codeB] = await Promise.all([
        encodeCached(endpointA.value),
        encodeCached(endpointB.value),
      ]);
      // mixing is client-side; the service only ever decodes
      const mixed = mixCodes(codeA, codeB, Number(sInput.value), Number(tInput.value));
      scheduler.schedule(() => api.decode(mixed));
    } catch (error) {
      toast((error as Error).message);
    }
  }

  sInput.addEventListener("input", scrub);
  tInput.addEventListener("input", scrub);
  endpointA.addEventListener("change", scrub);
  endpointB.addEventListener("change", scrub);
}

void start();
