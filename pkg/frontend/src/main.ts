import { ApiClient, RequestGate, ServiceError, debounce } from "./client.js";
import { MaskCanvasModel } from "./maskModel.js";
import {
  MORPH_PRESET,
  SessionHistory,
  buildFusionStrip,
  buildMorphFrameRequest,
  buildSpatialRequest,
  identityColor,
  normalizeSimplex,
} from "./panels.js";
import type { GenerateRequest, GenerateResponse, ModelInfo } from "./types.js";

const client = new ApiClient("");
const history = new SessionHistory();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showError(message: string): void {
  const banner = el<HTMLDivElement>("error-banner");
  banner.textContent = message;
  banner.style.display = message ? "block" : "none";
}

function renderResult(img: HTMLImageElement, response: GenerateResponse, request: GenerateRequest): void {
  img.src = `data:image/png;base64,${response.image}`;
  history.add(request, response.image);
  el<HTMLSpanElement>("history-count").textContent = String(history.length);
}

async function handle(task: () => Promise<void>): Promise<void> {
  try {
    showError("");
    await task();
  } catch (err) {
    if (err instanceof ServiceError) {
      showError(`service rejected the request (${err.status}): ${err.message}`);
    } else {
      showError(`network failure, retry: ${String(err)}`);
    }
  }
}

// ---------------------------------------------------------------------------
// Paint panel

let mask: MaskCanvasModel | null = null;
let model: ModelInfo | null = null;
let brushIdentity = 0;
let brushFaithful = false;
let brushSize = 8;

function redrawMask(canvas: HTMLCanvasElement): void {
  if (!mask) return;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const image = ctx.createImageData(mask.width, mask.height);
  for (let i = 0; i < mask.labels.length; i++) {
    const color = identityColor(mask.labels[i]);
    image.data[i * 4] = parseInt(color.slice(1, 3), 16);
    image.data[i * 4 + 1] = parseInt(color.slice(3, 5), 16);
    image.data[i * 4 + 2] = parseInt(color.slice(5, 7), 16);
    image.data[i * 4 + 3] = 160;
  }
  ctx.putImageData(image, 0, 0);
}

function setupPaintPanel(): void {
  const canvas = el<HTMLCanvasElement>("mask-canvas");
  const gate = new RequestGate<GenerateResponse>((resp) => {
    renderResult(el<HTMLImageElement>("paint-result"), resp, lastPaintRequest!);
  });
  let painting = false;
  let lastPaintRequest: GenerateRequest | null = null;

  const paintAt = (ev: MouseEvent) => {
    if (!mask) return;
    const rect = canvas.getBoundingClientRect();
    const x = ((ev.clientX - rect.left) / rect.width) * mask.width;
    const y = ((ev.clientY - rect.top) / rect.height) * mask.height;
    mask.applyStroke({ x, y, radius: brushSize, identity: brushIdentity, faithful: brushFaithful });
    redrawMask(canvas);
  };

  canvas.addEventListener("mousedown", (ev) => {
    painting = true;
    paintAt(ev);
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (painting) paintAt(ev);
  });
  window.addEventListener("mouseup", () => {
    painting = false;
  });

  el<HTMLInputElement>("brush-size").addEventListener("input", (ev) => {
    brushSize = Number((ev.target as HTMLInputElement).value);
  });
  el<HTMLInputElement>("brush-faithful").addEventListener("change", (ev) => {
    brushFaithful = (ev.target as HTMLInputElement).checked;
  });

  el<HTMLButtonElement>("paint-generate").addEventListener("click", () => {
    if (!mask || !model) return;
    const seed = Number(el<HTMLInputElement>("seed").value) || 0;
    lastPaintRequest = buildSpatialRequest(mask, seed);
    gate.submit(() => client.generate(model!.model_id, lastPaintRequest!));
  });
}

// ---------------------------------------------------------------------------
// Morph panel

function setupMorphPanel(): void {
  const slidersBox = el<HTMLDivElement>("morph-sliders");
  const gate = new RequestGate<GenerateResponse>((resp) => {
    renderResult(el<HTMLImageElement>("morph-result"), resp, lastMorphRequest!);
  });
  let lastMorphRequest: GenerateRequest | null = null;

  const requestFrame = debounce(() => {
    if (!model) return;
    const sliders = [...slidersBox.querySelectorAll<HTMLInputElement>("input[type=range]")];
    const weights = normalizeSimplex(sliders.map((s) => Number(s.value)));
    const seed = Number(el<HTMLInputElement>("seed").value) || 0;
    lastMorphRequest = buildMorphFrameRequest(weights, seed);
    gate.submit(() => client.generate(model!.model_id, lastMorphRequest!));
  }, 150);

  slidersBox.addEventListener("input", requestFrame);

  el<HTMLButtonElement>("morph-export").addEventListener("click", () => {
    void handle(async () => {
      if (!model) return;
      const seed = Number(el<HTMLInputElement>("seed").value) || 0;
      const { frames } = await client.morph(model.model_id, MORPH_PRESET, { seed });
      const strip = el<HTMLDivElement>("morph-strip");
      strip.replaceChildren(
        ...frames.map((f) => {
          const img = document.createElement("img");
          img.src = `data:image/png;base64,${f}`;
          img.className = "frame";
          return img;
        }),
      );
    });
  });
}

function rebuildMorphSliders(): void {
  if (!model) return;
  const box = el<HTMLDivElement>("morph-sliders");
  box.replaceChildren();
  for (let k = 0; k < model.K; k++) {
    const label = document.createElement("label");
    label.textContent = `id ${k}`;
    label.style.color = identityColor(k);
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "100";
    slider.value = k === 0 ? "100" : "0";
    label.appendChild(slider);
    box.appendChild(label);
  }
}

// ---------------------------------------------------------------------------
// Fusion panel

function setupFusionPanel(): void {
  el<HTMLButtonElement>("fusion-strip-btn").addEventListener("click", () => {
    void handle(async () => {
      if (!model) return;
      const structure = Number(el<HTMLSelectElement>("fusion-structure").value);
      const texture = Number(el<HTMLSelectElement>("fusion-texture").value);
      const seed = Number(el<HTMLInputElement>("seed").value) || 0;
      const scales: number[] = [];
      for (let s = model.scale_count - 1; s >= 0; s -= Math.max(1, Math.floor(model.scale_count / 4))) {
        scales.push(s);
      }
      const strip = el<HTMLDivElement>("fusion-strip");
      strip.replaceChildren();
      for (const request of buildFusionStrip(structure, texture, scales, seed)) {
        const resp = await client.generate(model.model_id, request);
        const cell = document.createElement("figure");
        const img = document.createElement("img");
        img.src = `data:image/png;base64,${resp.image}`;
        img.className = "frame";
        const cap = document.createElement("figcaption");
        cap.textContent = `scale ${request.transition_scale}`;
        cell.append(img, cap);
        strip.appendChild(cell);
        history.add(request, resp.image);
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Bootstrap

function populateIdentityControls(): void {
  if (!model) return;
  const palette = el<HTMLDivElement>("identity-palette");
  palette.replaceChildren(
    ...Array.from({ length: model.K }, (_, k) => {
      const btn = document.createElement("button");
      btn.textContent = `id ${k}`;
      btn.style.background = identityColor(k);
      btn.addEventListener("click", () => {
        brushIdentity = k;
      });
      return btn;
    }),
  );
  for (const selId of ["fusion-structure", "fusion-texture"]) {
    const sel = el<HTMLSelectElement>(selId);
    sel.replaceChildren(
      ...Array.from({ length: model.K }, (_, k) => {
        const opt = document.createElement("option");
        opt.value = String(k);
        opt.textContent = `id ${k}`;
        return opt;
      }),
    );
  }
}

async function selectModel(info: ModelInfo): Promise<void> {
  model = info;
  const thumb = el<HTMLImageElement>("model-thumb");
  thumb.src = `data:image/png;base64,${info.thumbnails[0]}`;
  const probe = new Image();
  await new Promise<void>((resolve) => {
    probe.onload = () => resolve();
    probe.src = thumb.src;
  });
  mask = new MaskCanvasModel(probe.width, probe.height, info.K);
  const canvas = el<HTMLCanvasElement>("mask-canvas");
  canvas.width = probe.width;
  canvas.height = probe.height;
  redrawMask(canvas);
  populateIdentityControls();
  rebuildMorphSliders();
}

async function boot(): Promise<void> {
  await handle(async () => {
    const models = await client.listModels();
    const picker = el<HTMLSelectElement>("model-picker");
    picker.replaceChildren(
      ...models.map((m) => {
        const opt = document.createElement("option");
        opt.value = m.model_id;
        opt.textContent = `${m.model_id} (K=${m.K})`;
        return opt;
      }),
    );
    picker.addEventListener("change", () => {
      const chosen = models.find((m) => m.model_id === picker.value);
      if (chosen) void selectModel(chosen);
    });
    if (models.length > 0) {
      await selectModel(models[0]);
    }
  });
  setupPaintPanel();
  setupMorphPanel();
  setupFusionPanel();

  el<HTMLButtonElement>("export-history").addEventListener("click", () => {
    if (history.length === 0) return;
    const blob = new Blob([history.exportEntry(history.length - 1)], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "request.json";
    a.click();
    URL.revokeObjectURL(a.href);
  });
}

void boot();
