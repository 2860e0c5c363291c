/**
 * Canvas UI wiring: file loading, polygon drawing with zoom/pan, submits,
 * history, and the result views. All state lives in an immutable Session;
 * this module owns only the DOM and the current view transform.
 */

import { bannerMessage, postErase, getHealth } from "./api";
import { blendOverlay } from "./overlay";
import {
  addVertex,
  buildRequest,
  beginSubmit,
  canSubmit,
  clearAnnotations,
  closeDraft,
  completeSubmit,
  failSubmit,
  loadImage,
  newSession,
  setMaskSource,
  setOverlayOpacity,
  setView,
  undoVertex,
  viewHistory,
  viewedEntry,
  type Session,
  type ViewMode,
} from "./session";
import {
  canvasToImage,
  fitImage,
  imageToCanvas,
  panBy,
  zoomAt,
  IDENTITY,
  type ViewTransform,
} from "./transform";

const BASE_URL = "";

let session: Session = newSession();
let transform: ViewTransform = IDENTITY;

// decoded bitmaps keyed by the base64 string they came from
const bitmaps = new Map<string, ImageBitmap>();
let sourceBitmap: ImageBitmap | null = null;

const canvas = document.getElementById("board") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const banner = document.getElementById("banner")!;
const statusLine = document.getElementById("status")!;
const fileInput = document.getElementById("file") as HTMLInputElement;
const submitButton = document.getElementById("submit") as HTMLButtonElement;
const closeButton = document.getElementById("close-poly") as HTMLButtonElement;
const undoButton = document.getElementById("undo") as HTMLButtonElement;
const clearButton = document.getElementById("clear") as HTMLButtonElement;
const viewSelect = document.getElementById("view") as HTMLSelectElement;
const maskToggle = document.getElementById("mask-source") as HTMLButtonElement;
const opacitySlider = document.getElementById("opacity") as HTMLInputElement;
const historyList = document.getElementById("history")!;

function update(next: Session): void {
  session = next;
  render();
}

async function bitmapFor(b64: string): Promise<ImageBitmap> {
  const cached = bitmaps.get(b64);
  if (cached) return cached;
  const bytes = Uint8Array.from(atob(b64), (c) => c.charCodeAt(0));
  const bitmap = await createImageBitmap(new Blob([bytes], { type: "image/png" }));
  bitmaps.set(b64, bitmap);
  return bitmap;
}

async function maskPixels(b64: string): Promise<Uint8ClampedArray> {
  const bitmap = await bitmapFor(b64);
  const off = document.createElement("canvas");
  off.width = bitmap.width;
  off.height = bitmap.height;
  const octx = off.getContext("2d")!;
  octx.drawImage(bitmap, 0, 0);
  const rgba = octx.getImageData(0, 0, bitmap.width, bitmap.height).data;
  const gray = new Uint8ClampedArray(bitmap.width * bitmap.height);
  for (let i = 0; i < gray.length; i++) gray[i] = rgba[i * 4];
  return gray;
}

async function overlayBitmap(imageB64: string, maskB64: string, opacity: number): Promise<ImageBitmap> {
  const key = `${imageB64.length}:${maskB64.length}:${opacity}:${maskB64.slice(0, 32)}`;
  const cached = bitmaps.get(key);
  if (cached) return cached;
  const base = await bitmapFor(imageB64);
  const off = document.createElement("canvas");
  off.width = base.width;
  off.height = base.height;
  const octx = off.getContext("2d")!;
  octx.drawImage(base, 0, 0);
  const data = octx.getImageData(0, 0, base.width, base.height);
  const blended = blendOverlay(
    new Uint8ClampedArray(data.data),
    await maskPixels(maskB64),
    base.width,
    base.height,
    opacity,
  );
  data.data.set(blended);
  octx.putImageData(data, 0, 0);
  const bitmap = await createImageBitmap(off);
  bitmaps.set(key, bitmap);
  return bitmap;
}

function drawPolygon(points: ReadonlyArray<{ x: number; y: number }>, closed: boolean): void {
  if (points.length === 0) return;
  ctx.beginPath();
  const first = imageToCanvas(transform, points[0]);
  ctx.moveTo(first.x, first.y);
  for (const p of points.slice(1)) {
    const c = imageToCanvas(transform, p);
    ctx.lineTo(c.x, c.y);
  }
  if (closed) ctx.closePath();
  ctx.strokeStyle = closed ? "#3fb950" : "#d29922";
  ctx.lineWidth = 1.5;
  ctx.stroke();
  if (closed) {
    ctx.fillStyle = "rgba(63, 185, 80, 0.15)";
    ctx.fill();
  }
  for (const p of points) {
    const c = imageToCanvas(transform, p);
    ctx.fillStyle = "#e6edf3";
    ctx.fillRect(c.x - 2, c.y - 2, 4, 4);
  }
}

async function viewBitmaps(): Promise<ImageBitmap[]> {
  if (!session.image || !sourceBitmap) return [];
  const entry = viewedEntry(session);
  const input = sourceBitmap;
  if (!entry) return [input];
  switch (session.view) {
    case "input":
      return [input];
    case "erased":
      return [await bitmapFor(entry.response.erased)];
    case "stroke_overlay": {
      const mask =
        session.maskSource === "stroke_mask"
          ? entry.response.stroke_mask
          : entry.response.stroke_mask2;
      if (!mask) return [input];
      return [await overlayBitmap(session.image.data, mask, session.overlayOpacity)];
    }
    case "side_by_side":
      return [input, await bitmapFor(entry.response.erased)];
  }
}

async function render(): Promise<void> {
  banner.textContent = session.banner ?? "";
  banner.classList.toggle("visible", session.banner !== null);
  submitButton.disabled = !canSubmit(session);
  submitButton.textContent = session.inFlight ? "erasing..." : "erase";
  maskToggle.textContent =
    session.maskSource === "stroke_mask" ? "mask: unit 1" : "mask: unit 2";
  (viewSelect as HTMLSelectElement).value = session.view;

  ctx.fillStyle = "#0d1117";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const panes = await viewBitmaps();
  if (panes.length === 0) {
    statusLine.textContent = "load a PNG to start";
    return;
  }
  for (let i = 0; i < panes.length; i++) {
    ctx.save();
    if (panes.length > 1) {
      ctx.beginPath();
      ctx.rect((canvas.width / 2) * i, 0, canvas.width / 2, canvas.height);
      ctx.clip();
      ctx.translate((canvas.width / 2) * i, 0);
    }
    ctx.imageSmoothingEnabled = transform.scale < 1;
    ctx.drawImage(
      panes[i],
      transform.offsetX,
      transform.offsetY,
      panes[i].width * transform.scale,
      panes[i].height * transform.scale,
    );
    ctx.restore();
  }
  for (const poly of session.polygons) drawPolygon(poly, true);
  drawPolygon(session.draft, false);
  statusLine.textContent =
    `${session.polygons.length} polygon(s), ${session.history.length} result(s)` +
    (session.inFlight ? ", request in flight" : "");
  renderHistory();
}

function renderHistory(): void {
  historyList.replaceChildren(
    ...session.history.map((entry, i) => {
      const item = document.createElement("li");
      const button = document.createElement("button");
      button.textContent = `#${i + 1}: ${entry.request.polygons.length} polygon(s), ` +
        `${Math.round(entry.response.timings_ms.forward ?? 0)} ms`;
      button.classList.toggle("current", i === session.viewed);
      button.addEventListener("click", () => update(viewHistory(session, i)));
      item.append(button);
      return item;
    }),
  );
}

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  const bytes = new Uint8Array(await file.arrayBuffer());
  let b64 = "";
  for (let i = 0; i < bytes.length; i += 0x8000) {
    b64 += String.fromCharCode(...bytes.subarray(i, i + 0x8000));
  }
  b64 = btoa(b64);
  const bitmap = await bitmapFor(b64);
  sourceBitmap = bitmap;
  transform = fitImage(canvas.width, canvas.height, bitmap.width, bitmap.height);
  update(
    loadImage(session, {
      data: b64,
      width: bitmap.width,
      height: bitmap.height,
      name: file.name,
    }),
  );
});

canvas.addEventListener("click", (ev) => {
  if (ev.altKey || !session.image) return;
  const rect = canvas.getBoundingClientRect();
  const p = canvasToImage(transform, {
    x: ev.clientX - rect.left,
    y: ev.clientY - rect.top,
  });
  update(addVertex(session, p.x, p.y));
});

canvas.addEventListener("dblclick", (ev) => {
  ev.preventDefault();
  update(closeDraft(session));
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  const rect = canvas.getBoundingClientRect();
  const pivot = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  transform = zoomAt(transform, ev.deltaY < 0 ? 1.25 : 0.8, pivot);
  render();
});

let panFrom: { x: number; y: number } | null = null;
canvas.addEventListener("mousedown", (ev) => {
  if (ev.altKey || ev.button === 1) panFrom = { x: ev.clientX, y: ev.clientY };
});
window.addEventListener("mousemove", (ev) => {
  if (!panFrom) return;
  transform = panBy(transform, ev.clientX - panFrom.x, ev.clientY - panFrom.y);
  panFrom = { x: ev.clientX, y: ev.clientY };
  render();
});
window.addEventListener("mouseup", () => {
  panFrom = null;
});

window.addEventListener("keydown", (ev) => {
  if (ev.key === "z" && (ev.ctrlKey || ev.metaKey)) {
    ev.preventDefault();
    update(undoVertex(session));
  } else if (ev.key === "Enter") {
    update(closeDraft(session));
  }
});

closeButton.addEventListener("click", () => update(closeDraft(session)));
undoButton.addEventListener("click", () => update(undoVertex(session)));
clearButton.addEventListener("click", () => update(clearAnnotations(session)));

submitButton.addEventListener("click", async () => {
  if (!canSubmit(session)) return;
  const request = buildRequest(session);
  update(beginSubmit(session));
  try {
    const response = await postErase(BASE_URL, request);
    update(completeSubmit(session, request, response));
  } catch (err) {
    update(failSubmit(session, bannerMessage(err)));
  }
});

viewSelect.addEventListener("change", () => {
  update(setView(session, viewSelect.value as ViewMode));
});

maskToggle.addEventListener("click", () => {
  update(
    setMaskSource(
      session,
      session.maskSource === "stroke_mask" ? "stroke_mask2" : "stroke_mask",
    ),
  );
});

opacitySlider.addEventListener("input", () => {
  update(setOverlayOpacity(session, Number(opacitySlider.value) / 100));
});

getHealth(BASE_URL)
  .then((h) => {
    statusLine.textContent = `model ready (config ${h.model_config_hash})`;
  })
  .catch((err) => {
    update(failSubmit(session, bannerMessage(err)));
  });

render();
