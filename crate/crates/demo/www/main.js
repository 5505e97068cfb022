import init, { Demo } from "./pkg/slnet_demo.js";

const FRAMES = 150;
const $ = (id) => document.getElementById(id);
let demo = null;

function status(text) {
  $("status").textContent = text;
}

function draw(id, rgba, w, h) {
  const canvas = $(id);
  canvas.width = w;
  canvas.height = h;
  const ctx = canvas.getContext("2d");
  if (!rgba) {
    ctx.clearRect(0, 0, w, h);
    return;
  }
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function tryFrame(which, t) {
  try {
    return demo.frame_rgba(which, t);
  } catch {
    return null;
  }
}

function redraw() {
  if (!demo) return;
  const t = Number($("frame").value);
  $("frame-label").textContent = t;
  const [w, h] = [demo.width(), demo.height()];
  for (const view of ["raw", "sparse", "lowrank"]) draw(view, tryFrame(view, t), w, h);
}

// Lets the status line paint before a blocking call.
const nextPaint = () => new Promise((r) => requestAnimationFrame(() => setTimeout(r, 0)));

async function action(label, fn) {
  status(`${label}...`);
  await nextPaint();
  const t0 = performance.now();
  try {
    const msg = fn();
    status(`${label}: ${msg} (${((performance.now() - t0) / 1000).toFixed(2)} s)`);
  } catch (e) {
    status(`${label} failed: ${e.message ?? e}`);
  }
  redraw();
}

function generate() {
  demo?.free();
  demo = new Demo(Number($("seed").value), FRAMES, Number($("bg").value));
  $("frame").max = demo.frames() - 1;
  draw("render", null, 4 * demo.width(), 4 * demo.height());
  redraw();
  return `${demo.width()}x${demo.height()}x${demo.frames()}`;
}

await init();
await action("generate", generate);

$("generate").onclick = () => action("generate", generate);
$("median").onclick = () =>
  action("median", () => `sparsity ${demo.baseline("median", 0).toFixed(1)}%`);
$("rolling").onclick = () =>
  action("rolling ball", () => `sparsity ${demo.baseline("rolling-ball", Number($("radius").value)).toFixed(1)}%`);
$("train").onclick = () =>
  action("train", () => {
    const alpha = Number($("alpha").value);
    let loss = NaN;
    for (let i = 0; i < 5; i++) loss = demo.train_epoch(alpha);
    return `epoch ${demo.epochs_trained()}, loss ${loss.toFixed(4)}`;
  });
$("slnet").onclick = () => action("decompose", () => `sparsity ${demo.decompose().toFixed(1)}%`);
$("localize").onclick = () =>
  action("localize", () => {
    const n = demo.localize();
    draw("render", demo.render_rgba(4), 4 * demo.width(), 4 * demo.height());
    return `${n} localizations`;
  });
$("frame").oninput = redraw;
