// Build the bindings first:
//   cargo build -p demo-web --release --target wasm32-unknown-unknown
//   wasm-bindgen --target web --out-dir crates/demo-web/www/pkg \
//       target/wasm32-unknown-unknown/release/demo_web.wasm
import init, { compareRings, silhouetteSweep, cosineSoftmax } from "./pkg/demo_web.js";

const PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function scatter(canvas, points, labels) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const xs = points.map((p) => p[0]);
  const ys = points.map((p) => p[1]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const span = Math.max(x1 - x0, y1 - y0) || 1;
  const pad = 12;
  const s = (canvas.width - 2 * pad) / span;
  points.forEach((p, i) => {
    ctx.fillStyle = PALETTE[labels[i] % PALETTE.length];
    ctx.beginPath();
    ctx.arc(pad + (p[0] - x0) * s, canvas.height - pad - (p[1] - y0) * s, 2.5, 0, 2 * Math.PI);
    ctx.fill();
  });
}

function runRings() {
  const r = JSON.parse(compareRings(num("r-per"), num("r-noise"), num("r-nn"), num("r-seed")));
  scatter($("r-km"), r.points, r.kmeans.labels);
  scatter($("r-sp"), r.points, r.spectral.labels);
  $("r-km-cap").textContent = `k-means ACC ${r.kmeans.acc.toFixed(3)}`;
  $("r-sp-cap").textContent = `spectral ACC ${r.spectral.acc.toFixed(3)}`;
}

function runSweep() {
  const r = JSON.parse(silhouetteSweep(num("s-k"), 40, num("s-sep"), num("s-min"), num("s-max"), num("s-seed")));
  scatter($("s-pts"), r.points, r.labels);
  $("s-cap").textContent = `chosen K = ${r.k_best}`;
  const c = $("s-curve");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const pad = 30;
  const ks = r.table.map((t) => t[0]);
  const ss = r.table.map((t) => t[1]);
  const kx = (k) => pad + ((k - ks[0]) / Math.max(1, ks[ks.length - 1] - ks[0])) * (c.width - 2 * pad);
  const sy = (v) => c.height - pad - ((v + 1) / 2) * (c.height - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, sy(0));
  ctx.lineTo(c.width - pad, sy(0));
  ctx.stroke();
  ctx.strokeStyle = "#1f77b4";
  ctx.beginPath();
  r.table.forEach(([k, v], i) => (i ? ctx.lineTo(kx(k), sy(v)) : ctx.moveTo(kx(k), sy(v))));
  ctx.stroke();
  ctx.fillStyle = "#222";
  r.table.forEach(([k, v]) => {
    ctx.fillStyle = k === r.k_best ? "#d62728" : "#222";
    ctx.fillRect(kx(k) - 3, sy(v) - 3, 6, 6);
    ctx.fillText(String(k), kx(k) - 4, c.height - 10);
  });
  ctx.fillStyle = "#222";
  ctx.fillText(`silhouette (max ${Math.max(...ss).toFixed(3)})`, pad, 14);
}

let hAngle = 0.4;

function classAngles() {
  const n = num("c-n");
  return Float64Array.from({ length: n }, (_, i) => (2 * Math.PI * i) / n);
}

function drawSoftmax() {
  const tau = num("c-tau");
  $("c-tau-val").textContent = tau.toFixed(2);
  const angles = classAngles();
  const probs = cosineSoftmax(hAngle, angles, tau);
  const c = $("c-circle");
  const ctx = c.getContext("2d");
  const [cx, cy, rad] = [c.width / 2, c.height / 2, c.width / 2 - 30];
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  ctx.arc(cx, cy, rad, 0, 2 * Math.PI);
  ctx.stroke();
  angles.forEach((a, i) => {
    ctx.strokeStyle = PALETTE[i];
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.moveTo(cx, cy);
    ctx.lineTo(cx + rad * Math.cos(a), cy - rad * Math.sin(a));
    ctx.stroke();
  });
  ctx.lineWidth = 1;
  ctx.fillStyle = "#000";
  ctx.beginPath();
  ctx.arc(cx + rad * Math.cos(hAngle), cy - rad * Math.sin(hAngle), 7, 0, 2 * Math.PI);
  ctx.fill();

  const b = $("c-bars");
  const bctx = b.getContext("2d");
  bctx.clearRect(0, 0, b.width, b.height);
  const w = (b.width - 40) / probs.length;
  probs.forEach((p, i) => {
    const h = p * (b.height - 40);
    bctx.fillStyle = PALETTE[i];
    bctx.fillRect(20 + i * w + 4, b.height - 20 - h, w - 8, h);
    bctx.fillStyle = "#222";
    bctx.fillText(p.toFixed(3), 20 + i * w + 6, b.height - 24 - h);
  });
}

function guard(f) {
  return () => {
    try {
      $("error").textContent = "";
      f();
    } catch (e) {
      $("error").textContent = String(e);
    }
  };
}

await init();
$("r-run").addEventListener("click", guard(runRings));
$("s-run").addEventListener("click", guard(runSweep));
$("c-tau").addEventListener("input", guard(drawSoftmax));
$("c-n").addEventListener("input", guard(drawSoftmax));
const circle = $("c-circle");
const drag = (ev) => {
  if (ev.buttons !== 1 && ev.type !== "click") return;
  const r = circle.getBoundingClientRect();
  hAngle = Math.atan2(r.height / 2 - (ev.clientY - r.top), ev.clientX - r.left - r.width / 2);
  guard(drawSoftmax)();
};
circle.addEventListener("mousemove", drag);
circle.addEventListener("click", drag);
guard(runRings)();
guard(runSweep)();
guard(drawSoftmax)();
