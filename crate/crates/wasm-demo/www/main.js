import init, { runTrajectory, compareStrategies, selectionScheme } from "./pkg/noisy_cmaes_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

function plot(canvas, series, { logX = false, logY = false, yMin, yMax, xLabel = "", yLabel = "" } = {}) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = 48;
  ctx.clearRect(0, 0, W, H);
  const tx = (v) => (logX ? Math.log10(Math.max(v, 1e-300)) : v);
  const ty = (v) => (logY ? Math.log10(Math.max(v, 1e-300)) : v);
  const xs = series.flatMap((s) => s.x.map(tx));
  const ys = series.flatMap((s) => s.y.map(ty)).filter(Number.isFinite);
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const y0 = yMin ?? Math.min(...ys), y1 = yMax ?? Math.max(...ys);
  const sx = (v) => pad + ((tx(v) - x0) / (x1 - x0 || 1)) * (W - 2 * pad);
  const sy = (v) => H - pad - ((ty(v) - y0) / (y1 - y0 || 1)) * (H - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "12px sans-serif";
  const fmt = (v, log) => (log ? `1e${v.toFixed(1)}` : v.toPrecision(3));
  ctx.fillText(fmt(x0, logX), pad, H - pad + 16);
  ctx.fillText(fmt(x1, logX), W - pad - 40, H - pad + 16);
  ctx.fillText(fmt(y1, logY), 4, pad + 4);
  ctx.fillText(fmt(y0, logY), 4, H - pad);
  ctx.fillText(xLabel, W / 2 - 30, H - 10);
  ctx.fillText(yLabel, 4, pad - 14);
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color ?? COLORS[k % COLORS.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    s.x.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(s.y[i])) : ctx.moveTo(sx(x), sy(s.y[i]))));
    ctx.stroke();
    if (s.label) {
      ctx.fillStyle = ctx.strokeStyle;
      ctx.fillText(s.label, W - pad - 120, pad + 16 * (k + 1));
    }
  });
}

function guarded(infoEl, fn) {
  infoEl.classList.remove("error");
  infoEl.textContent = "running...";
  setTimeout(() => {
    try {
      fn();
    } catch (e) {
      infoEl.classList.add("error");
      infoEl.textContent = String(e);
    }
  }, 10);
}

function runSingle() {
  guarded($("t-info"), () => {
    const r = JSON.parse(runTrajectory($("t-strategy").value, $("t-problem").value, +$("t-budget").value, +$("t-seed").value));
    const x = r.points.map((p) => Math.max(p.evals, 1));
    plot($("t-canvas"), [
      { x, y: r.points.map((p) => p.f), label: "f(m)" },
      { x, y: r.points.map((p) => p.sigma), label: "sigma" },
    ], { logX: true, logY: true, xLabel: "evaluations" });
    const last = r.points[r.points.length - 1];
    $("t-info").textContent =
      `${r.strategy} on ${r.problem}: ${r.status} after ${r.evaluations} evaluations, best f(m) ${r.best_f?.toExponential(3)}` +
      (last.n_eval != null ? `\nfinal n_eval ${last.n_eval.toFixed(2)}` : "") +
      (last.eta_m != null ? `\nfinal eta_m ${last.eta_m.toExponential(3)}` : "") +
      (last.lambda != null ? `\nfinal lambda ${last.lambda}` : "");
  });
}

function runCompare() {
  guarded($("c-info"), () => {
    const r = JSON.parse(compareStrategies($("c-strategies").value, $("c-problem").value, +$("c-budget").value, +$("c-trials").value, 1));
    plot($("c-canvas"), r.curves.map((c) => ({ x: c.checkpoints, y: c.proportion, label: c.strategy })),
      { logX: true, yMin: 0, yMax: 1, xLabel: "evaluations", yLabel: "targets reached" });
    $("c-info").textContent = `${r.problem}, ${r.trials} trials\n` +
      r.curves.map((c) => `${c.strategy}: ${c.reached}/${r.trials} reached 1e-3`).join("\n");
  });
}

function showScheme() {
  const info = $("s-info");
  let lo = +$("s-qlt").value, hi = +$("s-qle").value;
  if (lo > hi) [lo, hi] = [hi, lo];
  try {
    const r = JSON.parse(selectionScheme($("s-scheme").value, +$("s-lambda").value, lo, hi));
    plot($("s-canvas"), [
      { x: r.q, y: r.w, label: `w (${r.scheme})` },
      { x: [lo, lo, hi, hi], y: [0, r.tie_utility, r.tie_utility, 0], label: "tie utility", color: "#d62728" },
    ], { yMin: 0, xLabel: "quantile" });
    info.classList.remove("error");
    info.textContent = `integral of w: ${r.integral.toFixed(6)}\nutility on [${lo}, ${hi}]: ${r.tie_utility.toFixed(6)}`;
  } catch (e) {
    info.classList.add("error");
    info.textContent = String(e);
  }
}

await init();
$("t-run").addEventListener("click", runSingle);
$("c-run").addEventListener("click", runCompare);
for (const id of ["s-scheme", "s-lambda", "s-qlt", "s-qle"]) $(id).addEventListener("input", showScheme);
showScheme();
