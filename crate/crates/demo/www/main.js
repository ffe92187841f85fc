import init, { gs_curve, gs_weights, Demo } from "./pkg/bias_align_demo.js";

const BIN_STRIDE = 5;
const POINT_STRIDE = 4;
const DOMAIN_COLORS = ["#1f77b4", "#2ca02c", "#9467bd", "#d62728", "#ff7f0e", "#8c564b"];

const $ = (id) => document.getElementById(id);
let demo = null;

function frame(canvas, xr, yr, pad = 40) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const w = canvas.width - 2 * pad;
  const h = canvas.height - 2 * pad;
  const sx = (x) => pad + ((x - xr[0]) / (xr[1] - xr[0])) * w;
  const sy = (y) => pad + h - ((y - yr[0]) / (yr[1] - yr[0])) * h;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(xr[0].toFixed(2), pad, pad + h + 14);
  ctx.fillText(xr[1].toFixed(2), pad + w - 24, pad + h + 14);
  ctx.fillText(yr[0].toFixed(2), 4, pad + h);
  ctx.fillText(yr[1].toFixed(2), 4, pad + 8);
  return { ctx, sx, sy };
}

function fail(el, e) {
  el.innerHTML = `<span class="error">${e}</span>`;
}

function drawCurve() {
  const groups = Number($("gs-groups").value);
  const beta = Number($("gs-beta").value);
  $("gs-groups-v").textContent = groups;
  $("gs-beta-v").textContent = beta.toFixed(2);
  const out = $("gs-out");
  try {
    const c = gs_curve(groups, beta, 4, 241);
    const { ctx, sx, sy } = frame($("gs-canvas"), [-4, 4], [0, 2]);
    ctx.strokeStyle = "#ccc";
    ctx.beginPath();
    ctx.moveTo(sx(-4), sy(1));
    ctx.lineTo(sx(4), sy(1));
    ctx.stroke();
    ctx.strokeStyle = "#1f77b4";
    ctx.lineWidth = 2;
    ctx.beginPath();
    for (let i = 0; i < c.length; i += 2) {
      i === 0 ? ctx.moveTo(sx(c[i]), sy(c[i + 1])) : ctx.lineTo(sx(c[i]), sy(c[i + 1]));
    }
    ctx.stroke();
    ctx.lineWidth = 1;

    const losses = $("gs-losses").value.split(",").map((s) => Number(s.trim())).filter((x) => Number.isFinite(x));
    if (losses.length >= 2) {
      const w = gs_weights(new Float64Array(losses), groups, beta);
      ctx.fillStyle = "#d62728";
      const parts = [];
      for (let i = 0; i < w.length; i += 2) {
        const z = Math.max(-4, Math.min(4, w[i]));
        ctx.beginPath();
        ctx.arc(sx(z), sy(w[i + 1]), 4, 0, 2 * Math.PI);
        ctx.fill();
        parts.push(`z=${w[i].toFixed(2)} scale=${w[i + 1].toFixed(3)}`);
      }
      out.textContent = `α = ln(${groups})/2 = ${(Math.log(groups) / 2).toFixed(3)}; ${parts.join("; ")}`;
    } else {
      out.textContent = "enter two or more comma-separated group losses to place them on the curve";
    }
  } catch (e) {
    fail(out, e);
  }
}

function temperature() {
  return Math.exp(Number($("r-temp").value));
}

function drawReliability() {
  const out = $("r-out");
  $("r-temp-v").textContent = temperature().toFixed(3);
  if (!demo) return;
  try {
    const bins = Number($("r-bins").value);
    const r = demo.reliability($("r-objective").value, temperature(), bins);
    const { ctx, sx, sy } = frame($("r-canvas"), [0, 1], [0, 1]);
    ctx.strokeStyle = "#aaa";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(sx(0), sy(0));
    ctx.lineTo(sx(1), sy(1));
    ctx.stroke();
    ctx.setLineDash([]);
    for (let i = 2; i < r.length; i += BIN_STRIDE) {
      const [lo, hi, count, conf, acc] = r.slice(i, i + BIN_STRIDE);
      if (count === 0) continue;
      ctx.fillStyle = "rgba(31,119,180,0.6)";
      ctx.fillRect(sx(lo) + 1, sy(acc), sx(hi) - sx(lo) - 2, sy(0) - sy(acc));
      ctx.fillStyle = "#d62728";
      ctx.fillRect(sx(conf) - 2, sy(conf) - 2, 4, 4);
    }
    ctx.fillStyle = "#333";
    ctx.fillText("confidence", sx(0.42), sy(0) + 28);
    ctx.fillText("accuracy", 2, sy(0.5));
    out.textContent = `ECE ${r[0].toFixed(4)}   AUC ${r[1].toFixed(4)}   T ${temperature().toFixed(3)}`;
  } catch (e) {
    fail(out, e);
  }
}

function drawScatter() {
  const legend = $("s-legend");
  if (!demo) return;
  try {
    const pts = demo.scatter($("s-objective").value, $("s-space").value);
    let xr = [Infinity, -Infinity];
    let yr = [Infinity, -Infinity];
    for (let i = 0; i < pts.length; i += POINT_STRIDE) {
      xr = [Math.min(xr[0], pts[i]), Math.max(xr[1], pts[i])];
      yr = [Math.min(yr[0], pts[i + 1]), Math.max(yr[1], pts[i + 1])];
    }
    const pad = (r) => (r[1] - r[0] < 1e-9 ? [r[0] - 1, r[1] + 1] : r);
    const { ctx, sx, sy } = frame($("s-canvas"), pad(xr), pad(yr));
    const unseen = demo.unseen_domain;
    for (let i = 0; i < pts.length; i += POINT_STRIDE) {
      const [x, y, domain, label] = pts.slice(i, i + POINT_STRIDE);
      ctx.strokeStyle = ctx.fillStyle = DOMAIN_COLORS[domain % DOMAIN_COLORS.length];
      ctx.globalAlpha = domain === unseen ? 0.9 : 0.5;
      if (label === 0) {
        ctx.beginPath();
        ctx.arc(sx(x), sy(y), 2.5, 0, 2 * Math.PI);
        ctx.fill();
      } else {
        ctx.beginPath();
        ctx.moveTo(sx(x) - 3, sy(y) - 3);
        ctx.lineTo(sx(x) + 3, sy(y) + 3);
        ctx.moveTo(sx(x) + 3, sy(y) - 3);
        ctx.lineTo(sx(x) - 3, sy(y) + 3);
        ctx.stroke();
      }
    }
    ctx.globalAlpha = 1;
    const names = [];
    for (let d = 0; d <= unseen; d++) {
      const c = DOMAIN_COLORS[d % DOMAIN_COLORS.length];
      names.push(`<span style="color:${c}">■ domain ${d}${d === unseen ? " (held out)" : ""}</span>`);
    }
    legend.innerHTML = names.join("") + "<span>● live</span><span>✕ spoof</span>";
  } catch (e) {
    fail(legend, e);
  }
}

function trainModels() {
  const status = $("m-status");
  status.textContent = "training...";
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const next = new Demo(Number($("m-seed").value), Number($("m-epochs").value));
      if (demo) demo.free();
      demo = next;
      status.textContent = `trained in ${((performance.now() - t0) / 1000).toFixed(2)} s`;
      drawReliability();
      drawScatter();
    } catch (e) {
      fail(status, e);
    }
  }, 20);
}

async function main() {
  await init();
  $("status").textContent =
    "Synthetic 16-dimensional embeddings (noise 1.0) over three seen domains and one held-out domain. Everything below runs in WebAssembly.";
  for (const id of ["gs-groups", "gs-beta", "gs-losses"]) $(id).addEventListener("input", drawCurve);
  for (const id of ["r-objective", "r-temp", "r-bins"]) $(id).addEventListener("input", drawReliability);
  for (const id of ["s-objective", "s-space"]) $(id).addEventListener("input", drawScatter);
  $("m-train").addEventListener("click", trainModels);
  $("r-fit").addEventListener("click", () => {
    if (!demo) return;
    try {
      $("r-temp").value = Math.log(demo.fitted_temperature($("r-objective").value));
      drawReliability();
    } catch (e) {
      fail($("r-out"), e);
    }
  });
  drawCurve();
  trainModels();
}

main().catch((e) => fail($("status"), e));
