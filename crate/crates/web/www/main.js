import init, { simulate, window_curve, stepsize_table } from "./pkg/dgdlocal_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

function show(el, text, isError) {
  el.textContent = text;
  el.className = isError ? "err" : "";
}

// series: [{ name, x, y }]; log scales the y axis
function plot(canvas, series, log) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 40;
  ctx.clearRect(0, 0, w, h);
  const tf = (v) => (log ? Math.log10(Math.max(v, 1e-300)) : v);
  const xs = series.flatMap((s) => s.x);
  const ys = series.flatMap((s) => s.y.map(tf)).filter(Number.isFinite);
  if (!xs.length || !ys.length) return;
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y1 === y0) y1 = y0 + 1;
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (y) => h - pad + (-(y - y0) / (y1 - y0)) * (h - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(log ? `1e${y1.toFixed(1)}` : y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(log ? `1e${y0.toFixed(1)}` : y0.toPrecision(3), 2, h - pad);
  ctx.fillText(String(x0), pad, h - pad + 14);
  ctx.fillText(String(+x1.toPrecision(4)), w - pad - 30, h - pad + 14);

  series.forEach((s, k) => {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.beginPath();
    s.x.forEach((x, i) => {
      const y = tf(s.y[i]);
      if (!Number.isFinite(y)) return;
      i ? ctx.lineTo(px(x), py(y)) : ctx.moveTo(px(x), py(y));
    });
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.name, pad + 8 + 110 * k, pad - 8);
  });
}

function runSimulation() {
  const iters = num("iters");
  const res = JSON.parse(
    simulate(num("n"), num("m"), num("r"), num("nodes"), $("topology").value, BigInt(num("seed")),
      iters, Math.max(1, Math.floor(iters / 400)), $("lazy").checked, num("scale")),
  );
  if (res.error) return show($("sim-out"), res.error, true);
  plot($("trace"), [
    { name: "f", x: res.iter, y: res.f },
    { name: "consensus", x: res.iter, y: res.consensus },
    { name: "opt gap", x: res.iter, y: res.opt_gap },
  ], true);
  const last = res.iter.length - 1;
  show($("sim-out"),
    `status ${res.status}, mu ${res.mu.toExponential(3)}, rho ${res.rho.toFixed(3)}, omega ${res.omega.toFixed(3)}\n` +
    `final f ${res.f[last].toExponential(3)}, consensus ${res.consensus[last].toExponential(3)}, ` +
    `|z| ${res.z_norm[last].toFixed(3)}`);
}

function runWindow() {
  const res = JSON.parse(window_curve(num("wrho"), 501));
  if (res.error) return show($("win-out"), res.error, true);
  const scale = res.hess_bound;
  plot($("wplot"), [
    { name: "w", x: res.radius, y: res.value },
    { name: "slope·ρ/2", x: res.radius, y: res.slope.map((s) => (s * res.rho) / 2) },
    { name: "Hessian / bound", x: res.radius, y: res.hess_norm.map((v) => v / scale) },
  ], false);
  show($("win-out"), `Hessian bound ${scale.toPrecision(6)}; all samples within: ${res.all_within_bound}`);
}

function runSteps() {
  const res = JSON.parse(stepsize_table(num("srho"), num("somega"), num("sy")));
  if (res.error) return show($("step-out"), res.error, true);
  show($("step-out"), [
    `L0 ${res.l0.toPrecision(6)}   L1 ${res.l1.toPrecision(6)}   L2 ${res.l2.toPrecision(6)}`,
    `windowed denominator ${res.denominator.toPrecision(9)}`,
    `mu bound (windowed) ${res.mu_mf.toExponential(5)}`,
    `mu bound (L2 only)  ${res.mu_generic.toExponential(5)}`,
  ].join("\n"));
}

await init();
$("run").onclick = runSimulation;
$("window").onclick = runWindow;
$("steps").onclick = runSteps;
runWindow();
runSteps();
