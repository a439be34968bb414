import init, { bias_curve, bootstrap_distribution, bced_trace } from "./pkg/cvboot_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = { cvt: "#c0392b", tt: "#8e44ad", bbc: "#2471a3", bced: "#17a589", ncv: "#7f8c8d" };

function frame(canvas, xmin, xmax, ymin, ymax) {
  const ctx = canvas.getContext("2d");
  const pad = 40;
  const w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(ymax.toFixed(3), 2, pad + 4);
  ctx.fillText(ymin.toFixed(3), 2, pad + h);
  ctx.fillText(String(xmin), pad, pad + h + 14);
  ctx.fillText(String(xmax), pad + w - 20, pad + h + 14);
  const x = (v) => pad + ((v - xmin) / (xmax - xmin || 1)) * w;
  const y = (v) => pad + h - ((v - ymin) / (ymax - ymin || 1)) * h;
  return { ctx, x, y, pad, w, h };
}

function run(button, msg, body) {
  $(button).addEventListener("click", () => {
    $(msg).className = "out";
    $(msg).textContent = "running...";
    setTimeout(() => {
      try {
        body();
      } catch (e) {
        $(msg).className = "out err";
        $(msg).textContent = String(e.message ?? e);
      }
    }, 10);
  });
}

function drawCurve(points) {
  const ns = [...new Set(points.map((p) => p.n))];
  const ys = points.map((p) => p.mean_bias);
  const ymin = Math.min(0, ...ys), ymax = Math.max(0, ...ys);
  const f = frame($("curve"), ns[0], ns[ns.length - 1], ymin, ymax);
  f.ctx.strokeStyle = "#bbb";
  f.ctx.beginPath();
  f.ctx.moveTo(f.x(ns[0]), f.y(0));
  f.ctx.lineTo(f.x(ns[ns.length - 1]), f.y(0));
  f.ctx.stroke();
  const protocols = [...new Set(points.map((p) => p.protocol))];
  protocols.forEach((name, i) => {
    const series = points.filter((p) => p.protocol === name);
    f.ctx.strokeStyle = COLORS[name] ?? "#000";
    f.ctx.lineWidth = 2;
    f.ctx.beginPath();
    series.forEach((p, j) => (j ? f.ctx.lineTo : f.ctx.moveTo).call(f.ctx, f.x(p.n), f.y(p.mean_bias)));
    f.ctx.stroke();
    f.ctx.fillStyle = f.ctx.strokeStyle;
    f.ctx.fillText(name, f.pad + f.w + 4 - 40, f.pad + 14 * (i + 1));
  });
  f.ctx.lineWidth = 1;
}

function drawHistogram(d) {
  const v = d.values;
  const lo = Math.min(...v), hi = Math.max(...v);
  const bins = 40;
  const counts = new Array(bins).fill(0);
  v.forEach((x) => counts[Math.min(bins - 1, Math.floor(((x - lo) / (hi - lo || 1)) * bins))]++);
  const f = frame($("hist"), lo.toFixed(3), hi.toFixed(3), 0, Math.max(...counts));
  const bw = f.w / bins;
  f.ctx.fillStyle = "#2471a3";
  counts.forEach((c, i) => {
    const top = f.pad + f.h - (c / Math.max(...counts)) * f.h;
    f.ctx.fillRect(f.pad + i * bw + 1, top, bw - 2, f.pad + f.h - top);
  });
  const mark = (x, color) => {
    const px = f.pad + ((x - lo) / (hi - lo || 1)) * f.w;
    f.ctx.strokeStyle = color;
    f.ctx.beginPath();
    f.ctx.moveTo(px, f.pad);
    f.ctx.lineTo(px, f.pad + f.h);
    f.ctx.stroke();
  };
  mark(d.ci[0], "#555");
  mark(d.ci[1], "#555");
  mark(d.estimate, "#17a589");
  mark(d.raw_estimate, "#c0392b");
}

function drawTrace(t) {
  const f = frame($("trace"), 1, t.steps.length, 0, t.configs);
  f.ctx.strokeStyle = "#17a589";
  f.ctx.lineWidth = 2;
  f.ctx.beginPath();
  t.steps.forEach((s, j) => (j ? f.ctx.lineTo : f.ctx.moveTo).call(f.ctx, f.x(s.fold), f.y(s.alive)));
  f.ctx.stroke();
  f.ctx.lineWidth = 1;
}

function exampleMatrix() {
  let text = "sample_id,label,fold,strong,weak,coin\n";
  let s = 7;
  const rnd = () => ((s = (s * 1103515245 + 12345) % 2147483648) / 2147483648);
  for (let i = 0; i < 120; i++) {
    const y = i % 2;
    const pick = (p) => (rnd() < p ? y : 1 - y);
    text += `s${i},${y},${(i % 10) + 1},${pick(0.8)},${pick(0.65)},${pick(0.5)}\n`;
  }
  return text;
}

await init();
$("matrix").value = exampleMatrix();

run("curve-run", "curve-msg", () => {
  const points = JSON.parse(bias_curve(num("curve-c"), num("curve-a"), num("curve-b"), num("curve-reps"), num("curve-seed")));
  drawCurve(points);
  $("curve-msg").textContent = points
    .filter((p) => p.n === 20)
    .map((p) => `N=20 ${p.protocol}: bias ${p.mean_bias.toFixed(4)} (se ${p.se_bias.toFixed(4)})`)
    .join("\n");
});

run("boot-run", "boot-msg", () => {
  const d = JSON.parse(bootstrap_distribution($("matrix").value, $("metric").value, num("boot-b"), num("boot-seed")));
  drawHistogram(d);
  $("boot-msg").textContent =
    `selected ${d.selected}\nuncorrected ${d.raw_estimate.toFixed(4)} (red)\ncorrected ${d.estimate.toFixed(4)} (green), ` +
    `interval [${d.ci[0].toFixed(4)}, ${d.ci[1].toFixed(4)}] (grey)`;
});

run("bced-run", "bced-msg", () => {
  const t = JSON.parse(bced_trace(num("bced-n"), num("bced-c"), 9, 6, num("bced-alpha"), num("bced-min"), num("bced-seed")));
  drawTrace(t);
  $("bced-msg").textContent =
    `${t.trainings} trainings instead of ${t.full_trainings}; estimate ${t.estimate.toFixed(4)}, ` +
    `true accuracy of the returned configuration ${t.true_accuracy.toFixed(4)}`;
});
