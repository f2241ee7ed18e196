import init, { powerFlow, filterAction, robustInterval, headroom } from "./pkg/drsf_web.js";

const $ = (id) => document.getElementById(id);
const SVG = "http://www.w3.org/2000/svg";
const N_PV = 6;

function svgEl(tag, attrs) {
  const el = document.createElementNS(SVG, tag);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, v);
  return el;
}

function state() {
  return { load: +$("load").value, pv: +$("pv").value, margin: +$("margin").value };
}

// Sliders hold fractions of each inverter's headroom.
function proposal(s) {
  const qMax = JSON.parse(headroom(s.load, s.pv));
  return qMax.map((m, i) => m * +$(`q${i}`).value);
}

function plotVoltages(series, vMin, vMax) {
  const svg = $("plot");
  svg.replaceChildren();
  const w = +svg.getAttribute("width"), h = +svg.getAttribute("height"), pad = 36;
  const all = series.flatMap((s) => s.v).concat([vMin, vMax]);
  const lo = Math.min(...all) - 0.005, hi = Math.max(...all) + 0.005;
  const n = series[0].v.length;
  const x = (i) => pad + (i * (w - 2 * pad)) / (n - 1);
  const y = (v) => h - pad - ((v - lo) * (h - 2 * pad)) / (hi - lo);
  for (const lim of [vMin, vMax]) {
    svg.append(svgEl("line", { x1: pad, x2: w - pad, y1: y(lim), y2: y(lim), stroke: "#999", "stroke-dasharray": "4 3" }));
    const t = svgEl("text", { x: 2, y: y(lim) + 4, "font-size": 10 });
    t.textContent = lim.toFixed(2);
    svg.append(t);
  }
  for (const s of series) {
    const pts = s.v.map((v, i) => `${x(i)},${y(v)}`).join(" ");
    svg.append(svgEl("polyline", { points: pts, fill: "none", class: s.cls, "stroke-width": 2 }));
  }
  const label = svgEl("text", { x: w / 2 - 20, y: h - 8, "font-size": 11 });
  label.textContent = "bus";
  svg.append(label);
}

function showError(id, e) {
  $(id).className = "err";
  $(id).textContent = String(e.message ?? e);
}

function refreshFlow() {
  const s = state();
  $("load-v").textContent = s.load.toFixed(2);
  $("pv-v").textContent = s.pv.toFixed(2);
  $("margin-v").textContent = s.margin.toFixed(4);
  try {
    const f = JSON.parse(powerFlow(s.load, s.pv, JSON.stringify(proposal(s))));
    plotVoltages([{ v: f.v, cls: "before" }], f.v_min, f.v_max);
    $("flow-info").className = "";
    $("flow-info").textContent =
      `Proposal: ${f.violations} limit violations, loss ${(f.loss * 1e3).toFixed(2)} (1e-3 p.u.)`;
  } catch (e) {
    showError("flow-info", e);
  }
}

function runFilter() {
  const s = state();
  try {
    const r = JSON.parse(filterAction(s.load, s.pv, JSON.stringify(proposal(s)), s.margin));
    plotVoltages(
      [{ v: r.before.v, cls: "before" }, { v: r.after.v, cls: "after" }],
      r.before.v_min,
      r.before.v_max,
    );
    const rows = r.q_learn.map(
      (q, i) => `<tr><td>${i + 1}</td><td>${q.toFixed(4)}</td><td>${r.q_safe[i].toFixed(4)}</td><td>${r.q_max[i].toFixed(4)}</td></tr>`,
    );
    $("q-table").innerHTML =
      "<tr><th>unit</th><th>proposed</th><th>filtered</th><th>headroom</th></tr>" + rows.join("");
    $("filter-info").className = "";
    $("filter-info").textContent =
      `Filtered (blue): ${r.after.violations} violations, deviation ${r.deviation.toFixed(4)} p.u., ` +
      `cone gap ${r.exactness_gap.toExponential(1)}` +
      (r.fallback ? ". The robust set is empty; showing the least-violating action." : ".");
  } catch (e) {
    showError("filter-info", e);
  }
}

function runInterval() {
  try {
    const b = JSON.parse(robustInterval($("samples").value, +$("eps").value, +$("alpha").value));
    const values = $("samples").value.split(/[\s,]+/).filter(Boolean).map(Number);
    const lo = b.lower[0], hi = b.upper[0];
    const svg = $("line");
    svg.replaceChildren();
    const w = +svg.getAttribute("width"), pad = 20;
    const all = values.concat([lo, hi]);
    const a = Math.min(...all), z = Math.max(...all);
    const x = (v) => pad + ((v - a) * (w - 2 * pad)) / (z - a || 1);
    svg.append(svgEl("rect", { x: x(lo), y: 20, width: Math.max(1, x(hi) - x(lo)), height: 30, fill: "#cde" }));
    svg.append(svgEl("line", { x1: pad, x2: w - pad, y1: 35, y2: 35, stroke: "#666" }));
    for (const v of values) svg.append(svgEl("circle", { cx: x(v), cy: 35, r: 3.5, fill: "#333" }));
    $("interval-info").className = "";
    $("interval-info").textContent =
      `[${lo.toFixed(4)}, ${hi.toFixed(4)}], worst-case probability ${b.certified_prob.toFixed(3)}`;
  } catch (e) {
    showError("interval-info", e);
  }
}

await init();
const box = $("q-sliders");
for (let i = 0; i < N_PV; i++) {
  const label = document.createElement("label");
  label.innerHTML = `PV ${i + 1} Q / headroom <input type="range" id="q${i}" min="-1" max="1" step="0.05" value="1"><span id="q${i}-v">1</span>`;
  box.append(label);
}
for (const el of document.querySelectorAll("#controls input")) {
  el.addEventListener("input", () => {
    const out = $(`${el.id}-v`);
    if (out && el.id.startsWith("q")) out.textContent = (+el.value).toFixed(2);
    refreshFlow();
  });
}
$("filter").addEventListener("click", runFilter);
$("interval").addEventListener("click", runInterval);
refreshFlow();
runInterval();
