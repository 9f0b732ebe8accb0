import init, { systemView, heightSweep, invarianceProbe } from "./pkg/adslab_web_demo.js";

const SVG = "http://www.w3.org/2000/svg";
const TAG_COLOR = ["#8a8a8a", "#3b6fb6", "#d9822b"];
const VARIANT_COLOR = {
  Connected: "#c0392b",
  DisconnectedBaseline: "#2c7fb8",
  IndependentPooling: "#41ab5d",
  IndependentBackbones: "#8856a7",
  Attention: "#e6a100",
};

const $ = (id) => document.getElementById(id);
const params = () => [Number($("seed").value) >>> 0, Number($("atoms").value) >>> 0];

function el(name, attrs, parent) {
  const node = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  parent.appendChild(node);
  return node;
}

function scale(lo, hi, a, b) {
  const span = hi - lo || 1;
  return (v) => a + ((v - lo) / span) * (b - a);
}

function drawView() {
  const view = JSON.parse(systemView(...params()));
  const svg = $("view");
  svg.replaceChildren();
  const xs = view.atoms.map((a) => a.position[0]);
  const zs = view.atoms.map((a) => a.position[2]);
  const sx = scale(Math.min(...xs) - 1, Math.max(...xs) + 1, 20, 620);
  const sz = scale(Math.min(...zs) - 1, Math.max(...zs) + 1, 300, 20);
  const line = (e, color, dash) => {
    const [p, q] = [view.atoms[e[0]].position, view.atoms[e[1]].position];
    el("line", { x1: sx(p[0]), y1: sz(p[2]), x2: sx(q[0]), y2: sz(q[2]), stroke: color,
      "stroke-width": 1, "stroke-dasharray": dash, opacity: 0.6 }, svg);
  };
  view.intra_edges.forEach((e) => line(e, "#999", ""));
  if ($("show-cross").checked) view.cross_edges.forEach((e) => line(e, "#c0392b", "4 3"));
  const order = view.atoms.map((_, i) => i).sort((a, b) => view.atoms[a].position[1] - view.atoms[b].position[1]);
  for (const i of order) {
    const a = view.atoms[i];
    const circle = el("circle", { cx: sx(a.position[0]), cy: sz(a.position[2]), r: a.tag === 2 ? 6 : 9,
      fill: TAG_COLOR[a.tag], stroke: "#fff" }, svg);
    el("title", {}, circle).textContent = `atom ${i}, Z=${a.z}, tag ${a.tag}`;
  }
  $("edge-counts").textContent =
    `${view.intra_edges.length} intra-component edges, ${view.cross_edges.length} cross edges ` +
    `within ${view.cutoff} Å; attention links ${view.attention_pairs} pairs.`;
}

function drawSweep() {
  const [seed, atoms] = params();
  const sweep = JSON.parse(heightSweep(seed, atoms, Number($("from").value), Number($("to").value), 60));
  const svg = $("chart");
  svg.replaceChildren();
  // each curve relative to its own first point, so flat curves coincide at 0
  const curves = sweep.curves.map((c) => ({ variant: c.variant, delta: c.energy.map((e) => e - c.energy[0]) }));
  const all = curves.flatMap((c) => c.delta);
  const sx = scale(sweep.offsets[0], sweep.offsets.at(-1), 50, 620);
  const sy = scale(Math.min(...all), Math.max(...all), 290, 20);
  el("line", { x1: 50, y1: 290, x2: 620, y2: 290, stroke: "#444" }, svg);
  el("line", { x1: 50, y1: 20, x2: 50, y2: 290, stroke: "#444" }, svg);
  el("text", { x: 335, y: 314, "text-anchor": "middle", "font-size": 12 }, svg).textContent = "height offset (Å)";
  for (const c of curves) {
    const pts = c.delta.map((e, k) => `${sx(sweep.offsets[k])},${sy(e)}`).join(" ");
    el("polyline", { points: pts, fill: "none", stroke: VARIANT_COLOR[c.variant], "stroke-width": 2 }, svg);
  }
  el("text", { x: 46, y: sy(0) + 4, "text-anchor": "end", "font-size": 11 }, svg).textContent = "0";
  $("legend").innerHTML = curves
    .map((c) => `<span style="color:${VARIANT_COLOR[c.variant]}">■ ${c.variant}</span>`)
    .join("");
}

function drawProbe() {
  const rows = JSON.parse(invarianceProbe(...params()));
  const fmt = (v) => `<td class="${v > 1e-9 ? "bad" : ""}">${v.toExponential(1)}</td>`;
  $("probe-table").innerHTML =
    "<tr><th>variant</th><th>E</th><th>permute atoms</th><th>rotate + slide</th><th>move adsorbate only</th></tr>" +
    rows.map((r) => `<tr><td>${r.variant}</td><td>${r.energy.toFixed(4)}</td>` +
      fmt(r.permutation) + fmt(r.rigid) + fmt(r.adsorbate_only) + "</tr>").join("");
}

await init();
for (const id of ["seed", "atoms"]) $(id).addEventListener("change", () => { drawView(); drawSweep(); drawProbe(); });
$("show-cross").addEventListener("change", drawView);
$("sweep").addEventListener("click", drawSweep);
$("probe").addEventListener("click", drawProbe);
drawView();
drawSweep();
drawProbe();
