import init, { gateTable, prrCurve, geometry } from "./pkg/mlcl_wasm.js";

const circle = document.getElementById("circle");
const ctx = circle.getContext("2d");
const prrCanvas = document.getElementById("prr");
const R = 160;
const C = 200;
const TAUS = Array.from({ length: 31 }, (_, i) => 10 ** (-1.7 + (2 * i) / 30));

const state = {
  angles: [0.1, 0.5, 1.7, 2.6, 3.5, 4.6],
  labels: [[0], [0, 1], [1], [0, 2], [2], [1, 2]],
  anchor: 0,
  dragging: null,
};

const $ = (id) => document.getElementById(id);
const tau = () => 10 ** Number($("tau").value);
const points = () => state.angles.map((a) => [Math.cos(a), Math.sin(a)]);
const fmt = (x, d = 3) => (x === null || x === undefined ? "n/a" : x.toFixed(d));

function toCanvas([x, y]) {
  return [C + R * x, C - R * y];
}

function renderLabels() {
  const box = $("labels");
  box.innerHTML = "";
  state.labels.forEach((row, i) => {
    const input = document.createElement("input");
    input.value = row.join(",");
    input.title = `labels of point ${i}`;
    input.addEventListener("change", () => {
      state.labels[i] = input.value
        .split(",")
        .map((s) => s.trim())
        .filter((s) => s !== "")
        .map(Number)
        .filter((n) => Number.isInteger(n) && n >= 0);
      update();
    });
    box.append(`${i}: `, input);
  });
}

function drawCircle(table) {
  ctx.clearRect(0, 0, circle.width, circle.height);
  ctx.strokeStyle = "#bbb";
  ctx.beginPath();
  ctx.arc(C, C, R, 0, 2 * Math.PI);
  ctx.stroke();
  const pts = points().map(toCanvas);
  if (table) {
    for (const g of table.gates.filter((g) => g.anchor === state.anchor)) {
      const [ax, ay] = pts[g.anchor];
      const [bx, by] = pts[g.candidate];
      ctx.strokeStyle = g.gate > 0 ? "#d33" : "#2a2";
      ctx.lineWidth = 1 + 4 * Math.abs(g.gate);
      ctx.beginPath();
      ctx.moveTo(ax, ay);
      ctx.lineTo(bx, by);
      ctx.stroke();
    }
  }
  ctx.lineWidth = 1;
  pts.forEach(([x, y], i) => {
    ctx.fillStyle = i === state.anchor ? "#1957c2" : "#555";
    ctx.beginPath();
    ctx.arc(x, y, i === state.anchor ? 9 : 7, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#000";
    ctx.fillText(`${i} {${state.labels[i].join(",")}}`, x + 10, y - 10);
  });
}

function drawPrr(curve) {
  const c = prrCanvas.getContext("2d");
  const { width: w, height: h } = prrCanvas;
  const pad = 32;
  c.clearRect(0, 0, w, h);
  c.strokeStyle = "#999";
  c.strokeRect(pad, 8, w - pad - 8, h - pad - 8);
  const lx = (t) => pad + ((Math.log10(t) + 1.7) / 2) * (w - pad - 8);
  const ly = (p) => 8 + (1 - p) * (h - pad - 8);
  c.fillStyle = "#000";
  c.fillText("1", 8, ly(1) + 4);
  c.fillText("0", 8, ly(0) + 4);
  for (const t of [0.05, 0.1, 0.5, 1]) c.fillText(String(t), lx(t) - 8, h - 10);
  c.strokeStyle = "#1957c2";
  c.beginPath();
  let started = false;
  for (const { tau: t, prr } of curve) {
    if (prr === null) continue;
    started ? c.lineTo(lx(t), ly(prr)) : c.moveTo(lx(t), ly(prr));
    started = true;
  }
  c.stroke();
  c.strokeStyle = "#d33";
  c.beginPath();
  c.moveTo(lx(tau()), 8);
  c.lineTo(lx(tau()), h - pad);
  c.stroke();
}

function update() {
  const loss = $("loss").value;
  const p = JSON.stringify(points());
  const l = JSON.stringify(state.labels);
  $("tauOut").textContent = fmt(tau());
  $("tauHead").textContent = fmt(tau());
  $("error").textContent = "";
  let table = null;
  try {
    table = JSON.parse(gateTable(p, l, loss, tau()));
    $("summary").textContent =
      `regularized loss ${fmt(table.loss, 4)}, regularizer ${fmt(table.reg, 4)}, PRR ${fmt(table.prr)}`;
    $("gates").innerHTML = table.gates
      .map(
        (g) => `<tr class="${g.gate > 0 ? "open" : ""}"><td>${g.anchor}</td><td>${g.candidate}</td>` +
          `<td>${fmt(g.lambda)}</td><td>${fmt(g.sigma)}</td><td>${fmt(g.gate)}</td>` +
          `<td>${fmt(g.plain)}</td><td>${fmt(g.regularized)}</td></tr>`,
      )
      .join("");
    drawPrr(JSON.parse(prrCurve(p, l, loss, JSON.stringify(TAUS))));
  } catch (e) {
    $("error").textContent = e.message ?? String(e);
    $("gates").innerHTML = "";
    $("summary").textContent = "";
  }
  try {
    const g = JSON.parse(geometry(p, l));
    $("geometry").textContent =
      `alignment ${fmt(g.align)} (exact label-set matches), uniformity ${fmt(g.uniform)}`;
  } catch (e) {
    $("geometry").textContent = e.message ?? String(e);
  }
  drawCircle(table);
}

function hit(ev) {
  const rect = circle.getBoundingClientRect();
  const x = ev.clientX - rect.left;
  const y = ev.clientY - rect.top;
  const pts = points().map(toCanvas);
  const i = pts.findIndex(([px, py]) => (px - x) ** 2 + (py - y) ** 2 < 144);
  return { i, x, y };
}

circle.addEventListener("mousedown", (ev) => {
  const { i } = hit(ev);
  if (i >= 0) {
    state.anchor = i;
    state.dragging = i;
    update();
  }
});
circle.addEventListener("mousemove", (ev) => {
  if (state.dragging === null) return;
  const { x, y } = hit(ev);
  state.angles[state.dragging] = Math.atan2(C - y, x - C);
  update();
});
window.addEventListener("mouseup", () => (state.dragging = null));
$("tau").addEventListener("input", update);
$("loss").addEventListener("change", update);
$("add").addEventListener("click", () => {
  state.angles.push(Math.random() * 2 * Math.PI);
  state.labels.push([0]);
  renderLabels();
  update();
});
$("remove").addEventListener("click", () => {
  if (state.angles.length <= 2) return;
  state.angles.pop();
  state.labels.pop();
  state.anchor = Math.min(state.anchor, state.angles.length - 1);
  renderLabels();
  update();
});

await init();
renderLabels();
update();
