import init, { Scene } from "./pkg/gridpop_web.js";

const $ = (id) => document.getElementById(id);
let scene;
let picked = [0, 0];

function drawScene() {
  const c = $("scene");
  c.width = scene.width();
  c.height = scene.height();
  const ctx = c.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(scene.rgba()), scene.width(), scene.height()), 0, 0);

  const labels = scene.labels(parseFloat($("thr").value));
  const tw = c.width / scene.cols();
  const th = c.height / scene.rows();
  ctx.lineWidth = 2;
  labels.forEach((l, i) => {
    const r = Math.floor(i / scene.cols());
    const k = i % scene.cols();
    ctx.strokeStyle = l ? "rgba(255,220,0,.9)" : "rgba(255,255,255,.25)";
    ctx.strokeRect(k * tw + 1, r * th + 1, tw - 2, th - 2);
  });
  ctx.strokeStyle = "#f0f";
  ctx.strokeRect(picked[1] * tw + 3, picked[0] * th + 3, tw - 6, th - 6);
  $("res-out").value = `${labels.filter((l) => l).length} of ${labels.length}`;
}

function drawMask() {
  const ss = parseInt($("ss").value, 10);
  const side = parseInt($("side").value, 10);
  const [r, c] = picked;
  const rgba = scene.coverage_mask(r, c, side, ss);
  const tmp = new OffscreenCanvas(side, side);
  tmp.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), side, side), 0, 0);
  const ctx = $("mask").getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, 224, 224);
  const [got, exact] = scene.coverage_compare(r, c, side, ss);
  $("tile-out").value = `(${r}, ${c})`;
  $("raster-out").value = got.toFixed(5);
  $("exact-out").value = exact.toFixed(5);
  $("err-out").value = Math.abs(got - exact).toExponential(2);
}

function drawPopulation() {
  const total = Math.max(0, parseFloat($("total").value) || 0);
  const out = scene.population(total, parseInt($("factor").value, 10));
  const [rows, cols] = [out[0], out[1]];
  const table = $("pop");
  table.replaceChildren();
  for (let r = 0; r < rows; r++) {
    const tr = table.insertRow();
    for (let c = 0; c < cols; c++) tr.insertCell().textContent = out[2 + r * cols + c].toFixed(1);
  }
  $("sum-out").value = out.slice(2).reduce((a, b) => a + b, 0);
}

function syncOutputs() {
  for (const id of ["frac", "ss", "side", "thr", "factor"]) $(`${id}-out`).value = $(id).value;
}

function rebuild() {
  scene?.free();
  scene = new Scene(parseInt($("seed").value, 10) >>> 0, parseFloat($("frac").value));
  redraw();
}

function redraw() {
  syncOutputs();
  drawScene();
  drawMask();
  drawPopulation();
}

await init();
$("seed").addEventListener("change", rebuild);
$("frac").addEventListener("change", rebuild);
$("frac").addEventListener("input", syncOutputs);
for (const id of ["ss", "side", "thr", "factor", "total"]) $(id).addEventListener("input", redraw);
$("scene").addEventListener("click", (e) => {
  const rect = e.target.getBoundingClientRect();
  picked = [
    Math.min(scene.rows() - 1, Math.floor(((e.clientY - rect.top) / rect.height) * scene.rows())),
    Math.min(scene.cols() - 1, Math.floor(((e.clientX - rect.left) / rect.width) * scene.cols())),
  ];
  redraw();
});
rebuild();
