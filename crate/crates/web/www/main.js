// Build with:
//   cargo build -p stapde-web --release --target wasm32-unknown-unknown
//   wasm-bindgen --target web --out-dir crates/web/www/pkg target/wasm32-unknown-unknown/release/stapde_web.wasm
import init, { Simulation, cayley_table, faraday_square, field_components } from "./pkg/stapde_web.js";

const $ = (id) => document.getElementById(id);

let sim = null;
let running = true;

function resetSimulation() {
  if (sim) sim.free();
  try {
    sim = new Simulation(+$("sim-size").value, +$("sim-sources").value, BigInt($("sim-seed").value), $("sim-algebra").value);
    $("sim-status").textContent = "";
  } catch (e) {
    sim = null;
    $("sim-status").textContent = String(e);
  }
}

function draw() {
  const n = sim.size();
  const map = sim.faraday_scalar();
  const canvas = $("sim-canvas");
  canvas.width = n;
  canvas.height = n;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(n, n);
  let peak = 1e-12;
  for (const v of map) peak = Math.max(peak, Math.abs(v));
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      // map is [x][y]; draw x to the right, y upward
      const v = map[i * n + j] / peak;
      const p = 4 * ((n - 1 - j) * n + i);
      const t = Math.sqrt(Math.abs(v));
      img.data[p] = v > 0 ? 255 : Math.round(255 * (1 - t));
      img.data[p + 1] = Math.round(255 * (1 - t));
      img.data[p + 2] = v < 0 ? 255 : Math.round(255 * (1 - t));
      img.data[p + 3] = 255;
    }
  }
  ctx.putImageData(img, 0, 0);
  $("sim-status").textContent = `step ${sim.steps()}, energy ${sim.energy().toExponential(3)}`;
}

function tick() {
  if (sim && running) {
    try {
      sim.step(2);
      draw();
    } catch (e) {
      running = false;
      $("sim-status").textContent = String(e);
    }
  }
  requestAnimationFrame(tick);
}

function showCayley() {
  const rows = cayley_table($("cayley-algebra").value).split("\n").map((r) => r.split("\t"));
  const table = document.createElement("table");
  rows.forEach((cells, r) => {
    const tr = table.insertRow();
    cells.forEach((text, c) => {
      const cell = document.createElement(r === 0 || c === 0 ? "th" : "td");
      cell.textContent = text;
      if (text.startsWith("-")) cell.className = "neg";
      tr.appendChild(cell);
    });
  });
  $("cayley-table").replaceChildren(table);
}

const FIELD_NAMES = { 3: ["Ex", "Ey", "Bz"], 6: ["Ex", "Ey", "Ez", "Bx", "By", "Bz"] };

function buildFieldInputs() {
  const names = FIELD_NAMES[field_components($("fs-algebra").value)];
  const inputs = names.map((name, k) => {
    const label = document.createElement("label");
    label.textContent = `${name} `;
    const input = document.createElement("input");
    input.type = "number";
    input.step = "0.1";
    input.value = k === 0 ? "1" : "0";
    input.addEventListener("input", showSquare);
    label.appendChild(input);
    return label;
  });
  $("fs-inputs").replaceChildren(...inputs);
  showSquare();
}

function showSquare() {
  const values = [...$("fs-inputs").querySelectorAll("input")].map((i) => +i.value);
  try {
    $("fs-output").textContent = faraday_square($("fs-algebra").value, new Float64Array(values));
  } catch (e) {
    $("fs-output").textContent = String(e);
  }
}

await init();
$("sim-reset").addEventListener("click", resetSimulation);
$("sim-toggle").addEventListener("click", () => {
  running = !running;
  $("sim-toggle").textContent = running ? "pause" : "run";
});
$("cayley-algebra").addEventListener("change", showCayley);
$("fs-algebra").addEventListener("change", buildFieldInputs);
resetSimulation();
showCayley();
buildFieldInputs();
requestAnimationFrame(tick);
