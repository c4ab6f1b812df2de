import init, { solveDesign, tradeoffCurve, kldCurve } from "./pkg/isac_pcrb_web.js";

const status = document.getElementById("status");
const canvas = document.getElementById("plot");

function scenario() {
  const out = {};
  for (const input of document.querySelectorAll("#scenario input")) {
    out[input.name] = Number(input.value);
  }
  return out;
}

function say(text, isError = false) {
  status.textContent = text;
  status.className = isError ? "error" : "";
}

// Line plot of [x, y] pairs; gaps (null y) break the line.
function plot(points, xLabel, yLabel, logY = false) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  const pad = 50;
  ctx.clearRect(0, 0, width, height);
  const ys = points.map(([, y]) => y).filter((y) => y !== null).map((y) => (logY ? Math.log10(y) : y));
  if (ys.length === 0) return;
  const xs = points.map(([x]) => x);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (width - 2 * pad);
  const sy = (y) => height - pad - ((y - y0) / (y1 - y0)) * (height - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, width - 2 * pad, height - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.font = "12px sans-serif";
  ctx.fillText(xLabel, width / 2 - 30, height - 12);
  ctx.fillText(yLabel + (logY ? " (log10)" : ""), 4, pad - 10);
  ctx.fillText(x0.toPrecision(3), pad, height - pad + 15);
  ctx.fillText(x1.toPrecision(3), width - pad - 30, height - pad + 15);
  ctx.fillText(y1.toPrecision(3), 4, pad + 4);
  ctx.fillText(y0.toPrecision(3), 4, height - pad);

  ctx.strokeStyle = "#1565c0";
  ctx.lineWidth = 2;
  ctx.beginPath();
  let drawing = false;
  for (const [x, y] of points) {
    if (y === null) { drawing = false; continue; }
    const py = sy(logY ? Math.log10(y) : y);
    if (drawing) ctx.lineTo(sx(x), py); else ctx.moveTo(sx(x), py);
    drawing = true;
  }
  ctx.stroke();
}

// Lets the status line repaint before a blocking solve.
function run(label, work) {
  say(label + "...");
  setTimeout(() => {
    const t0 = performance.now();
    try {
      const note = work();
      say(`${note} (${((performance.now() - t0) / 1000).toFixed(1)} s)`);
    } catch (e) {
      say(String(e), true);
    }
  }, 20);
}

document.getElementById("solve").onclick = () =>
  run("Solving", () => {
    const d = JSON.parse(solveDesign(JSON.stringify(scenario())));
    plot(d.beampattern, "angle (rad)", "transmit gain");
    return `${d.case}: PCRB ${d.pcrb.toExponential(3)}, rate ${d.rate.toFixed(3)} bps/Hz, rank ${d.rank}`;
  });

document.getElementById("tradeoff").onclick = () =>
  run("Sweeping rate targets", () => {
    const values = [2, 4, 6, 8, 10, 12, 14];
    const pts = JSON.parse(tradeoffCurve(JSON.stringify({ scenario: scenario(), values })));
    plot(pts.map((p) => [p.x, p.pcrb]), "rate target (bps/Hz)", "PCRB", true);
    const missing = pts.filter((p) => p.pcrb === null).map((p) => p.x);
    return missing.length ? `infeasible at ${missing.join(", ")}` : "all targets feasible";
  });

document.getElementById("kld").onclick = () =>
  run("Sliding the target prior", () => {
    const values = [-0.3, -0.4, -0.5, -0.6, -0.7];
    const pts = JSON.parse(kldCurve(JSON.stringify({ scenario: scenario(), values })));
    plot(pts.map((p) => [p.x, p.pcrb]), "KLD(user || target)", "PCRB", true);
    return `${pts.length} target means`;
  });

await init();
say("Ready.");
