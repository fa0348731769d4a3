import init, { task_names, describe_task, run_trial, rank_tools, eval_expression } from "./pkg/taskrep_demo.js";

const $ = (id) => document.getElementById(id);
const call = (f, ...args) => JSON.parse(f(...args));
const colors = { block: "#c44", plush: "#b8860b", drawer: "#777", pen: "#36c", holder: "#555", pad: "#cda" };

function fit(ws, canvas) {
  const [x0, y0, x1, y1] = ws;
  const pad = 20;
  const s = Math.min((canvas.width - 2 * pad) / (x1 - x0), (canvas.height - 2 * pad) / (y1 - y0));
  return (x, y) => [pad + (x - x0) * s, canvas.height - pad - (y - y0) * s, s];
}

function drawObjects(ctx, map, objects, ghost) {
  for (const o of objects) {
    const [cx, cy, s] = map(o.x, o.y);
    ctx.save();
    ctx.translate(cx, cy);
    ctx.rotate(-o.yaw);
    ctx.globalAlpha = ghost ? 0.25 : 0.85;
    ctx.fillStyle = colors[o.class] || "#888";
    ctx.fillRect(-o.hx * s, -o.hy * s, 2 * o.hx * s, 2 * o.hy * s);
    ctx.restore();
    if (!ghost) {
      ctx.fillStyle = "#000";
      ctx.fillText(o.state ? `${o.id} (${o.state})` : o.id, cx + o.hx * s + 3, cy - 3);
    }
  }
}

function draw(initial, final, path) {
  const canvas = $("view");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const map = fit(initial.workspace, canvas);
  const [ax, ay] = map(initial.workspace[0], initial.workspace[1]);
  const [bx, by] = map(initial.workspace[2], initial.workspace[3]);
  ctx.strokeStyle = "#ddd";
  ctx.strokeRect(ax, by, bx - ax, ay - by);
  drawObjects(ctx, map, initial.objects, true);
  drawObjects(ctx, map, final.objects, false);
  ctx.lineWidth = 2;
  for (let i = 1; i < path.length; i++) {
    const [x0, y0] = map(path[i - 1][0], path[i - 1][1]);
    const [x1, y1] = map(path[i][0], path[i][1]);
    ctx.strokeStyle = path[i][3] ? "#2a2" : "#99c";
    ctx.beginPath();
    ctx.moveTo(x0, y0);
    ctx.lineTo(x1, y1);
    ctx.stroke();
  }
  const [ex, ey] = map(initial.ee[0], initial.ee[1]);
  ctx.fillStyle = "#000";
  ctx.beginPath();
  ctx.arc(ex, ey, 4, 0, 2 * Math.PI);
  ctx.fill();
}

function table(head, rows, cls = () => "") {
  const h = head.map((c) => `<th>${c}</th>`).join("");
  const b = rows.map((r, i) => `<tr class="${cls(i)}">${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${h}</tr>${b}</table>`;
}

function showTask() {
  const d = call(describe_task, $("task").value);
  if (d.error) return;
  $("instruction").textContent = d.instruction;
}

function runTrial() {
  const out = call(run_trial, $("task").value, $("mode").value, $("profile").value, Number($("seed").value));
  if (out.error) {
    $("outcome").textContent = out.error;
    return;
  }
  draw(out.initial, out.final, out.path);
  const r = out.result;
  $("log").innerHTML = table(
    ["stage", "t (s)", "module", "event", "message"],
    r.log.map((e) => [e.stage, e.t.toFixed(2), e.module, e.event, e.message]),
    (i) => (r.log[i].ok ? "" : "fail"),
  );
  $("outcome").textContent = r.success
    ? `success in ${r.time_s.toFixed(2)} s simulated (${r.extraction_time_s.toFixed(2)} s extracting, ${r.track_ticks} tracking ticks)`
    : `failure: ${r.failure} at stage ${r.failure_stage}: ${r.message}`;
}

function rank() {
  const out = call(rank_tools, $("class").value, $("req").value, $("rank-mode").value);
  if (out.error) {
    $("ranking").textContent = out.error;
    return;
  }
  const rows = [...out.table].sort((a, b) => b.utility - a.utility || a.avg_time_s - b.avg_time_s);
  $("ranking").innerHTML =
    `<p>utility = p − ${out.lambda} · time; selected <b>${out.selected}</b></p>` +
    table(
      ["tool", "p", "time (s)", "utility"],
      rows.map((t) => [t.tool, t.p_succ.toFixed(3), t.avg_time_s.toFixed(1), t.utility.toFixed(3)]),
      (i) => (rows[i].tool === out.selected ? "best" : ""),
    );
}

function evaluate() {
  const out = call(eval_expression, $("task").value, Number($("seed").value), $("expr").value);
  $("value").textContent = out.error ? out.error : `value = ${out.value.toPrecision(6)}`;
  if (!out.error) draw(out.scene, out.scene, []);
}

await init();
for (const name of call(task_names)) $("task").add(new Option(name));
$("task").onchange = () => { showTask(); runTrial(); };
$("run").onclick = runTrial;
$("next").onclick = () => { $("seed").value = Number($("seed").value) + 1; runTrial(); };
$("rank").onclick = rank;
$("eval").onclick = evaluate;
$("status").textContent = "";
showTask();
runTrial();
rank();
