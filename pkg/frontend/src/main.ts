import { ServiceClient } from "./api";
import { createCanvasView } from "./canvas";
import { cssColor } from "./palette";
import { createConsole, type OverlayMode } from "./state";
import type { AcquisitionMethod, RefineMode } from "./types";

// Browser entry point: wires the store to the DOM. One session per page;
// the service base URL can be overridden with ?base=http://host:port.

const params = new URLSearchParams(window.location.search);
const client = new ServiceClient(params.get("base") ?? "http://127.0.0.1:8000");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot() {
  const status = el<HTMLElement>("status");
  status.textContent = "connecting…";

  const [images, checkpoints] = await Promise.all([
    client.listImages(), client.listCheckpoints()]);
  if (!images.length || !checkpoints.length) {
    status.textContent = "service has no fixture images or checkpoints";
    return;
  }
  const session = await client.createSession({
    checkpoint_id: checkpoints[0].checkpoint_id,
    image_id: images[0].image_id,
  });
  const console_ = createConsole(client, session);
  await console_.connect();

  // grayscale base from the first image channel is enough for the toy
  // fixture; real deployments would serve tiles
  const [height, width] = session.shape;
  const base = new ImageData(width, height);
  base.data.fill(110);
  for (let i = 3; i < base.data.length; i += 4) base.data[i] = 255;
  const view = createCanvasView(el<HTMLCanvasElement>("viewport"), base);

  const classBar = el<HTMLElement>("classes");
  for (let k = 0; k < session.class_count; k++) {
    const chip = document.createElement("button");
    chip.textContent = `class ${k}`;
    chip.addEventListener("click", () => {
      console_.setActiveClass(k);
      [...classBar.children].forEach(
        (c, i) => c.classList.toggle("active", i === k));
    });
    classBar.appendChild(chip);
  }
  classBar.children[0]?.classList.add("active");

  el<HTMLCanvasElement>("viewport").addEventListener("click", (event) => {
    const { row, col } = view.toImage(event as MouseEvent);
    console_.clickAt(row, col);
  });

  el<HTMLSelectElement>("overlay-mode").addEventListener("change", (event) => {
    void console_.setOverlayMode(
      (event.target as HTMLSelectElement).value as OverlayMode);
  });
  el<HTMLInputElement>("opacity").addEventListener("input", (event) => {
    console_.setOpacity(Number((event.target as HTMLInputElement).value) / 100);
  });
  el<HTMLInputElement>("heatmap").addEventListener("change", (event) => {
    console_.setUncertaintyStyle(
      (event.target as HTMLInputElement).checked ? "heatmap" : "top_decile");
  });
  el<HTMLSelectElement>("strategy").addEventListener("change", (event) => {
    void console_.setStrategy(
      (event.target as HTMLSelectElement).value as AcquisitionMethod);
  });
  el<HTMLButtonElement>("submit").addEventListener("click", () => {
    void console_.submit();
  });
  for (const mode of ["ac_only", "disca"] as RefineMode[]) {
    el<HTMLButtonElement>(`refine-${mode}`).addEventListener("click", () => {
      void console_.refine(mode);
    });
  }
  el<HTMLButtonElement>("undo").addEventListener("click", () => {
    void console_.undoLast();
  });

  const queueList = el<HTMLElement>("queue");
  console_.subscribe((state) => {
    status.textContent = state.hint
      ?? `session ${state.session.session_id} · ${state.session.clicks} clicks · `
        + `${state.session.refines} refines`;
    for (const id of ["submit", "refine-ac_only", "refine-disca", "undo"]) {
      el<HTMLButtonElement>(id).disabled = state.refineInFlight;
    }
    queueList.replaceChildren(...state.queue.map((entry, index) => {
      const item = document.createElement("li");
      item.textContent =
        `#${entry.rank} [${entry.window.join(", ")}] score ${entry.score.toFixed(4)}`;
      item.classList.toggle("annotated", entry.annotated);
      item.classList.toggle("selected", index === state.selectedPatch);
      if (!entry.annotated) {
        item.addEventListener("click", () => {
          console_.selectPatch(index);
          view.panToPatch(entry.window);
        });
      }
      queueList.appendChild(item);
      return item;
    }));
    document.body.style.setProperty(
      "--active-class-color",
      cssColor(state.palette[state.activeClass] ?? [255, 255, 255]));
    view.render(state, console_.overlay());
  });

  await console_.refreshQueue();
}

boot().catch((error) => {
  el<HTMLElement>("status").textContent = `failed to start: ${error}`;
  throw error;
});
