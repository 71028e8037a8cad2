import { ReviewApi } from "./api.js";
import { FrameFlipper } from "./flipper.js";
import { ReviewSession } from "./session.js";
import { Verdict, ViewCard } from "./types.js";

const api = new ReviewApi();
const session = new ReviewSession();

const frameImg = document.getElementById("frame") as HTMLImageElement;
const slider = document.getElementById("slider") as HTMLInputElement;
const queueEl = document.getElementById("queue") as HTMLElement;
const titleEl = document.getElementById("view-title") as HTMLElement;
const flagsEl = document.getElementById("flags") as HTMLElement;
const statusEl = document.getElementById("status") as HTMLElement;
const reasonEl = document.getElementById("reason") as HTMLInputElement;
const reviewerEl = document.getElementById("reviewer") as HTMLInputElement;

const flipper = new FrameFlipper(1, (display) => {
  const view = session.current();
  if (!view) {
    frameImg.removeAttribute("src");
    return;
  }
  frameImg.src = api.frameUrl(view.view_id, display.frame, display.overlay);
  slider.value = String(flipper.currentFrame());
});

function setStatus(text: string, isError = false): void {
  statusEl.textContent = text;
  statusEl.className = isError ? "error" : "";
}

function renderQueue(): void {
  queueEl.replaceChildren(
    ...session.views().map((view) => {
      const li = document.createElement("li");
      li.className = `card ${view.status}`;
      if (view.view_id === session.current()?.view_id) {
        li.classList.add("current");
      }
      const thumb = document.createElement("img");
      thumb.src = view.thumbnail;
      thumb.loading = "lazy";
      const label = document.createElement("div");
      label.textContent = `${view.view_id} (${view.frame_count}) ${view.status}`;
      const flags = document.createElement("div");
      flags.className = "flags";
      flags.textContent = view.autoflags.join(" ");
      li.append(thumb, label, flags);
      li.onclick = () => {
        session.select(view.view_id);
        showCurrent();
      };
      return li;
    }),
  );
}

function showCurrent(): void {
  const view = session.current();
  renderQueue();
  if (!view) {
    titleEl.textContent = `nothing left to review (${session.views().length} views decided)`;
    flagsEl.textContent = "";
    frameImg.removeAttribute("src");
    return;
  }
  titleEl.textContent = `${view.view_id} — ${view.frame_count} frames, ${session.pending()} undecided`;
  flagsEl.textContent = view.autoflags.length ? `flags: ${view.autoflags.join(", ")}` : "";
  slider.max = String(view.frame_count - 1);
  flipper.reset(view.frame_count);
}

async function refresh(): Promise<void> {
  session.load(await api.listViews());
  showCurrent();
}

async function decide(verdict: Verdict): Promise<void> {
  const view = session.current();
  if (!view) {
    return;
  }
  setStatus(`${verdict} ${view.view_id}…`);
  try {
    await api.decide(view.view_id, {
      verdict,
      reason: reasonEl.value,
      reviewer: reviewerEl.value || "reviewer",
    });
  } catch (err) {
    setStatus(String(err), true);
    return; // not acknowledged: stay on the view
  }
  setStatus(`${view.view_id} ${verdict}`);
  reasonEl.value = "";
  session.load(await api.listViews());
  showCurrent();
}

const KEYS: Record<string, () => void> = {
  a: () => void decide("accepted"),
  r: () => void decide("rejected"),
  b: () => flipper.toggleBlink(),
  o: () => flipper.toggleOverlay(),
  ArrowRight: () => flipper.step(1),
  ArrowLeft: () => flipper.step(-1),
  n: () => {
    session.next();
    showCurrent();
  },
  p: () => {
    session.previous();
    showCurrent();
  },
};

document.addEventListener("keydown", (ev) => {
  if (ev.target instanceof HTMLInputElement) {
    return;
  }
  const action = KEYS[ev.key];
  if (action) {
    ev.preventDefault();
    action();
  }
});

slider.addEventListener("input", () => flipper.setFrame(Number(slider.value)));
(document.getElementById("accept") as HTMLButtonElement).onclick = () =>
  void decide("accepted");
(document.getElementById("reject") as HTMLButtonElement).onclick = () =>
  void decide("rejected");
(document.getElementById("blink") as HTMLButtonElement).onclick = () =>
  flipper.toggleBlink();
(document.getElementById("overlay") as HTMLButtonElement).onclick = () =>
  flipper.toggleOverlay();
(document.getElementById("reload") as HTMLButtonElement).onclick = () =>
  void refresh();

refresh().catch((err) => setStatus(String(err), true));
