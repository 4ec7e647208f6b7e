/** DOM rendering: the page is rebuilt from AppState on every event, so what
 * is on screen is exactly what the reducer holds. */

import type { AppState } from "./state";

export interface Handlers {
  onSnapshotPicked(id: string): void;
  onStart(): void;
  onDraftChanged(text: string): void;
  onSpeakerPicked(persona: string): void;
  onRespondAsPicked(persona: string): void;
  onSend(): void;
  onWhatIf(): void;
  onAdopt(persona: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function select(id: string, options: string[], value: string, onPick: (v: string) => void) {
  const node = el("select", { id });
  for (const opt of options) {
    const o = el("option", { value: opt }, opt);
    if (opt === value) o.selected = true;
    node.appendChild(o);
  }
  node.addEventListener("change", () => onPick(node.value));
  return node;
}

function bubbleList(state: AppState): HTMLElement {
  const box = el("div", { id: "transcript" });
  const turns = state.pending ? [...state.transcript, state.pending] : state.transcript;
  turns.forEach((turn, i) => {
    const pending = state.pending !== null && i === turns.length - 1;
    const bubble = el("div", {
      class: pending ? "bubble pending" : "bubble",
      "data-speaker": turn.speaker,
    });
    bubble.appendChild(el("span", { class: "tag" }, turn.speaker));
    bubble.appendChild(el("span", { class: "text" }, turn.text));
    box.appendChild(bubble);
  });
  return box;
}

function candidatePanel(state: AppState): HTMLElement {
  const panel = el("div", { id: "candidates" });
  panel.appendChild(el("h2", {}, "Ranked responses"));
  for (const cand of state.candidates) {
    const row = el("div", { class: "candidate-row" });
    row.appendChild(el("span", { class: "text" }, cand.text));
    row.appendChild(el("span", { class: "score" }, cand.score.toFixed(3)));
    panel.appendChild(row);
  }
  return panel;
}

function whatifGrid(state: AppState, handlers: Handlers): HTMLElement {
  const grid = el("div", { id: "whatif-grid" });
  for (const cell of state.whatif) {
    const node = el("div", { class: "whatif-cell", "data-persona": cell.persona });
    node.appendChild(el("span", { class: "tag" }, cell.persona));
    node.appendChild(el("span", { class: "text" }, cell.text));
    node.appendChild(el("span", { class: "score" }, cell.score.toFixed(3)));
    node.addEventListener("click", () => handlers.onAdopt(cell.persona));
    grid.appendChild(node);
  }
  return grid;
}

export function render(root: HTMLElement, state: AppState, handlers: Handlers): void {
  root.textContent = "";
  root.appendChild(el("h1", {}, "Persona explorer"));

  if (state.banner) {
    root.appendChild(el("div", { class: "banner" },
      `${state.banner.code}: ${state.banner.message}`));
  }

  if (state.sessionId === null) {
    const picker = el("div", { id: "launcher" });
    picker.appendChild(select("snapshot-pick", state.snapshots.map((s) => s.id),
      state.snapshotId ?? "", handlers.onSnapshotPicked));
    const start = el("button", { id: "start" }, "Start session");
    if (state.snapshotId === null || state.busy) start.disabled = true;
    start.addEventListener("click", () => handlers.onStart());
    picker.appendChild(start);
    root.appendChild(picker);
    return;
  }

  root.appendChild(bubbleList(state));

  const controls = el("div", { id: "controls" });
  controls.appendChild(el("label", { for: "speaker" }, "speak as"));
  controls.appendChild(select("speaker", state.personas, state.speaker,
    handlers.onSpeakerPicked));
  controls.appendChild(el("label", { for: "respond-as" }, "respond as"));
  controls.appendChild(select("respond-as", state.personas, state.respondAs,
    handlers.onRespondAsPicked));

  const draft = el("input", { id: "draft", type: "text", placeholder: "say something" });
  draft.value = state.draft;
  draft.addEventListener("input", () => handlers.onDraftChanged(draft.value));
  controls.appendChild(draft);

  const send = el("button", { id: "send" }, "Send");
  send.disabled = state.busy;
  send.addEventListener("click", () => handlers.onSend());
  controls.appendChild(send);

  const whatif = el("button", { id: "whatif" }, "What if?");
  whatif.disabled = state.busy;
  whatif.addEventListener("click", () => handlers.onWhatIf());
  controls.appendChild(whatif);

  root.appendChild(controls);
  root.appendChild(candidatePanel(state));
  root.appendChild(whatifGrid(state, handlers));
}
