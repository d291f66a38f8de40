// DOM rendering: one card at a time, progress bar, training interstitial,
// verification banner, completion and error views.

import type { ApiClient } from "./api";
import type { UiSessionState } from "./types";

export function progressPercent(labelsUsed: number, budget: number): number {
  if (budget <= 0) return 0;
  return Math.min(100, Math.round((labelsUsed / budget) * 100));
}

function el(tag: string, className: string, text = ""): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text) node.textContent = text;
  return node;
}

export function render(root: HTMLElement, state: UiSessionState, api: ApiClient): void {
  root.replaceChildren();

  if (state.error !== null) {
    const view = el("div", "view error-view");
    view.appendChild(el("h2", "", "Cannot open session"));
    view.appendChild(el("p", "error-message", state.error));
    root.appendChild(view);
    return;
  }

  const header = el("header", "topbar");
  const bar = el("div", "progress");
  const fill = el("div", "progress-fill");
  const pct = progressPercent(state.labelsUsed, state.budget);
  fill.style.width = `${pct}%`;
  bar.appendChild(fill);
  header.appendChild(bar);
  header.appendChild(
    el("span", "progress-text", `${state.labelsUsed}/${state.budget} labels (${pct}%)`),
  );
  header.appendChild(el("span", "iteration", `round ${state.iteration}`));
  if (state.unsynced > 0) {
    header.appendChild(el("span", "unsynced-badge", `${state.unsynced} unsynced`));
  }
  root.appendChild(header);

  if (state.phase === "verifying") {
    root.appendChild(
      el("div", "banner verify-banner",
         "Verification round: confirm or reject the machine's picks"),
    );
  }

  if (state.phase === "done") {
    const view = el("div", "view done-view");
    view.appendChild(el("h2", "", "All done"));
    view.appendChild(
      el("p", "curated-count", `${state.curatedCount} items in the curated set`),
    );
    root.appendChild(view);
    return;
  }

  const item = state.queue[0];
  if (item === undefined || state.training) {
    const view = el("div", "view training-view");
    view.appendChild(el("div", "spinner"));
    view.appendChild(el("p", "", "Training on your labels…"));
    root.appendChild(view);
    return;
  }

  const card = el("div", "card");
  const img = document.createElement("img");
  img.className = "card-image";
  img.src = api.imageUrl(item.item_id);
  img.alt = item.item_id;
  card.appendChild(img);
  card.appendChild(el("p", "item-id", item.item_id));
  root.appendChild(card);

  const hints = el("footer", "hints");
  hints.appendChild(el("span", "hint hint-left", "← not relevant"));
  hints.appendChild(el("span", "hint hint-undo", "U undo"));
  hints.appendChild(el("span", "hint hint-right", "relevant →"));
  root.appendChild(hints);
}
