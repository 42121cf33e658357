/** DOM view: queue browser, class picker, progress panel, shortcuts. */

import { QueueItem } from "./api.js";
import { SessionController, SessionState } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

function progressPanel(state: SessionState): HTMLElement {
  const p = state.progress;
  if (!p) {
    return el("div", { class: "progress" }, ["progress unavailable"]);
  }
  const done = p.total - p.pending;
  const pct = p.total ? Math.round((100 * done) / p.total) : 100;
  const bar = el("div", { class: "bar", role: "progressbar", "aria-valuenow": String(pct) });
  bar.style.width = `${pct}%`;
  return el("div", { class: "progress" }, [
    el("div", { class: "bar-track" }, [bar]),
    el("span", { class: "progress-counts" }, [
      `resolved ${p.resolved} / ${p.resolved + p.pending} queued`,
    ]),
    el("span", { class: "progress-cr" }, [
      `consistency rate ${p.consistency_rate.toFixed(4)}`,
    ]),
    el("span", { class: "progress-ts" }, [state.progressAt ? `as of ${state.progressAt}` : ""]),
  ]);
}

function itemCard(
  item: QueueItem,
  isCurrent: boolean,
  inFlight: boolean,
  controller: SessionController,
): HTMLElement {
  const suggestions = item.predictions.map((pred, idx) => {
    const button = el(
      "button",
      { class: "suggestion", "data-label": String(pred.label) },
      [`${idx + 1}. ${pred.class_name} (${pred.annotator})`],
    );
    button.disabled = !isCurrent || inFlight;
    button.addEventListener("click", () => void controller.submit(pred.label));
    return button;
  });
  const hint = item.meta["hint"] ?? item.meta["display"] ?? "";
  return el(
    "li",
    { class: `item${isCurrent ? " current" : ""}`, "data-sample": item.sample_id },
    [
      el("span", { class: "sample-id" }, [item.sample_id]),
      hint ? el("span", { class: "hint" }, [hint]) : "",
      el("div", { class: "suggestions" }, suggestions),
    ].filter((child): child is HTMLElement | string => child !== ""),
  );
}

function classPicker(state: SessionState, controller: SessionController): HTMLElement {
  const input = el("input", {
    class: "class-search",
    placeholder: "search classes (/ to focus, Enter submits top match)",
    value: state.searchText,
  });
  input.addEventListener("input", () => controller.setSearchText(input.value));
  input.addEventListener("keydown", (event) => {
    if (event.key === "Enter") {
      const top = controller.searchMatches(1)[0];
      if (top) {
        void controller.submit(top.label);
      }
      event.preventDefault();
    }
  });
  const matches = controller.searchMatches().map((match) => {
    const button = el("button", { class: "class-option", "data-label": String(match.label) }, [
      match.name,
    ]);
    button.disabled = state.inFlight || !state.items.length;
    button.addEventListener("click", () => void controller.submit(match.label));
    return button;
  });
  return el("div", { class: "picker" }, [input, el("div", { class: "class-options" }, matches)]);
}

export function render(root: HTMLElement, controller: SessionController): void {
  const state = controller.snapshot;
  root.textContent = "";
  if (state.banner) {
    const retry = el("button", { class: "retry" }, ["retry"]);
    retry.addEventListener("click", () => void controller.load());
    root.append(el("div", { class: `banner ${state.banner.tone}` }, [state.banner.text, retry]));
  }
  root.append(progressPanel(state));
  if (state.loading) {
    root.append(el("div", { class: "loading" }, ["loading queue..."]));
    return;
  }
  if (!state.items.length) {
    root.append(
      el("div", { class: "complete" }, [
        "session complete: every discrepancy sample has a corrected label",
      ]),
    );
    return;
  }
  const list = el(
    "ul",
    { class: "queue" },
    state.items.map((item, idx) => itemCard(item, idx === state.cursor, state.inFlight, controller)),
  );
  root.append(list);
  root.append(classPicker(state, controller));
}

export function bindKeyboard(controller: SessionController): (event: KeyboardEvent) => void {
  const handler = (event: KeyboardEvent) => {
    const target = event.target as HTMLElement | null;
    const typing = target?.tagName === "INPUT";
    if (event.key === "/" && !typing) {
      const box = document.querySelector<HTMLInputElement>(".class-search");
      box?.focus();
      event.preventDefault();
      return;
    }
    if (typing) {
      return;
    }
    if (event.key === "ArrowDown" || event.key === "j") {
      controller.moveCursor(1);
      event.preventDefault();
    } else if (event.key === "ArrowUp" || event.key === "k") {
      controller.moveCursor(-1);
      event.preventDefault();
    } else if (/^[1-9]$/.test(event.key)) {
      const idx = Number(event.key) - 1;
      const pred = controller.current?.predictions[idx];
      if (pred) {
        void controller.submit(pred.label);
        event.preventDefault();
      }
    }
  };
  window.addEventListener("keydown", handler);
  return handler;
}

export function mountApp(root: HTMLElement, controller: SessionController): void {
  controller.subscribe(() => render(root, controller));
  bindKeyboard(controller);
  void controller.load();
}
