/** Entry point: wire the controller to the page for ?session=<id>. */

import { ApiClient } from "./api.js";
import { SessionController } from "./state.js";
import { mountApp } from "./ui.js";

function sessionIdFromUrl(): string | null {
  return new URLSearchParams(window.location.search).get("session");
}

async function pickSession(base: string): Promise<string | null> {
  const explicit = sessionIdFromUrl();
  if (explicit) {
    return explicit;
  }
  try {
    const resp = await fetch(`${base}/api/sessions`);
    const sessions = (await resp.json()) as { session_id: string; complete: boolean }[];
    const open = sessions.find((s) => !s.complete) ?? sessions[0];
    return open?.session_id ?? null;
  } catch {
    return null;
  }
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) {
    return;
  }
  const base = "";
  const sessionId = await pickSession(base);
  if (!sessionId) {
    root.textContent = "no correction session found; start one with: hclpipe serve --journal <run>";
    return;
  }
  const controller = new SessionController(new ApiClient(base, sessionId));
  mountApp(root, controller);
  window.setInterval(() => void controller.refreshProgress(), 5000);
}

void boot();
