/** Session state machine: queue paging, optimistic submission, progress. */

import { ApiClient, NetworkError, Progress, QueueItem } from "./api.js";

export interface Banner {
  tone: "error" | "info";
  text: string;
}

export interface SessionState {
  loading: boolean;
  items: QueueItem[];
  cursor: number;
  classes: string[];
  progress: Progress | null;
  progressAt: string | null;
  banner: Banner | null;
  inFlight: boolean;
  searchText: string;
}

type Listener = (state: SessionState) => void;

const PAGE_SIZE = 50;

export class SessionController {
  private state: SessionState = {
    loading: true,
    items: [],
    cursor: 0,
    classes: [],
    progress: null,
    progressAt: null,
    banner: null,
    inFlight: false,
    searchText: "",
  };
  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
    listener(this.state);
  }

  get snapshot(): SessionState {
    return this.state;
  }

  private patch(changes: Partial<SessionState>): void {
    this.state = { ...this.state, ...changes };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  get current(): QueueItem | null {
    return this.state.items[this.state.cursor] ?? null;
  }

  /** Class names matching the search box, best matches first. */
  searchMatches(limit = 8): { label: number; name: string }[] {
    const needle = this.state.searchText.trim().toLowerCase();
    const all = this.state.classes.map((name, label) => ({ label, name }));
    if (!needle) {
      return all.slice(0, limit);
    }
    const starts = all.filter((c) => c.name.toLowerCase().startsWith(needle));
    const contains = all.filter(
      (c) => !c.name.toLowerCase().startsWith(needle) && c.name.toLowerCase().includes(needle),
    );
    return [...starts, ...contains].slice(0, limit);
  }

  async load(): Promise<void> {
    this.patch({ loading: true, banner: null });
    try {
      const [classes, progress, page] = await Promise.all([
        this.api.classes(),
        this.api.progress(),
        this.api.queue(0, PAGE_SIZE),
      ]);
      this.patch({
        loading: false,
        classes,
        progress,
        progressAt: new Date().toISOString(),
        items: page.items,
        cursor: 0,
      });
    } catch (err) {
      // keep whatever state we had; the banner offers a retry
      this.patch({
        loading: false,
        banner: { tone: "error", text: `service unreachable (${err}); retry when back online` },
      });
    }
  }

  async refreshQueue(): Promise<void> {
    try {
      const page = await this.api.queue(0, PAGE_SIZE);
      const cursor = Math.min(this.state.cursor, Math.max(page.items.length - 1, 0));
      this.patch({ items: page.items, cursor });
    } catch {
      this.patch({ banner: { tone: "error", text: "queue refresh failed; showing last known items" } });
    }
  }

  async refreshProgress(): Promise<void> {
    try {
      const progress = await this.api.progress();
      this.patch({ progress, progressAt: new Date().toISOString() });
    } catch {
      // stale progress is tolerated; the timestamp shows its age
    }
  }

  moveCursor(delta: number): void {
    if (!this.state.items.length) {
      return;
    }
    const cursor = Math.min(Math.max(this.state.cursor + delta, 0), this.state.items.length - 1);
    this.patch({ cursor, banner: null });
  }

  setSearchText(text: string): void {
    this.patch({ searchText: text });
  }

  /**
   * Submit a label for the current item.  Optimistic: the item leaves the
   * local queue immediately on acknowledgment; a conflict refreshes the
   * queue instead (someone else resolved it differently).
   */
  async submit(label: number): Promise<void> {
    const item = this.current;
    if (!item || this.state.inFlight) {
      return; // double-click guard: one in-flight submission at a time
    }
    this.patch({ inFlight: true, banner: null });
    try {
      const outcome = await this.api.submit(item.sample_id, label);
      if (outcome.kind === "applied" || outcome.kind === "duplicate") {
        const items = this.state.items.filter((it) => it.sample_id !== item.sample_id);
        const cursor = Math.min(this.state.cursor, Math.max(items.length - 1, 0));
        this.patch({ items, cursor, searchText: "", inFlight: false });
        if (!items.length) {
          await this.refreshQueue(); // pull the next page, if any
        }
        await this.refreshProgress();
      } else if (outcome.kind === "conflict") {
        this.patch({
          inFlight: false,
          banner: { tone: "error", text: `already corrected elsewhere: ${outcome.detail}` },
        });
        await this.refreshQueue();
        await this.refreshProgress();
      } else {
        this.patch({
          inFlight: false,
          banner: { tone: "error", text: `rejected: ${outcome.detail}` },
        });
      }
    } catch (err) {
      const text =
        err instanceof NetworkError
          ? "submission did not reach the service; it is safe to retry"
          : `submission failed: ${err}`;
      this.patch({ inFlight: false, banner: { tone: "error", text } });
    }
  }
}
