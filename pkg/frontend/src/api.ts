/** Typed client for the correction-service HTTP API. */

export interface PredictionView {
  annotator: string;
  label: number;
  class_name: string;
}

export interface QueueItem {
  sample_id: string;
  position: number;
  predictions: PredictionView[];
  meta: Record<string, string>;
}

export interface QueuePage {
  items: QueueItem[];
  total_pending: number;
  offset: number;
}

export interface Progress {
  pending: number;
  resolved: number;
  total: number;
  consistency_rate: number;
  complete: boolean;
}

export type SubmitOutcome =
  | { kind: "applied" }
  | { kind: "duplicate" }
  | { kind: "conflict"; detail: string }
  | { kind: "rejected"; detail: string };

export class NetworkError extends Error {}

async function getJson<T>(url: string): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url);
  } catch (err) {
    throw new NetworkError(String(err));
  }
  if (!resp.ok) {
    throw new Error(`GET ${url} failed: ${resp.status}`);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(
    private readonly base: string,
    readonly sessionId: string,
  ) {}

  private url(path: string): string {
    return `${this.base}/api/sessions/${encodeURIComponent(this.sessionId)}${path}`;
  }

  queue(offset = 0, limit = 50): Promise<QueuePage> {
    return getJson<QueuePage>(this.url(`/queue?offset=${offset}&limit=${limit}`));
  }

  progress(): Promise<Progress> {
    return getJson<Progress>(this.url(`/progress`));
  }

  classes(): Promise<string[]> {
    return getJson<string[]>(this.url(`/classes`));
  }

  /**
   * Submit one correction.  The call is idempotent server-side, so a lost
   * response is retried once with the identical body before giving up.
   */
  async submit(sampleId: string, label: number): Promise<SubmitOutcome> {
    const body = JSON.stringify({ sample_id: sampleId, label });
    const attempt = () =>
      fetch(this.url(`/corrections`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body,
      });
    let resp: Response;
    try {
      resp = await attempt();
    } catch {
      try {
        resp = await attempt(); // idempotent retry
      } catch (err) {
        throw new NetworkError(String(err));
      }
    }
    if (resp.status === 200) {
      const payload = (await resp.json()) as { status: string };
      return payload.status === "duplicate" ? { kind: "duplicate" } : { kind: "applied" };
    }
    const detail = await resp
      .json()
      .then((d: { detail?: string }) => d.detail ?? `status ${resp.status}`)
      .catch(() => `status ${resp.status}`);
    if (resp.status === 409) {
      return { kind: "conflict", detail };
    }
    return { kind: "rejected", detail };
  }
}
