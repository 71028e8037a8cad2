import { DecisionRequest, ViewCard } from "./types.js";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin client over the review service; `fetch` is injected so tests can
 * stub the network. */
export class ReviewApi {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async listViews(): Promise<ViewCard[]> {
    const resp = await this.fetchFn(`${this.base}/api/views`);
    if (!resp.ok) {
      throw new Error(`view list failed: HTTP ${resp.status}`);
    }
    return (await resp.json()) as ViewCard[];
  }

  frameUrl(viewId: string, frame: number, overlay: boolean): string {
    const kind = overlay ? "overlay" : "frames";
    return `${this.base}/api/views/${viewId}/${kind}/${frame}`;
  }

  /** POST a decision; resolves only on server acknowledgment, otherwise
   * throws with the server's error text verbatim. */
  async decide(viewId: string, request: DecisionRequest): Promise<void> {
    const resp = await this.fetchFn(`${this.base}/api/views/${viewId}/decision`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    let body: { ok?: boolean; error?: string } = {};
    try {
      body = await resp.json();
    } catch {
      // non-JSON error body; fall through to the status check
    }
    if (!resp.ok || !body.ok) {
      throw new Error(body.error ?? `decision failed: HTTP ${resp.status}`);
    }
  }
}
