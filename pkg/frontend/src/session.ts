import { ViewCard } from "./types.js";

/** Ordered queue of undecided views.
 *
 * The server is the source of truth: the queue is rebuilt from the view
 * list on load/refresh, and a view only leaves it after the server
 * acknowledges a decision.
 */
export class ReviewSession {
  private queue: ViewCard[] = [];
  private index = 0;
  private all: ViewCard[] = [];

  load(views: ViewCard[]): void {
    this.all = views;
    const currentId = this.current()?.view_id;
    this.queue = views.filter((v) => v.decision === null);
    const kept = this.queue.findIndex((v) => v.view_id === currentId);
    this.index = kept >= 0 ? kept : Math.min(this.index, Math.max(this.queue.length - 1, 0));
  }

  views(): ViewCard[] {
    return this.all;
  }

  pending(): number {
    return this.queue.length;
  }

  current(): ViewCard | null {
    return this.queue[this.index] ?? null;
  }

  /** Remove the current view after a server-acknowledged decision and
   * move to the next undecided one. */
  completeCurrent(): ViewCard | null {
    if (this.queue.length === 0) {
      return null;
    }
    this.queue.splice(this.index, 1);
    if (this.index >= this.queue.length) {
      this.index = 0;
    }
    return this.current();
  }

  next(): ViewCard | null {
    if (this.queue.length === 0) {
      return null;
    }
    this.index = (this.index + 1) % this.queue.length;
    return this.current();
  }

  previous(): ViewCard | null {
    if (this.queue.length === 0) {
      return null;
    }
    this.index = (this.index - 1 + this.queue.length) % this.queue.length;
    return this.current();
  }

  select(viewId: string): ViewCard | null {
    const i = this.queue.findIndex((v) => v.view_id === viewId);
    if (i >= 0) {
      this.index = i;
    }
    return this.current();
  }
}
